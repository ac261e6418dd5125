#include "detangle/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "detangle/errors.hpp"

namespace detangle {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'N', 'S'};

template <class T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint: " + path);
  return v;
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Matrix*>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kCheckpointVersion);
  write_pod<uint64_t>(os, tensors.size());
  for (const auto& [name, m] : tensors) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint64_t>(os, static_cast<uint64_t>(m->rows));
    write_pod<uint64_t>(os, static_cast<uint64_t>(m->cols));
    os.write(reinterpret_cast<const char*>(m->data.data()),
             static_cast<std::streamsize>(m->data.size() * sizeof(double)));
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

std::map<std::string, Matrix> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("not a tensor checkpoint: " + path);
  const auto version = read_pod<uint32_t>(is, path);
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  const auto count = read_pod<uint64_t>(is, path);
  std::map<std::string, Matrix> out;
  for (uint64_t t = 0; t < count; ++t) {
    const auto name_len = read_pod<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("truncated checkpoint: " + path);
    const auto rows = read_pod<uint64_t>(is, path);
    const auto cols = read_pod<uint64_t>(is, path);
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    is.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint: " + path);
    if (out.count(name)) throw ParseError("duplicate tensor name '" + name + "': " + path);
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace detangle
