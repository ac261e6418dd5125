#include "detangle/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "detangle/errors.hpp"

namespace detangle {

void ThreadPartition::canonicalize() {
  for (auto& c : clusters) std::sort(c.begin(), c.end());
  std::sort(clusters.begin(), clusters.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
}

int ThreadPartition::element_count() const {
  int n = 0;
  for (const auto& c : clusters) n += static_cast<int>(c.size());
  return n;
}

void ThreadPartition::validate(int n_utterances) const {
  std::vector<char> seen(static_cast<size_t>(n_utterances), 0);
  int total = 0;
  for (const auto& c : clusters) {
    if (c.empty()) throw IntegrityError("partition contains an empty cluster");
    for (int id : c) {
      if (id < 0 || id >= n_utterances)
        throw IntegrityError("partition element " + std::to_string(id) + " out of range");
      if (seen[static_cast<size_t>(id)])
        throw IntegrityError("partition element " + std::to_string(id) + " appears twice");
      seen[static_cast<size_t>(id)] = 1;
      ++total;
    }
  }
  if (total != n_utterances)
    throw IntegrityError("partition covers " + std::to_string(total) + " of " +
                         std::to_string(n_utterances) + " utterances");
}

void validate_dialogue(const Dialogue& d) {
  const int n = d.size();
  for (int i = 0; i < n; ++i) {
    const Utterance& u = d.utterances[static_cast<size_t>(i)];
    if (u.id != i)
      throw IntegrityError("utterance ids must be dense 0..n-1 in order; found id " +
                           std::to_string(u.id) + " at position " + std::to_string(i));
    if (u.tokens.empty())
      throw IntegrityError("utterance " + std::to_string(u.id) + " has no tokens");
    for (int t : u.tokens)
      if (t < 0) throw IntegrityError("negative token id in utterance " + std::to_string(u.id));
  }
  if (d.gold_links) {
    for (const ReplyLink& l : *d.gold_links) {
      if (l.child < 0 || l.child >= n || l.parent < 0 || l.parent >= n)
        throw IntegrityError("link (" + std::to_string(l.child) + "," +
                             std::to_string(l.parent) + ") references a nonexistent utterance");
      if (l.parent > l.child)
        throw IntegrityError("link (" + std::to_string(l.child) + "," +
                             std::to_string(l.parent) + ") points forward");
    }
  }
}

namespace {

int parse_int(std::string_view s, int line_no, const std::string& what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " '" +
                     std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  size_t start = 0;
  while (true) {
    const size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

struct RawDialogue {
  // (file id, speaker, tokens) in file order plus raw links; first_line for
  // error messages.
  std::vector<Utterance> utterances;
  std::vector<ReplyLink> links;
  bool has_link_block = false;
  int first_line = 0;
};

Dialogue finalize_dialogue(RawDialogue raw, const std::string& path) {
  // Detect sparse or out-of-order ids; renumber by file order when needed.
  bool dense = true;
  for (size_t i = 0; i < raw.utterances.size(); ++i)
    if (raw.utterances[i].id != static_cast<int>(i)) dense = false;

  std::map<int, int> remap;
  for (size_t i = 0; i < raw.utterances.size(); ++i) {
    const int file_id = raw.utterances[i].id;
    if (remap.count(file_id))
      throw IntegrityError(path + ": duplicate utterance id " + std::to_string(file_id) +
                           " in dialogue starting at line " + std::to_string(raw.first_line));
    remap[file_id] = static_cast<int>(i);
  }
  if (!dense) {
    std::cerr << "warning: " << path << ": dialogue at line " << raw.first_line
              << " has sparse utterance ids; renumbering 0.." << raw.utterances.size() - 1
              << " in file order\n";
    for (size_t i = 0; i < raw.utterances.size(); ++i)
      raw.utterances[i].id = static_cast<int>(i);
    for (ReplyLink& l : raw.links) {
      const auto c = remap.find(l.child);
      const auto p = remap.find(l.parent);
      if (c == remap.end() || p == remap.end())
        throw IntegrityError(path + ": link (" + std::to_string(l.child) + "," +
                             std::to_string(l.parent) + ") references a nonexistent utterance");
      l.child = c->second;
      l.parent = p->second;
    }
  }

  Dialogue d;
  d.utterances = std::move(raw.utterances);
  if (raw.has_link_block) d.gold_links = std::move(raw.links);
  try {
    validate_dialogue(d);
  } catch (const IntegrityError& e) {
    throw IntegrityError(path + ": dialogue starting at line " + std::to_string(raw.first_line) +
                         ": " + e.what());
  }
  return d;
}

}  // namespace

std::vector<Dialogue> load_dialogues(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);

  std::vector<Dialogue> out;
  RawDialogue cur;
  bool in_dialogue = false;
  std::string line;
  int line_no = 0;

  auto flush = [&] {
    if (in_dialogue) {
      out.push_back(finalize_dialogue(std::move(cur), path));
      cur = RawDialogue{};
      in_dialogue = false;
    }
  };

  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.rfind("L ", 0) == 0) {
      if (!in_dialogue)
        throw ParseError(path + ": line " + std::to_string(line_no) +
                         ": link line outside a dialogue");
      const auto parts = split(std::string_view(line).substr(2), ' ');
      if (parts.size() != 2)
        throw ParseError(path + ": line " + std::to_string(line_no) +
                         ": link line needs '<child> <parent>'");
      cur.links.push_back({parse_int(parts[0], line_no, "link child"),
                           parse_int(parts[1], line_no, "link parent")});
      cur.has_link_block = true;
      continue;
    }
    const auto fields = split(line, '\t');
    if (fields.size() != 3)
      throw ParseError(path + ": line " + std::to_string(line_no) +
                       ": expected '<id>\\t<speaker>\\t<tokens>' (got " +
                       std::to_string(fields.size()) + " fields)");
    if (cur.has_link_block)
      throw ParseError(path + ": line " + std::to_string(line_no) +
                       ": utterance after link block; separate dialogues with a blank line");
    Utterance u;
    u.id = parse_int(fields[0], line_no, "utterance id");
    u.speaker = std::string(fields[1]);
    if (u.speaker.empty())
      throw ParseError(path + ": line " + std::to_string(line_no) + ": empty speaker");
    for (const auto tok : split(fields[2], ' ')) {
      if (tok.empty()) continue;  // tolerate repeated spaces
      u.tokens.push_back(parse_int(tok, line_no, "token id"));
    }
    if (u.tokens.empty())
      throw ParseError(path + ": line " + std::to_string(line_no) + ": utterance has no tokens");
    if (!in_dialogue) {
      cur.first_line = line_no;
      in_dialogue = true;
    }
    cur.utterances.push_back(std::move(u));
  }
  flush();
  return out;
}

void save_dialogues(std::span<const Dialogue> dialogues, const std::string& path) {
  for (const Dialogue& d : dialogues) validate_dialogue(d);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  bool first = true;
  for (const Dialogue& d : dialogues) {
    if (!first) os << '\n';
    first = false;
    for (const Utterance& u : d.utterances) {
      os << u.id << '\t' << u.speaker << '\t';
      for (size_t i = 0; i < u.tokens.size(); ++i) {
        if (i) os << ' ';
        os << u.tokens[i];
      }
      os << '\n';
    }
    if (d.gold_links) {
      std::vector<ReplyLink> links = *d.gold_links;
      std::sort(links.begin(), links.end(), [](const ReplyLink& a, const ReplyLink& b) {
        return a.child != b.child ? a.child < b.child : a.parent < b.parent;
      });
      for (const ReplyLink& l : links) os << "L " << l.child << ' ' << l.parent << '\n';
    }
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

namespace {
void write_link_block(std::ofstream& os, std::vector<ReplyLink> links) {
  for (const ReplyLink& l : links)
    if (l.parent > l.child)
      throw IntegrityError("link (" + std::to_string(l.child) + "," +
                           std::to_string(l.parent) + ") points forward");
  std::sort(links.begin(), links.end(), [](const ReplyLink& a, const ReplyLink& b) {
    return a.child != b.child ? a.child < b.child : a.parent < b.parent;
  });
  for (const ReplyLink& l : links) os << l.child << ' ' << l.parent << '\n';
}
}  // namespace

void save_links(std::vector<ReplyLink> links, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_link_block(os, std::move(links));
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

std::vector<ReplyLink> load_links(const std::string& path) {
  auto blocks = load_corpus_links(path);
  std::vector<ReplyLink> out;
  for (auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
  return out;
}

void save_corpus_links(std::span<const std::vector<ReplyLink>> per_dialogue,
                       const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  bool first = true;
  for (const auto& links : per_dialogue) {
    if (!first) os << '\n';
    first = false;
    write_link_block(os, links);
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

std::vector<std::vector<ReplyLink>> load_corpus_links(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<std::vector<ReplyLink>> out;
  std::vector<ReplyLink> cur;
  bool in_block = false;
  std::string line;
  int line_no = 0;
  auto flush = [&] {
    if (in_block) {
      out.push_back(std::move(cur));
      cur.clear();
      in_block = false;
    }
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    const auto parts = split(line, ' ');
    if (parts.size() != 2)
      throw ParseError(path + ": line " + std::to_string(line_no) +
                       ": expected '<child> <parent>'");
    cur.push_back({parse_int(parts[0], line_no, "link child"),
                   parse_int(parts[1], line_no, "link parent")});
    in_block = true;
  }
  flush();
  return out;
}

void save_partition(const ThreadPartition& p, const std::string& path) {
  ThreadPartition canon = p;
  canon.canonicalize();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (const auto& c : canon.clusters) {
    for (size_t i = 0; i < c.size(); ++i) {
      if (i) os << ' ';
      os << c[i];
    }
    os << '\n';
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

ThreadPartition load_partition(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  ThreadPartition p;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<int> cluster;
    for (const auto tok : split(line, ' ')) {
      if (tok.empty()) continue;
      cluster.push_back(parse_int(tok, line_no, "utterance id"));
    }
    if (!cluster.empty()) p.clusters.push_back(std::move(cluster));
  }
  p.canonicalize();
  return p;
}

namespace {

// Union-find with path halving and union by size.
class DisjointSets {
 public:
  explicit DisjointSets(int n) : parent_(static_cast<size_t>(n)), size_(static_cast<size_t>(n), 1) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }

  int find(int x) {
    while (parent_[static_cast<size_t>(x)] != x) {
      parent_[static_cast<size_t>(x)] = parent_[static_cast<size_t>(parent_[static_cast<size_t>(x)])];
      x = parent_[static_cast<size_t>(x)];
    }
    return x;
  }

  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[static_cast<size_t>(a)] < size_[static_cast<size_t>(b)]) std::swap(a, b);
    parent_[static_cast<size_t>(b)] = a;
    size_[static_cast<size_t>(a)] += size_[static_cast<size_t>(b)];
  }

 private:
  std::vector<int> parent_;
  std::vector<int> size_;
};

}  // namespace

ThreadPartition partition_from_links(std::span<const ReplyLink> links, int n_utterances) {
  if (n_utterances < 0) throw IntegrityError("negative utterance count");
  std::vector<char> has_link(static_cast<size_t>(n_utterances), 0);
  DisjointSets ds(n_utterances);
  for (const ReplyLink& l : links) {
    if (l.child < 0 || l.child >= n_utterances || l.parent < 0 || l.parent >= n_utterances)
      throw IntegrityError("link (" + std::to_string(l.child) + "," + std::to_string(l.parent) +
                           ") out of range for " + std::to_string(n_utterances) + " utterances");
    if (l.parent > l.child)
      throw IntegrityError("link (" + std::to_string(l.child) + "," + std::to_string(l.parent) +
                           ") points forward");
    has_link[static_cast<size_t>(l.child)] = 1;
    if (l.parent != l.child) ds.unite(l.child, l.parent);
  }
  std::string missing;
  for (int i = 0; i < n_utterances; ++i)
    if (!has_link[static_cast<size_t>(i)]) missing += (missing.empty() ? "" : " ") + std::to_string(i);
  if (!missing.empty()) throw DataError("utterances with no link: " + missing);

  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n_utterances; ++i) groups[ds.find(i)].push_back(i);
  ThreadPartition p;
  for (auto& [root, members] : groups) p.clusters.push_back(std::move(members));
  p.canonicalize();
  return p;
}

}  // namespace detangle
