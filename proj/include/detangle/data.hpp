#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace detangle {

// One chat message. Token ids are vocabulary indices; text never appears at
// this layer. Within a dialogue, ids are 0..len-1 in chronological order.
struct Utterance {
  int id = 0;
  std::string speaker;
  std::vector<int> tokens;

  bool operator==(const Utterance&) const = default;
};

// child replies to parent; parent == child marks a thread start.
// Invariant: parent <= child (links point backward or to self).
struct ReplyLink {
  int child = 0;
  int parent = 0;

  bool operator==(const ReplyLink&) const = default;
};

struct Dialogue {
  std::vector<Utterance> utterances;
  // Absent when the source file carries no annotation. May contain more than
  // one parent per child (annotated corpora allow it); predictions never do.
  std::optional<std::vector<ReplyLink>> gold_links;

  int size() const { return static_cast<int>(utterances.size()); }
  bool operator==(const Dialogue&) const = default;
};

// Disjoint, covering clusters of utterance ids. Canonical form: each cluster
// ascending, clusters ordered by smallest element.
struct ThreadPartition {
  std::vector<std::vector<int>> clusters;

  void canonicalize();
  // Throws IntegrityError unless clusters partition exactly {0..n-1}.
  void validate(int n_utterances) const;
  int element_count() const;

  bool operator==(const ThreadPartition&) const = default;
};

// One response-selection instance: does `candidates[correct_index]` continue
// `context`?
struct ResponseSelectionExample {
  std::vector<Utterance> context;
  std::vector<Utterance> candidates;
  int correct_index = 0;
};

// Throws IntegrityError/ParseError when fields violate the documented
// invariants (empty tokens, non-dense ids, bad links).
void validate_dialogue(const Dialogue& d);

// --- file formats (docs/formats.md) ---

// Dialogue file: blank-line-separated dialogues; one utterance per line as
// "<id>\t<speaker>\t<space-separated token ids>", then optional link lines
// "L <child> <parent>". Sparse ids are renumbered densely with a warning on
// stderr.
std::vector<Dialogue> load_dialogues(const std::string& path);
void save_dialogues(std::span<const Dialogue> dialogues, const std::string& path);

// Link file: "<child> <parent>" per line, ascending child. Corpus variants
// separate per-dialogue blocks with a blank line.
void save_links(std::vector<ReplyLink> links, const std::string& path);
std::vector<ReplyLink> load_links(const std::string& path);
void save_corpus_links(std::span<const std::vector<ReplyLink>> per_dialogue,
                       const std::string& path);
std::vector<std::vector<ReplyLink>> load_corpus_links(const std::string& path);

// Partition file: one cluster per line as space-separated ids.
void save_partition(const ThreadPartition& p, const std::string& path);
ThreadPartition load_partition(const std::string& path);

// Connected components of the undirected link graph (self-loops ignored).
// Every child 0..n-1 must carry at least one link; predictions carry exactly
// one. Throws DataError listing children with no link, IntegrityError for
// out-of-range ids or parent > child.
ThreadPartition partition_from_links(std::span<const ReplyLink> links, int n_utterances);

}  // namespace detangle
