#pragma once

#include <stdexcept>
#include <string>

namespace detangle {

// Unreadable or unwritable paths, short reads, broken streams.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input records; message names the offending line.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally well-formed data that violates a documented invariant
// (duplicate ids, links to nonexistent utterances, forward links).
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Infeasible or inconsistent configuration values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Valid config but unusable data: empty pools, out-of-window gold labels.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape mismatches and empty inputs to shape-sensitive ops.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input exceeds a configured model capacity (context longer than max_context).
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Token id outside the embedding table.
struct VocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are guaranteed; training aborts.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric inputs that cannot be compared (element-set mismatch, empty data).
struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace detangle
