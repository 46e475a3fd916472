#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gotune/core.hpp"

namespace gotune {

struct ScoredToken {
  std::string token;
  size_t row = 0;
  double score = 0.0;
};

// The label-space store: every vocabulary token keyed by its embedding.
// Immutable once built; any number of threads may query it.
class LabelDatastore {
 public:
  LabelDatastore() = default;  // empty placeholder; build() makes real ones

  // Takes ownership of tokens and the row-major V x dim matrix. Throws
  // ValidationError on duplicate/empty tokens, dimension mismatch, or
  // non-finite entries.
  static LabelDatastore build(std::vector<std::string> tokens,
                              std::vector<float> matrix, size_t dim);

  size_t size() const { return tokens_.size(); }
  size_t dim() const { return dim_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::span<const float> row(size_t r) const {
    return {data_.data() + r * dim_, dim_};
  }
  const std::vector<float>& matrix() const { return data_; }
  std::optional<size_t> row_of(const std::string& token) const;

  // Dot product of two rows, accumulated in double, fixed order.
  double dot(size_t a, size_t b) const;

  // Exact top-k against the seed's embedding; the seed itself is a
  // candidate. Sorted by descending score, ties by ascending row. Raw dot
  // product by default; cosine divides by both norms (zero-norm rows score
  // 0).
  std::vector<ScoredToken> query_neighbors(const std::string& seed, size_t k,
                                           bool cosine = false) const;

  // GOEMB binary format: "GOEMB 1 <V> <d>\n", V token lines, then V*d
  // little-endian float32 values row-major. load(save(ds)) is bit-identical.
  void save(const std::filesystem::path& path) const;
  static LabelDatastore load(const std::filesystem::path& path);

  // One line per token: "token\tv1\t...\tvd".
  static LabelDatastore import_tsv(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::vector<float> data_;  // V x dim, row-major
  size_t dim_ = 0;
  std::unordered_map<std::string, size_t> index_;
};

struct NeighborEntry {
  std::string token;
  size_t row = 0;      // datastore row, the deterministic tie-breaker
  double score = 0.0;  // dot product with the assigned seed
  std::string seed;
  friend bool operator==(const NeighborEntry&, const NeighborEntry&) = default;
};

// Per-task union of per-seed top-k retrievals, deduplicated by token.
struct NeighborSet {
  std::string task;
  std::vector<std::string> seeds;
  size_t k_per_seed = 0;
  std::vector<NeighborEntry> entries;  // sorted by (score desc, row asc)
};

NeighborSet build_neighbor_set(const LabelDatastore& ds, const TaskSpec& spec,
                               size_t k, bool cosine = false);

// Same retrieval/assignment over an explicit seed list; used for the
// multi-task merge where seeds come from several specs.
NeighborSet build_neighbor_set_for_seeds(const LabelDatastore& ds,
                                         const std::string& task_name,
                                         const std::vector<std::string>& seeds,
                                         size_t k, bool cosine = false);

std::string neighbor_set_to_json(const NeighborSet& ns);
NeighborSet neighbor_set_from_json(const std::string& text);
void save_neighbor_set(const std::filesystem::path& path, const NeighborSet& ns);
NeighborSet load_neighbor_set(const std::filesystem::path& path);

}  // namespace gotune
