#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gotune/core.hpp"
#include "gotune/datastore.hpp"

namespace gotune {

struct MiningConfig {
  enum class CapPolicy { proportional, unlimited };

  size_t total_cap = 100000;
  CapPolicy policy = CapPolicy::proportional;
  size_t min_sentence_tokens = 5;
  size_t max_sentence_tokens = 64;
};

struct MiningStats {
  size_t documents_scanned = 0;
  size_t sentences_scanned = 0;
  size_t examples_emitted = 0;
  std::map<std::string, size_t> per_token_counts;  // emitted, post-cap
};

// Splits at '.', '!', '?' followed by whitespace or end of input; the
// delimiter stays with its sentence; surrounding whitespace is trimmed and
// empty segments dropped.
std::vector<std::string> split_sentences(std::string_view document);

// Per-token caps under the proportional policy: floor(total_cap / n), with
// the remainder going one each to the highest-scoring entries.
std::map<std::string, size_t> balance_caps(const NeighborSet& ns,
                                           const MiningConfig& cfg);

struct MiningResult {
  std::vector<MinedExample> examples;
  MiningStats stats;
};

// Scans shards (one document per line; shard_id is the position in the given
// list) and emits one example per (sentence, distinct neighbor token),
// masking the first occurrence. Output order and cap accounting follow the
// canonical (shard, offset, target row, sentence) order regardless of
// worker count.
MiningResult mine(const std::vector<std::filesystem::path>& shard_paths,
                  const NeighborSet& ns, const MiningConfig& cfg,
                  unsigned workers = 1);

// Same scan over in-memory shards (shard -> documents).
MiningResult mine_documents(
    const std::vector<std::vector<std::string>>& shards, const NeighborSet& ns,
    const MiningConfig& cfg, unsigned workers = 1);

}  // namespace gotune
