#include "gotune/miner.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "gotune/errors.hpp"

namespace gotune {

namespace {

bool is_sentence_end(char c) { return c == '.' || c == '!' || c == '?'; }

bool is_ws(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::string_view trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && is_ws(s[b])) ++b;
  while (e > b && is_ws(s[e - 1])) --e;
  return s.substr(b, e - b);
}

struct TargetInfo {
  size_t row = 0;
  const std::string* seed = nullptr;
};

// Examples one shard produced, already in canonical within-shard order.
struct ShardScan {
  std::vector<MinedExample> examples;
  size_t documents = 0;
  size_t sentences = 0;
};

// Scans documents one at a time; shards never need to fit in memory.
class ShardScanner {
 public:
  ShardScanner(int64_t shard_id,
               const std::unordered_map<std::string, TargetInfo>& targets,
               const MiningConfig& cfg)
      : shard_id_(shard_id), targets_(targets), cfg_(cfg) {}

  void feed(const std::string& document) {
    const int64_t offset = static_cast<int64_t>(result_.documents);
    ++result_.documents;
    doc_candidates_.clear();
    std::vector<std::string> sentences = split_sentences(document);
    result_.sentences += sentences.size();
    for (size_t s = 0; s < sentences.size(); ++s) {
      std::vector<std::string> tokens = tokenize(sentences[s]);
      if (tokens.size() < cfg_.min_sentence_tokens ||
          tokens.size() > cfg_.max_sentence_tokens) {
        continue;
      }
      // First occurrence of each distinct neighbor token.
      for (size_t i = 0; i < tokens.size(); ++i) {
        auto it = targets_.find(tokens[i]);
        if (it == targets_.end()) continue;
        bool seen_before = false;
        for (size_t j = 0; j < i; ++j) {
          if (tokens[j] == tokens[i]) {
            seen_before = true;
            break;
          }
        }
        if (seen_before) continue;
        MinedExample ex;
        ex.tokens = tokens;
        ex.tokens[i] = std::string(kMaskToken);
        ex.mask_index = i;
        ex.target = tokens[i];
        ex.seed = *it->second.seed;
        ex.weight = 1.0;
        ex.source = {shard_id_, offset};
        doc_candidates_.push_back({it->second.row, s, std::move(ex)});
      }
    }
    std::stable_sort(doc_candidates_.begin(), doc_candidates_.end(),
                     [](const Candidate& a, const Candidate& b) {
                       if (a.row != b.row) return a.row < b.row;
                       return a.sentence < b.sentence;
                     });
    for (Candidate& c : doc_candidates_) {
      result_.examples.push_back(std::move(c.example));
    }
  }

  ShardScan take() { return std::move(result_); }

 private:
  struct Candidate {
    size_t row;
    size_t sentence;
    MinedExample example;
  };

  int64_t shard_id_;
  const std::unordered_map<std::string, TargetInfo>& targets_;
  const MiningConfig& cfg_;
  ShardScan result_;
  std::vector<Candidate> doc_candidates_;
};

ShardScan scan_shard_file(const std::filesystem::path& path, int64_t shard_id,
                          const std::unordered_map<std::string, TargetInfo>& targets,
                          const MiningConfig& cfg) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("shard " + std::to_string(shard_id) +
                          ": cannot open " + path.string());
  }
  ShardScanner scanner(shard_id, targets, cfg);
  std::string line;
  while (std::getline(in, line)) scanner.feed(line);
  return scanner.take();
}

ShardScan scan_shard_memory(const std::vector<std::string>& documents,
                            int64_t shard_id,
                            const std::unordered_map<std::string, TargetInfo>& targets,
                            const MiningConfig& cfg) {
  ShardScanner scanner(shard_id, targets, cfg);
  for (const std::string& doc : documents) scanner.feed(doc);
  return scanner.take();
}

MiningResult merge_with_caps(std::vector<ShardScan>& scans,
                             const NeighborSet& ns, const MiningConfig& cfg) {
  MiningResult result;
  std::map<std::string, size_t> caps;
  const bool capped = cfg.policy == MiningConfig::CapPolicy::proportional;
  if (capped) caps = balance_caps(ns, cfg);

  for (ShardScan& scan : scans) {
    result.stats.documents_scanned += scan.documents;
    result.stats.sentences_scanned += scan.sentences;
    for (MinedExample& ex : scan.examples) {
      if (result.stats.examples_emitted >= cfg.total_cap) break;
      if (capped) {
        size_t cap = caps.at(ex.target);
        if (result.stats.per_token_counts[ex.target] >= cap) continue;
      }
      ++result.stats.per_token_counts[ex.target];
      ++result.stats.examples_emitted;
      result.examples.push_back(std::move(ex));
    }
  }
  // Drop zero-count entries the cap lookup may have created.
  for (auto it = result.stats.per_token_counts.begin();
       it != result.stats.per_token_counts.end();) {
    it = it->second == 0 ? result.stats.per_token_counts.erase(it) : ++it;
  }
  return result;
}

template <typename ScanShard>
MiningResult mine_impl(size_t shard_count, ScanShard&& scan_one,
                       const NeighborSet& ns, const MiningConfig& cfg,
                       unsigned workers) {
  if (ns.entries.empty()) throw ValidationError("empty neighbor set");
  if (cfg.total_cap < 1) throw ValidationError("total_cap must be >= 1");
  if (cfg.min_sentence_tokens > cfg.max_sentence_tokens) {
    throw ValidationError("min_sentence_tokens exceeds max_sentence_tokens");
  }

  std::vector<ShardScan> scans(shard_count);
  if (workers < 1) workers = 1;
  workers = std::min(static_cast<size_t>(workers), std::max<size_t>(shard_count, 1));
  if (workers <= 1 || shard_count <= 1) {
    for (size_t i = 0; i < shard_count; ++i) scans[i] = scan_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          size_t i = next.fetch_add(1);
          if (i >= shard_count) return;
          try {
            scans[i] = scan_one(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!error) error = std::current_exception();
            return;
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }
  return merge_with_caps(scans, ns, cfg);
}

std::unordered_map<std::string, TargetInfo> target_table(const NeighborSet& ns) {
  std::unordered_map<std::string, TargetInfo> targets;
  targets.reserve(ns.entries.size());
  for (const NeighborEntry& e : ns.entries) {
    targets.emplace(e.token, TargetInfo{e.row, &e.seed});
  }
  return targets;
}

}  // namespace

std::vector<std::string> split_sentences(std::string_view document) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i < document.size(); ++i) {
    if (!is_sentence_end(document[i])) continue;
    const bool at_end = i + 1 == document.size();
    if (!at_end && !is_ws(document[i + 1])) continue;
    std::string_view segment = trim(document.substr(start, i + 1 - start));
    if (!segment.empty()) out.emplace_back(segment);
    start = i + 1;
  }
  if (start < document.size()) {
    std::string_view tail = trim(document.substr(start));
    if (!tail.empty()) out.emplace_back(tail);
  }
  return out;
}

std::map<std::string, size_t> balance_caps(const NeighborSet& ns,
                                           const MiningConfig& cfg) {
  std::map<std::string, size_t> caps;
  const size_t n = ns.entries.size();
  if (n == 0) return caps;
  const size_t base = cfg.total_cap / n;
  const size_t remainder = cfg.total_cap % n;
  // Entries are already sorted by descending score; the first `remainder`
  // get one extra.
  for (size_t i = 0; i < n; ++i) {
    caps[ns.entries[i].token] = base + (i < remainder ? 1 : 0);
  }
  return caps;
}

MiningResult mine(const std::vector<std::filesystem::path>& shard_paths,
                  const NeighborSet& ns, const MiningConfig& cfg,
                  unsigned workers) {
  auto targets = target_table(ns);
  return mine_impl(
      shard_paths.size(),
      [&](size_t i) {
        return scan_shard_file(shard_paths[i], static_cast<int64_t>(i), targets,
                               cfg);
      },
      ns, cfg, workers);
}

MiningResult mine_documents(
    const std::vector<std::vector<std::string>>& shards, const NeighborSet& ns,
    const MiningConfig& cfg, unsigned workers) {
  auto targets = target_table(ns);
  return mine_impl(
      shards.size(),
      [&](size_t i) {
        return scan_shard_memory(shards[i], static_cast<int64_t>(i), targets,
                                 cfg);
      },
      ns, cfg, workers);
}

}  // namespace gotune
