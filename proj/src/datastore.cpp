#include "gotune/datastore.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gotune/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "GOEMB/GOMLM writers assume a little-endian host");

namespace gotune {

namespace {

using ordered_json = nlohmann::ordered_json;

bool score_before(double sa, size_t ra, double sb, size_t rb) {
  if (sa != sb) return sa > sb;
  return ra < rb;
}

}  // namespace

LabelDatastore LabelDatastore::build(std::vector<std::string> tokens,
                                     std::vector<float> matrix, size_t dim) {
  if (dim == 0) throw ValidationError("datastore dimension must be positive");
  if (matrix.size() != tokens.size() * dim) {
    throw ValidationError(
        "datastore dimension mismatch: " + std::to_string(tokens.size()) +
        " tokens x " + std::to_string(dim) + " dims != " +
        std::to_string(matrix.size()) + " values");
  }
  LabelDatastore ds;
  ds.index_.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (tok.empty()) {
      throw ValidationError("datastore token at row " + std::to_string(i) +
                            " is empty");
    }
    if (tok.find('\n') != std::string::npos) {
      throw ValidationError("datastore token at row " + std::to_string(i) +
                            " contains a newline");
    }
    if (!ds.index_.emplace(tok, i).second) {
      throw ValidationError("duplicate token \"" + tok + "\" in datastore");
    }
  }
  for (size_t i = 0; i < matrix.size(); ++i) {
    if (!std::isfinite(matrix[i])) {
      throw ValidationError("non-finite embedding value at row " +
                            std::to_string(i / dim) + " col " +
                            std::to_string(i % dim));
    }
  }
  ds.tokens_ = std::move(tokens);
  ds.data_ = std::move(matrix);
  ds.dim_ = dim;
  return ds;
}

std::optional<size_t> LabelDatastore::row_of(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double LabelDatastore::dot(size_t a, size_t b) const {
  const float* pa = data_.data() + a * dim_;
  const float* pb = data_.data() + b * dim_;
  double acc = 0.0;
  for (size_t i = 0; i < dim_; ++i) {
    acc += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
  }
  return acc;
}

std::vector<ScoredToken> LabelDatastore::query_neighbors(
    const std::string& seed, size_t k, bool cosine) const {
  auto seed_row = row_of(seed);
  if (!seed_row) {
    throw ValidationError("seed not in datastore: \"" + seed + "\"");
  }
  if (k < 1 || k > size()) {
    throw ValidationError("k out of range: " + std::to_string(k) +
                          " (datastore has " + std::to_string(size()) +
                          " tokens)");
  }
  std::vector<double> scores(size());
  for (size_t r = 0; r < size(); ++r) scores[r] = dot(*seed_row, r);
  if (cosine) {
    const double seed_norm = std::sqrt(dot(*seed_row, *seed_row));
    for (size_t r = 0; r < size(); ++r) {
      const double denom = seed_norm * std::sqrt(dot(r, r));
      scores[r] = denom > 0.0 ? scores[r] / denom : 0.0;
    }
  }

  std::vector<size_t> order(size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](size_t a, size_t b) {
                      return score_before(scores[a], a, scores[b], b);
                    });
  std::vector<ScoredToken> out;
  out.reserve(k);
  for (size_t i = 0; i < k; ++i) {
    out.push_back({tokens_[order[i]], order[i], scores[order[i]]});
  }
  return out;
}

NeighborSet build_neighbor_set_for_seeds(const LabelDatastore& ds,
                                         const std::string& task_name,
                                         const std::vector<std::string>& seeds,
                                         size_t k, bool cosine) {
  std::vector<size_t> seed_rows;
  seed_rows.reserve(seeds.size());
  for (const std::string& seed : seeds) {
    auto row = ds.row_of(seed);
    if (!row) throw ValidationError("seed not in datastore: \"" + seed + "\"");
    seed_rows.push_back(*row);
  }

  // Union of per-seed top-k candidates.
  std::vector<size_t> candidates;
  for (const std::string& seed : seeds) {
    for (const ScoredToken& st : ds.query_neighbors(seed, k, cosine)) {
      candidates.push_back(st.row);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());

  auto score_of = [&](size_t seed_row, size_t cand) {
    double score = ds.dot(seed_row, cand);
    if (cosine) {
      double denom = std::sqrt(ds.dot(seed_row, seed_row)) *
                     std::sqrt(ds.dot(cand, cand));
      score = denom > 0.0 ? score / denom : 0.0;
    }
    return score;
  };

  // Each candidate goes to the seed with the highest score; ties fall to
  // the earlier seed in task order.
  NeighborSet ns;
  ns.task = task_name;
  ns.seeds = seeds;
  ns.k_per_seed = k;
  ns.entries.reserve(candidates.size());
  for (size_t cand : candidates) {
    size_t best = 0;
    double best_score = score_of(seed_rows[0], cand);
    for (size_t s = 1; s < seed_rows.size(); ++s) {
      double score = score_of(seed_rows[s], cand);
      if (score > best_score) {
        best = s;
        best_score = score;
      }
    }
    ns.entries.push_back({ds.tokens()[cand], cand, best_score, seeds[best]});
  }
  std::sort(ns.entries.begin(), ns.entries.end(),
            [](const NeighborEntry& a, const NeighborEntry& b) {
              return score_before(a.score, a.row, b.score, b.row);
            });
  return ns;
}

NeighborSet build_neighbor_set(const LabelDatastore& ds, const TaskSpec& spec,
                               size_t k, bool cosine) {
  return build_neighbor_set_for_seeds(ds, spec.name, spec.seed_labels, k, cosine);
}

void LabelDatastore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write datastore: " + path.string());
  out << "GOEMB 1 " << size() << ' ' << dim_ << '\n';
  for (const std::string& tok : tokens_) out << tok << '\n';
  out.write(reinterpret_cast<const char*>(data_.data()),
            static_cast<std::streamsize>(data_.size() * sizeof(float)));
  if (!out) throw ValidationError("short write saving datastore: " + path.string());
}

LabelDatastore LabelDatastore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open datastore: " + path.string());
  std::string header;
  if (!std::getline(in, header)) {
    throw ValidationError(path.string() + ": not a GOEMB file (empty)");
  }
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  size_t v = 0, d = 0;
  hs >> magic >> version >> v >> d;
  if (magic != "GOEMB" || hs.fail()) {
    throw ValidationError(path.string() + ": not a GOEMB file");
  }
  if (version != 1) {
    throw ValidationError(path.string() + ": unsupported GOEMB version " +
                          std::to_string(version));
  }
  std::vector<std::string> tokens;
  tokens.reserve(v);
  std::string line;
  for (size_t i = 0; i < v; ++i) {
    if (!std::getline(in, line)) {
      throw ValidationError(path.string() + ": truncated GOEMB file (token " +
                            std::to_string(i) + " of " + std::to_string(v) + ")");
    }
    tokens.push_back(line);
  }
  std::vector<float> matrix(v * d);
  in.read(reinterpret_cast<char*>(matrix.data()),
          static_cast<std::streamsize>(matrix.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(matrix.size() * sizeof(float))) {
    throw ValidationError(path.string() + ": truncated GOEMB file (matrix)");
  }
  return build(std::move(tokens), std::move(matrix), d);
}

LabelDatastore LabelDatastore::import_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open TSV: " + path.string());
  std::vector<std::string> tokens;
  std::vector<float> matrix;
  size_t dim = 0;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError(path.string() + " line " + std::to_string(lineno) +
                            ": expected token<TAB>values");
    }
    tokens.push_back(line.substr(0, tab));
    size_t count = 0;
    size_t pos = tab + 1;
    while (pos <= line.size()) {
      size_t end = line.find('\t', pos);
      if (end == std::string::npos) end = line.size();
      float value = 0.0f;
      const char* first = line.data() + pos;
      const char* last = line.data() + end;
      auto [ptr, ec] = std::from_chars(first, last, value);
      if (ec != std::errc{} || ptr != last) {
        throw ValidationError(path.string() + " line " + std::to_string(lineno) +
                              ": bad number \"" + line.substr(pos, end - pos) +
                              "\"");
      }
      matrix.push_back(value);
      ++count;
      pos = end + 1;
    }
    if (dim == 0) {
      dim = count;
      if (dim == 0) {
        throw ValidationError(path.string() + " line " + std::to_string(lineno) +
                              ": no embedding values");
      }
    } else if (count != dim) {
      throw ValidationError(path.string() + " line " + std::to_string(lineno) +
                            ": expected " + std::to_string(dim) +
                            " values, got " + std::to_string(count));
    }
  }
  if (tokens.empty()) {
    throw ValidationError(path.string() + ": empty TSV");
  }
  try {
    return build(std::move(tokens), std::move(matrix), dim);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string neighbor_set_to_json(const NeighborSet& ns) {
  ordered_json j;
  j["task"] = ns.task;
  j["seeds"] = ns.seeds;
  j["k_per_seed"] = ns.k_per_seed;
  ordered_json entries = ordered_json::array();
  for (const NeighborEntry& e : ns.entries) {
    entries.push_back(ordered_json{{"token", e.token},
                                   {"row", e.row},
                                   {"score", e.score},
                                   {"seed", e.seed}});
  }
  j["entries"] = std::move(entries);
  return j.dump();
}

NeighborSet neighbor_set_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ValidationError("malformed neighbor set: invalid JSON");
  }
  NeighborSet ns;
  try {
    ns.task = j.at("task").get<std::string>();
    ns.seeds = j.at("seeds").get<std::vector<std::string>>();
    ns.k_per_seed = j.at("k_per_seed").get<size_t>();
    for (const auto& e : j.at("entries")) {
      ns.entries.push_back({e.at("token").get<std::string>(),
                            e.at("row").get<size_t>(),
                            e.at("score").get<double>(),
                            e.at("seed").get<std::string>()});
    }
  } catch (const ordered_json::exception& e) {
    throw ValidationError(std::string("malformed neighbor set: ") + e.what());
  }
  for (const NeighborEntry& e : ns.entries) {
    if (std::find(ns.seeds.begin(), ns.seeds.end(), e.seed) == ns.seeds.end()) {
      throw ValidationError("neighbor set entry \"" + e.token +
                            "\" assigned to unknown seed \"" + e.seed + "\"");
    }
  }
  return ns;
}

void save_neighbor_set(const std::filesystem::path& path, const NeighborSet& ns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write neighbor set: " + path.string());
  out << neighbor_set_to_json(ns) << '\n';
}

NeighborSet load_neighbor_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open neighbor set: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return neighbor_set_from_json(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace gotune
