#include "gotune/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "gotune/errors.hpp"
#include "gotune/rng.hpp"

namespace gotune {

namespace {

using ordered_json = nlohmann::ordered_json;

// RNG stream ids; every consumer derives its own counter stream so the two
// training modes draw identical shuffles.
constexpr uint64_t kShuffleStream = 100;
constexpr uint64_t kPhiBatchStream = 200;
constexpr uint64_t kPhiInitStream = 300;

struct WeightKey {
  std::string seed;
  std::string token;
  bool operator<(const WeightKey& o) const {
    if (seed != o.seed) return seed < o.seed;
    return token < o.token;
  }
};

// Per-example CE weights for the model phase: seed targets get 1, neighbor
// targets get the current softmax weight of their (seed, token) slot,
// averaged when several tasks share the seed.
class PhaseWeights {
 public:
  PhaseWeights(const std::vector<GeometricWeights>& gws) {
    for (const GeometricWeights& gw : gws) {
      seeds_.insert(gw.seed);
      std::vector<double> w = gw.neighbor_tokens.empty()
                                  ? std::vector<double>{}
                                  : kde_weights(gw);
      for (size_t t = 0; t < gw.neighbor_tokens.size(); ++t) {
        auto& slot = table_[{gw.seed, gw.neighbor_tokens[t]}];
        slot.first += w[t];
        slot.second += 1;
      }
    }
  }

  double weight_for(const MinedExample& ex) const {
    if (seeds_.count(ex.target)) return 1.0;
    auto it = table_.find({ex.seed, ex.target});
    if (it == table_.end()) {
      throw ValidationError("target \"" + ex.target +
                            "\" not covered by any neighbor set (seed \"" +
                            ex.seed + "\")");
    }
    return it->second.first / static_cast<double>(it->second.second);
  }

 private:
  std::set<std::string> seeds_;
  std::map<WeightKey, std::pair<double, int>> table_;  // sum, count
};

void validate_dataset(const ModelParams& params,
                      const std::vector<MinedExample>& data) {
  if (data.empty()) throw ValidationError("empty dataset");
  for (const MinedExample& ex : data) {
    params.token_id_checked(ex.target);
  }
}

double run_model_epoch(ModelParams& params, const std::vector<MinedExample>& data,
                       const std::vector<double>& weights, const TrainConfig& cfg,
                       size_t epoch, size_t& steps) {
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng shuffle_rng(cfg.rng_seed, CounterRng::hash(kShuffleStream, epoch, 0));
  deterministic_shuffle(order, shuffle_rng);

  double loss_sum = 0.0;
  size_t batches = 0;
  for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const size_t end = std::min(order.size(), begin + cfg.batch_size);
    std::vector<MinedExample> batch;
    batch.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) {
      MinedExample ex = data[order[i]];
      ex.weight = weights[order[i]];
      batch.push_back(std::move(ex));
    }
    Gradients grads = zero_gradients(params);
    loss_sum += loss_wce(params, batch, &grads);
    sgd_update(params, grads, cfg.lr_model, cfg.clip_norm);
    ++steps;
    ++batches;
  }
  return batches ? loss_sum / static_cast<double>(batches) : 0.0;
}

// One phi phase under the frozen model. Returns the mean constraint loss
// after the updates (0 when there was nothing to update).
double run_phi_phase(const ModelParams& params,
                     const std::vector<MinedExample>& data,
                     std::vector<GeometricWeights>& gws, const TrainConfig& cfg,
                     size_t epoch) {
  if (cfg.phi_steps_per_epoch == 0 || gws.empty()) return 0.0;

  double loss_sum = 0.0;
  size_t loss_count = 0;
  for (size_t step = 0; step < cfg.phi_steps_per_epoch; ++step) {
    CounterRng batch_rng(cfg.rng_seed,
                         CounterRng::hash(kPhiBatchStream, epoch, step));
    const size_t batch_size =
        std::min<size_t>(cfg.constraint_batch_size, data.size());
    std::vector<std::vector<double>> probs;  // full distribution per example
    probs.reserve(batch_size);
    for (size_t b = 0; b < batch_size; ++b) {
      const MinedExample& ex =
          data[static_cast<size_t>(batch_rng.next_below(data.size()))];
      probs.push_back(forward(params, ex.tokens, ex.mask_index));
    }

    for (GeometricWeights& gw : gws) {
      if (gw.neighbor_tokens.empty()) continue;
      const size_t seed_id = params.token_id_checked(gw.seed);
      std::vector<double> p_y(batch_size);
      std::vector<std::vector<double>> p_z(
          batch_size, std::vector<double>(gw.neighbor_tokens.size()));
      for (size_t b = 0; b < batch_size; ++b) {
        p_y[b] = probs[b][seed_id];
        for (size_t t = 0; t < gw.neighbor_tokens.size(); ++t) {
          p_z[b][t] = probs[b][params.token_id_checked(gw.neighbor_tokens[t])];
        }
      }
      double loss;
      if (cfg.line_search) {
        loss = phi_line_search_step(gw, p_y, p_z, cfg.lr_phi);
      } else {
        std::vector<double> grad = constraint_grad_phi(gw, p_y, p_z);
        for (size_t t = 0; t < gw.phi.size(); ++t) {
          gw.phi[t] -= cfg.lr_phi * grad[t];
        }
        std::vector<double> w = kde_weights(gw);
        std::vector<double> aggs(batch_size);
        for (size_t b = 0; b < batch_size; ++b) {
          double agg = 0.0;
          for (size_t t = 0; t < w.size(); ++t) agg += w[t] * p_z[b][t];
          aggs[b] = agg;
        }
        loss = constraint_loss(p_y, aggs);
      }
      loss_sum += loss;
      ++loss_count;
    }
  }
  return loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
}

std::string sanitize_for_filename(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                      (c >= '0' && c <= '9') || c == '-' || c == '_';
    out.push_back(keep ? c : '_');
  }
  return out;
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ValidationError("cannot write: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ValidationError("malformed train config: invalid JSON");
  }
  TrainConfig cfg;
  if (j.contains("mode")) {
    std::string mode = j.at("mode").get<std::string>();
    if (mode == "sda") {
      cfg.mode = TrainConfig::Mode::sda;
    } else if (mode == "go") {
      cfg.mode = TrainConfig::Mode::go;
    } else {
      throw ValidationError("unknown train mode \"" + mode + "\"");
    }
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("epochs", cfg.epochs);
  get("batch_size", cfg.batch_size);
  get("lr_model", cfg.lr_model);
  get("lr_phi", cfg.lr_phi);
  get("phi_steps_per_epoch", cfg.phi_steps_per_epoch);
  get("constraint_batch_size", cfg.constraint_batch_size);
  get("rng_seed", cfg.rng_seed);
  get("line_search", cfg.line_search);
  get("clip_norm", cfg.clip_norm);
  get("phi_init_noise", cfg.phi_init_noise);
  if (cfg.batch_size == 0 || cfg.constraint_batch_size == 0 ||
      cfg.lr_model <= 0.0 || cfg.lr_phi <= 0.0) {
    throw ValidationError("train config: sizes and learning rates must be positive");
  }
  if (cfg.phi_init_noise < 0.0) {
    throw ValidationError("train config: phi_init_noise must be nonnegative");
  }
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  ordered_json j;
  j["mode"] = cfg.mode == TrainConfig::Mode::sda ? "sda" : "go";
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr_model"] = cfg.lr_model;
  j["lr_phi"] = cfg.lr_phi;
  j["phi_steps_per_epoch"] = cfg.phi_steps_per_epoch;
  j["constraint_batch_size"] = cfg.constraint_batch_size;
  j["rng_seed"] = cfg.rng_seed;
  j["line_search"] = cfg.line_search;
  j["clip_norm"] = cfg.clip_norm;
  j["phi_init_noise"] = cfg.phi_init_noise;
  return j.dump();
}

TrainState train_sda(ModelParams params, const std::vector<MinedExample>& data,
                     const TrainConfig& cfg) {
  validate_dataset(params, data);
  TrainState state;
  state.params = std::move(params);
  std::vector<double> ones(data.size(), 1.0);
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double model_loss =
        run_model_epoch(state.params, data, ones, cfg, epoch, state.steps);
    state.history.push_back({model_loss, 0.0});
  }
  return state;
}

TrainState train_go(ModelParams params, const std::vector<MinedExample>& data,
                    std::vector<GeometricWeights> weights,
                    const TrainConfig& cfg) {
  validate_dataset(params, data);
  for (const GeometricWeights& gw : weights) {
    params.token_id_checked(gw.seed);
    for (const std::string& tok : gw.neighbor_tokens) {
      params.token_id_checked(tok);
    }
  }
  {
    // Coverage check before any work happens.
    PhaseWeights initial(weights);
    for (const MinedExample& ex : data) initial.weight_for(ex);
  }

  TrainState state;
  state.params = std::move(params);
  state.weights = std::move(weights);
  if (cfg.phi_init_noise > 0.0) {
    for (size_t g = 0; g < state.weights.size(); ++g) {
      CounterRng noise(cfg.rng_seed, CounterRng::hash(kPhiInitStream, g, 0));
      for (double& p : state.weights[g].phi) {
        p += noise.uniform(-cfg.phi_init_noise, cfg.phi_init_noise);
      }
    }
  }
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Phase 1: model step under the current weights.
    PhaseWeights phase_weights(state.weights);
    std::vector<double> w(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
      w[i] = phase_weights.weight_for(data[i]);
    }
    double model_loss =
        run_model_epoch(state.params, data, w, cfg, epoch, state.steps);

    // Phase 2: phi step under the frozen model.
    double constraint =
        run_phi_phase(state.params, data, state.weights, cfg, epoch);
    state.history.push_back({model_loss, constraint});
  }
  return state;
}

MergedTasks merge_tasks(const std::vector<TaskSpec>& specs,
                        const LabelDatastore& ds, size_t k) {
  if (specs.empty()) throw ValidationError("no tasks to merge");
  std::set<std::string> names;
  for (const TaskSpec& spec : specs) {
    if (!names.insert(spec.name).second) {
      throw ValidationError("duplicate task name \"" + spec.name + "\"");
    }
  }

  // Union of seed labels, first-seen order; shared seeds retrieve once.
  std::vector<std::string> union_seeds;
  std::set<std::string> seen;
  for (const TaskSpec& spec : specs) {
    for (const std::string& seed : spec.seed_labels) {
      if (seen.insert(seed).second) union_seeds.push_back(seed);
    }
  }

  std::string union_name = specs[0].name;
  for (size_t i = 1; i < specs.size(); ++i) union_name += "+" + specs[i].name;

  MergedTasks merged;
  merged.union_set = build_neighbor_set_for_seeds(ds, union_name, union_seeds, k);
  for (const TaskSpec& spec : specs) {
    for (const std::string& seed : spec.seed_labels) {
      merged.weights.push_back(
          geometric_weights_from(merged.union_set, spec.name, seed));
    }
  }
  return merged;
}

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const std::string& config_digest_hex) {
  std::filesystem::create_directories(dir);

  {
    // Model file goes through the same temp-then-rename dance.
    std::filesystem::path tmp = dir / "model.gomlm.tmp";
    save_model(tmp, state.params);
    std::filesystem::rename(tmp, dir / "model.gomlm");
  }

  std::vector<const GeometricWeights*> sorted;
  for (const GeometricWeights& gw : state.weights) sorted.push_back(&gw);
  std::sort(sorted.begin(), sorted.end(),
            [](const GeometricWeights* a, const GeometricWeights* b) {
              if (a->task != b->task) return a->task < b->task;
              return a->seed < b->seed;
            });
  char buf[32];
  for (size_t i = 0; i < sorted.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "gw_%03zu_", i);
    std::string name = buf + sanitize_for_filename(sorted[i]->task) + "_" +
                       sanitize_for_filename(sorted[i]->seed) + ".json";
    atomic_write(dir / name, geometric_weights_to_json(*sorted[i]) + "\n");
  }

  std::string log = "epoch\tmodel_loss\tconstraint_loss\n";
  char row[96];
  for (size_t e = 0; e < state.history.size(); ++e) {
    std::snprintf(row, sizeof(row), "%zu\t%.6f\t%.9f\n", e,
                  state.history[e].model_loss, state.history[e].constraint_loss);
    log += row;
  }
  atomic_write(dir / "train_log.tsv", log);
  atomic_write(dir / "config.digest", config_digest_hex + "\n");
}

TrainState load_checkpoint(const std::filesystem::path& dir) {
  TrainState state;
  state.params = load_model(dir / "model.gomlm");
  std::vector<std::filesystem::path> gw_files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("gw_") && name.ends_with(".json")) {
      gw_files.push_back(entry.path());
    }
  }
  std::sort(gw_files.begin(), gw_files.end());
  for (const auto& path : gw_files) {
    state.weights.push_back(load_geometric_weights(path));
  }
  return state;
}

}  // namespace gotune
