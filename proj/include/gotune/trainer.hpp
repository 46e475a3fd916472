#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gotune/core.hpp"
#include "gotune/datastore.hpp"
#include "gotune/geometry.hpp"
#include "gotune/model.hpp"

namespace gotune {

struct TrainConfig {
  enum class Mode { sda, go };

  Mode mode = Mode::go;
  size_t epochs = 5;
  size_t batch_size = 32;
  double lr_model = 0.1;
  double lr_phi = 0.5;
  size_t phi_steps_per_epoch = 4;
  size_t constraint_batch_size = 32;
  uint64_t rng_seed = 0;
  bool line_search = true;      // backtracking on the phi step
  double clip_norm = 5.0;       // global-norm gradient clip; <= 0 disables
  double phi_init_noise = 0.0;  // uniform(+-noise) added to phi at start
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

struct EpochLoss {
  double model_loss = 0.0;
  double constraint_loss = 0.0;
};

struct TrainState {
  ModelParams params;
  std::vector<GeometricWeights> weights;  // per (task, seed), empty for sda
  size_t steps = 0;
  std::vector<EpochLoss> history;  // one entry per completed epoch
};

// Plain cross-entropy fine-tuning on the mined targets, all weights 1.
// Mini-batch SGD with shuffling derived from cfg.rng_seed.
TrainState train_sda(ModelParams params, const std::vector<MinedExample>& data,
                     const TrainConfig& cfg);

// Bi-level loop: per epoch, a model phase (weighted CE where a neighbor
// target carries its current softmax weight and a seed target carries 1),
// then a phi phase descending the constraint loss under the frozen model.
// The two phases never touch each other's parameters.
TrainState train_go(ModelParams params, const std::vector<MinedExample>& data,
                    std::vector<GeometricWeights> weights,
                    const TrainConfig& cfg);

struct MergedTasks {
  NeighborSet union_set;                  // retrieval over the merged seeds
  std::vector<GeometricWeights> weights;  // per (task, seed)
};

// Merges seed labels across tasks: one retrieval per distinct seed token,
// one GeometricWeights record per (task, seed). A single task reduces
// exactly to its own neighbor set.
MergedTasks merge_tasks(const std::vector<TaskSpec>& specs,
                        const LabelDatastore& ds, size_t k);

// Checkpoint directory: model.gomlm, one gw_*.json per (task, seed),
// train_log.tsv, config.digest. All writes go through a temp file + rename.
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const std::string& config_digest_hex);
TrainState load_checkpoint(const std::filesystem::path& dir);

}  // namespace gotune
