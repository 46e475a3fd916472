#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gotune/core.hpp"
#include "gotune/datastore.hpp"

namespace gotune {

// Deterministic synthetic classification world for end-to-end runs: an
// embedding space where each seed label owns a cluster of close neighbor
// tokens plus a few weakly-related distractors, a corpus whose neighbor
// tokens co-occur with polarity-consistent context words (distractors with
// misleading ones), and held-out labeled examples made of context words
// only.
struct SyntheticWorld {
  LabelDatastore datastore;
  std::vector<TaskSpec> tasks;
  std::vector<std::vector<std::string>> corpus_shards;  // shard -> documents
  std::vector<std::vector<EvalExample>> eval_sets;      // aligned with tasks
};

// One task ("sentiment") or two ("sentiment" + "temperature") sharing the
// datastore and corpus. Fully determined by the seed.
SyntheticWorld generate_synthetic_world(uint64_t rng_seed,
                                        bool include_second_task,
                                        size_t shards = 4,
                                        size_t eval_examples_per_task = 200);

// Writes datastore.goemb, task_<name>.json, corpus_<i>.txt and
// eval_<name>.jsonl under dir.
void write_synthetic_world(const SyntheticWorld& world,
                           const std::filesystem::path& dir);

}  // namespace gotune
