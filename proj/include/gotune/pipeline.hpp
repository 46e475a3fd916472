#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gotune/core.hpp"
#include "gotune/miner.hpp"
#include "gotune/trainer.hpp"

namespace gotune {

// One-shot run: datastore -> merged neighbor sets -> mining -> training ->
// per-task evaluation, all under a single seed.
struct PipelineConfig {
  std::filesystem::path datastore_path;  // GOEMB, or TSV when datastore_is_tsv
  bool datastore_is_tsv = false;
  std::vector<std::filesystem::path> task_files;
  std::vector<std::filesystem::path> corpus_shards;  // pre-sorted
  size_t k = 100;
  MiningConfig mining;
  TrainConfig train;
  size_t model_hidden = 32;
  bool model_tied = false;
  // Initialize the output projection from the datastore rows so label
  // geometry carries into scoring; reserved rows stay random.
  bool init_output_from_datastore = true;
  uint64_t seed = 0;
  // (task file, eval data file); defaults to every task with no eval data.
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> eval_sets;
  std::filesystem::path out_dir;
  unsigned workers = 1;
  bool dump_predictions = false;
};

PipelineConfig parse_pipeline_config(const std::filesystem::path& json_path);

// Model vocabulary for a datastore: reserved tokens first, then the
// datastore tokens in row order.
std::vector<std::string> model_vocab_for(const LabelDatastore& ds);

// Fresh model for a datastore; U rows are copied from the datastore when
// requested.
ModelParams init_model_for(const LabelDatastore& ds, size_t hidden, bool tied,
                           bool init_output_from_datastore, uint64_t seed);

// Runs every stage and writes mined.jsonl, neighbors.json, the checkpoint
// directory, report.tsv (and predictions_<task>.jsonl on request) under
// cfg.out_dir. Returns the report.
Report run_pipeline(const PipelineConfig& cfg);

}  // namespace gotune
