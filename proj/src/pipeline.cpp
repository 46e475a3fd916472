#include "gotune/pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gotune/digest.hpp"
#include "gotune/errors.hpp"
#include "gotune/evaluator.hpp"
#include "gotune/geometry.hpp"

namespace gotune {

namespace {

using ordered_json = nlohmann::ordered_json;

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) {
    throw ValidationError("cannot open pipeline config: " + json_path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  ordered_json j = ordered_json::parse(ss.str(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ValidationError(json_path.string() + ": invalid JSON");
  }
  const std::filesystem::path base = json_path.parent_path();

  PipelineConfig cfg;
  try {
    if (j.contains("datastore")) {
      cfg.datastore_path = resolve(base, j.at("datastore").get<std::string>());
    } else if (j.contains("datastore_tsv")) {
      cfg.datastore_path = resolve(base, j.at("datastore_tsv").get<std::string>());
      cfg.datastore_is_tsv = true;
    } else {
      throw ValidationError(json_path.string() +
                            ": missing \"datastore\" or \"datastore_tsv\"");
    }
    for (const auto& t : j.at("tasks")) {
      cfg.task_files.push_back(resolve(base, t.get<std::string>()));
    }
    for (const auto& c : j.at("corpus")) {
      cfg.corpus_shards.push_back(resolve(base, c.get<std::string>()));
    }
    std::sort(cfg.corpus_shards.begin(), cfg.corpus_shards.end());
    if (j.contains("k")) cfg.k = j.at("k").get<size_t>();
    // Default cap: 100k for a single task, 200k when tasks are merged.
    cfg.mining.total_cap = cfg.task_files.size() > 1 ? 200000 : 100000;
    if (j.contains("mining")) {
      const auto& m = j.at("mining");
      if (m.contains("total_cap")) cfg.mining.total_cap = m.at("total_cap").get<size_t>();
      if (m.contains("policy")) {
        std::string policy = m.at("policy").get<std::string>();
        if (policy == "proportional") {
          cfg.mining.policy = MiningConfig::CapPolicy::proportional;
        } else if (policy == "unlimited") {
          cfg.mining.policy = MiningConfig::CapPolicy::unlimited;
        } else {
          throw ValidationError("unknown cap policy \"" + policy + "\"");
        }
      }
      if (m.contains("min_sentence_tokens")) {
        cfg.mining.min_sentence_tokens = m.at("min_sentence_tokens").get<size_t>();
      }
      if (m.contains("max_sentence_tokens")) {
        cfg.mining.max_sentence_tokens = m.at("max_sentence_tokens").get<size_t>();
      }
    }
    if (j.contains("train")) {
      cfg.train = train_config_from_json(j.at("train").dump());
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      if (m.contains("hidden")) cfg.model_hidden = m.at("hidden").get<size_t>();
      if (m.contains("tied")) cfg.model_tied = m.at("tied").get<bool>();
      if (m.contains("init_output_from_datastore")) {
        cfg.init_output_from_datastore =
            m.at("init_output_from_datastore").get<bool>();
      }
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("eval")) {
      for (const auto& e : j.at("eval")) {
        cfg.eval_sets.emplace_back(resolve(base, e.at("task").get<std::string>()),
                                   resolve(base, e.at("data").get<std::string>()));
      }
    }
    if (j.contains("out_dir")) {
      cfg.out_dir = resolve(base, j.at("out_dir").get<std::string>());
    } else {
      throw ValidationError(json_path.string() + ": missing \"out_dir\"");
    }
    if (j.contains("workers")) cfg.workers = j.at("workers").get<unsigned>();
    if (j.contains("dump_predictions")) {
      cfg.dump_predictions = j.at("dump_predictions").get<bool>();
    }
  } catch (const ordered_json::exception& e) {
    throw ValidationError(json_path.string() + ": " + e.what());
  }
  return cfg;
}

std::vector<std::string> model_vocab_for(const LabelDatastore& ds) {
  std::vector<std::string> vocab;
  vocab.reserve(ds.size() + 2);
  vocab.emplace_back(kMaskToken);
  vocab.emplace_back(kOovToken);
  for (const std::string& tok : ds.tokens()) {
    if (tok == kMaskToken || tok == kOovToken) continue;
    vocab.push_back(tok);
  }
  return vocab;
}

ModelParams init_model_for(const LabelDatastore& ds, size_t hidden, bool tied,
                           bool init_output_from_datastore, uint64_t seed) {
  ModelParams params =
      init_params(model_vocab_for(ds), ds.dim(), hidden, tied, seed);
  if (init_output_from_datastore) {
    std::vector<float>& out = params.output_matrix();
    for (size_t r = 0; r < ds.size(); ++r) {
      auto id = params.vocab_index.find(ds.tokens()[r]);
      if (id == params.vocab_index.end()) continue;
      std::memcpy(out.data() + id->second * params.dim,
                  ds.matrix().data() + r * ds.dim(),
                  ds.dim() * sizeof(float));
    }
  }
  return params;
}

Report run_pipeline(const PipelineConfig& cfg) {
  if (cfg.task_files.empty()) throw ValidationError("pipeline: no tasks given");
  for (const auto& shard : cfg.corpus_shards) {
    if (!std::filesystem::exists(shard)) {
      throw ValidationError("corpus shard not found: " + shard.string());
    }
  }

  // The digest covers input contents and the semantic knobs, not paths, so
  // identical inputs produce identical stamps wherever they live.
  Digest digest;
  digest.update_file(cfg.datastore_path);
  for (const auto& t : cfg.task_files) digest.update_file(t);
  for (const auto& c : cfg.corpus_shards) digest.update_file(c);
  digest.update_u64(cfg.k);
  digest.update_u64(cfg.mining.total_cap);
  digest.update_u64(cfg.mining.policy == MiningConfig::CapPolicy::proportional ? 1 : 0);
  digest.update_u64(cfg.mining.min_sentence_tokens);
  digest.update_u64(cfg.mining.max_sentence_tokens);
  digest.update(train_config_to_json(cfg.train));
  digest.update_u64(cfg.model_hidden);
  digest.update_u64(cfg.model_tied ? 1 : 0);
  digest.update_u64(cfg.init_output_from_datastore ? 1 : 0);
  digest.update_u64(cfg.seed);
  for (const auto& [task, data] : cfg.eval_sets) {
    digest.update_file(task);
    digest.update_file(data);
  }
  const std::string digest_hex = digest.hex();

  std::filesystem::create_directories(cfg.out_dir);

  LabelDatastore ds = cfg.datastore_is_tsv
                          ? LabelDatastore::import_tsv(cfg.datastore_path)
                          : LabelDatastore::load(cfg.datastore_path);

  std::vector<TaskSpec> specs;
  for (const auto& path : cfg.task_files) specs.push_back(load_task_spec(path));

  MergedTasks merged = merge_tasks(specs, ds, cfg.k);
  save_neighbor_set(cfg.out_dir / "neighbors.json", merged.union_set);

  MiningResult mined = mine(cfg.corpus_shards, merged.union_set, cfg.mining,
                            cfg.workers);
  save_mined_dataset(cfg.out_dir / "mined.jsonl", mined.examples);
  if (mined.examples.empty()) {
    throw ValidationError("mining produced no examples; corpus has no neighbor tokens");
  }

  TrainConfig train_cfg = cfg.train;
  train_cfg.rng_seed = cfg.seed;
  ModelParams params = init_model_for(ds, cfg.model_hidden, cfg.model_tied,
                                      cfg.init_output_from_datastore, cfg.seed);
  TrainState state =
      train_cfg.mode == TrainConfig::Mode::sda
          ? train_sda(std::move(params), mined.examples, train_cfg)
          : train_go(std::move(params), mined.examples, std::move(merged.weights),
                     train_cfg);
  save_checkpoint(cfg.out_dir / "checkpoint", state, digest_hex);

  Report report;
  report.seed = cfg.seed;
  report.config_digest = digest_hex;
  for (const auto& [task_path, data_path] : cfg.eval_sets) {
    TaskSpec spec = load_task_spec(task_path);
    std::vector<EvalExample> examples = load_eval_examples(data_path);
    std::vector<Prediction> dump;
    report.rows.push_back(evaluate(state.params, spec, examples,
                                   cfg.dump_predictions ? &dump : nullptr));
    if (cfg.dump_predictions) {
      save_predictions(cfg.out_dir / ("predictions_" + spec.name + ".jsonl"),
                       dump);
    }
  }
  save_report(cfg.out_dir / "report.tsv", report);
  return report;
}

}  // namespace gotune
