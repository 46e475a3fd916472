// gotune: label-space datastore building, neighbor retrieval, task-aware
// corpus mining, geometry-weighted training, and zero-shot evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gotune/core.hpp"
#include "gotune/datastore.hpp"
#include "gotune/digest.hpp"
#include "gotune/errors.hpp"
#include "gotune/evaluator.hpp"
#include "gotune/geometry.hpp"
#include "gotune/miner.hpp"
#include "gotune/model.hpp"
#include "gotune/pipeline.hpp"
#include "gotune/synthetic.hpp"
#include "gotune/trainer.hpp"

namespace fs = std::filesystem;
using namespace gotune;

namespace {

// Minimal glob over one path pattern: '*' and '?' in the filename part.
bool glob_match(const std::string& pattern, const std::string& name) {
  size_t p = 0, n = 0, star = std::string::npos, match = 0;
  while (n < name.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      match = n;
    } else if (star != std::string::npos) {
      p = star + 1;
      n = ++match;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
  fs::path pat(pattern);
  const std::string filename = pat.filename().string();
  if (filename.find('*') == std::string::npos &&
      filename.find('?') == std::string::npos) {
    return {pat};
  }
  fs::path dir = pat.parent_path();
  if (dir.empty()) dir = ".";
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) {
    throw ValidationError("no such directory: " + dir.string());
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (glob_match(filename, entry.path().filename().string())) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) {
    throw ValidationError("pattern matched no files: " + pattern);
  }
  return out;
}

std::vector<fs::path> expand_globs(const std::vector<std::string>& patterns) {
  std::vector<fs::path> out;
  for (const std::string& p : patterns) {
    for (fs::path& path : expand_glob(p)) out.push_back(std::move(path));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) {
    throw ValidationError(std::string(what) + " not found: " + p.string());
  }
}

std::string read_file(const fs::path& p, const char* what) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError(std::string(what) + " not readable: " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig load_train_config(const fs::path& path) {
  return train_config_from_json(read_file(path, "train config"));
}

struct ModelInitSpec {
  fs::path datastore;
  fs::path init_checkpoint;
  size_t hidden = 32;
  bool tied = false;
  bool init_output_from_datastore = true;
};

// The train config file may carry a "model" section telling the trainer how
// to construct the starting parameters.
ModelInitSpec model_spec_from_config(const fs::path& config_path) {
  ModelInitSpec spec;
  nlohmann::json j =
      nlohmann::json::parse(read_file(config_path, "train config"), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ValidationError(config_path.string() + ": invalid JSON");
  }
  const fs::path base = config_path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("datastore")) {
      spec.datastore = resolve(m.at("datastore").get<std::string>());
    }
    if (m.contains("init_checkpoint")) {
      spec.init_checkpoint = resolve(m.at("init_checkpoint").get<std::string>());
    }
    if (m.contains("hidden")) spec.hidden = m.at("hidden").get<size_t>();
    if (m.contains("tied")) spec.tied = m.at("tied").get<bool>();
    if (m.contains("init_output_from_datastore")) {
      spec.init_output_from_datastore =
          m.at("init_output_from_datastore").get<bool>();
    }
  }
  return spec;
}

ModelParams make_initial_model(const ModelInitSpec& spec, uint64_t seed) {
  if (!spec.init_checkpoint.empty()) {
    return load_model(spec.init_checkpoint);
  }
  if (spec.datastore.empty()) {
    throw ValidationError(
        "train config needs model.datastore or model.init_checkpoint");
  }
  LabelDatastore ds = LabelDatastore::load(spec.datastore);
  return init_model_for(ds, spec.hidden, spec.tied,
                        spec.init_output_from_datastore, seed);
}

int cmd_build_datastore(const std::string& tsv, const std::string& goemb,
                        const std::string& out) {
  LabelDatastore ds = !tsv.empty() ? LabelDatastore::import_tsv(tsv)
                                   : LabelDatastore::load(goemb);
  ds.save(out);
  std::cout << "datastore: " << ds.size() << " tokens, dim " << ds.dim()
            << " -> " << out << "\n";
  return 0;
}

int cmd_neighbors(const std::string& datastore, const std::string& task,
                  const std::vector<std::string>& task_globs, size_t k,
                  bool cosine, const std::string& out) {
  LabelDatastore ds = LabelDatastore::load(datastore);
  NeighborSet ns;
  if (!task.empty()) {
    ns = build_neighbor_set(ds, load_task_spec(task), k, cosine);
  } else {
    std::vector<TaskSpec> specs;
    for (const fs::path& p : expand_globs(task_globs)) {
      specs.push_back(load_task_spec(p));
    }
    if (cosine) {
      throw ValidationError("--cosine is not supported with --tasks merging");
    }
    ns = merge_tasks(specs, ds, k).union_set;
  }
  save_neighbor_set(out, ns);

  std::cout << "task: " << ns.task << "\n";
  std::cout << "seeds:";
  for (const std::string& s : ns.seeds) std::cout << ' ' << s;
  std::cout << "\n";
  std::cout << "token\tscore\tseed\n";
  for (const NeighborEntry& e : ns.entries) {
    std::printf("%s\t%.4f\t%s\n", e.token.c_str(), e.score, e.seed.c_str());
  }
  return 0;
}

int cmd_mine(const std::vector<std::string>& corpus, const std::string& neighbors,
             size_t cap, const std::string& policy, size_t min_tokens,
             size_t max_tokens, unsigned workers, const std::string& out) {
  NeighborSet ns = load_neighbor_set(neighbors);
  MiningConfig cfg;
  cfg.total_cap = cap;
  if (policy == "proportional") {
    cfg.policy = MiningConfig::CapPolicy::proportional;
  } else if (policy == "unlimited") {
    cfg.policy = MiningConfig::CapPolicy::unlimited;
  } else {
    throw ValidationError("unknown cap policy \"" + policy + "\"");
  }
  cfg.min_sentence_tokens = min_tokens;
  cfg.max_sentence_tokens = max_tokens;

  std::vector<fs::path> shards = expand_globs(corpus);
  for (const fs::path& shard : shards) require_exists(shard, "corpus shard");
  MiningResult result = mine(shards, ns, cfg, workers);
  save_mined_dataset(out, result.examples);
  std::cout << "scanned " << result.stats.documents_scanned << " documents, "
            << result.stats.sentences_scanned << " sentences; emitted "
            << result.stats.examples_emitted << " examples over "
            << result.stats.per_token_counts.size() << " targets -> " << out
            << "\n";
  return 0;
}

int cmd_train(const std::string& mode, const std::string& data,
              const std::string& neighbors, const std::string& config,
              uint64_t seed, bool seed_given, const std::string& out) {
  TrainConfig cfg = load_train_config(config);
  if (mode == "sda") {
    cfg.mode = TrainConfig::Mode::sda;
  } else if (mode == "go") {
    cfg.mode = TrainConfig::Mode::go;
  } else {
    throw ValidationError("unknown mode \"" + mode + "\" (want sda or go)");
  }
  if (seed_given) cfg.rng_seed = seed;

  std::vector<MinedExample> dataset = load_mined_dataset(data);
  ModelInitSpec model_spec = model_spec_from_config(config);
  ModelParams params = make_initial_model(model_spec, cfg.rng_seed);

  Digest digest;
  digest.update_file(data);
  digest.update(read_file(config, "train config"));
  digest.update_u64(cfg.rng_seed);
  digest.update(mode);

  TrainState state;
  if (cfg.mode == TrainConfig::Mode::sda) {
    state = train_sda(std::move(params), dataset, cfg);
  } else {
    if (neighbors.empty()) {
      throw ValidationError("--neighbors is required for --mode go");
    }
    digest.update_file(neighbors);
    NeighborSet ns = load_neighbor_set(neighbors);
    std::vector<GeometricWeights> weights;
    for (const std::string& s : ns.seeds) {
      weights.push_back(geometric_weights_from(ns, ns.task, s));
    }
    state = train_go(std::move(params), dataset, std::move(weights), cfg);
  }
  save_checkpoint(out, state, digest.hex());
  std::cout << "trained " << cfg.epochs << " epochs (" << state.steps
            << " steps) -> " << out << "\n";
  if (!state.history.empty()) {
    std::printf("final model_loss=%.6f constraint_loss=%.9f\n",
                state.history.back().model_loss,
                state.history.back().constraint_loss);
  }
  return 0;
}

int cmd_train_mgo(const std::vector<std::string>& task_globs,
                  const std::string& datastore, const std::string& data,
                  const std::string& config, size_t k, uint64_t seed,
                  bool seed_given, const std::string& out) {
  TrainConfig cfg = load_train_config(config);
  cfg.mode = TrainConfig::Mode::go;
  if (seed_given) cfg.rng_seed = seed;

  LabelDatastore ds = LabelDatastore::load(datastore);
  std::vector<TaskSpec> specs;
  std::vector<fs::path> task_paths = expand_globs(task_globs);
  for (const fs::path& p : task_paths) specs.push_back(load_task_spec(p));
  MergedTasks merged = merge_tasks(specs, ds, k);

  std::vector<MinedExample> dataset = load_mined_dataset(data);
  ModelInitSpec model_spec = model_spec_from_config(config);
  if (model_spec.datastore.empty() && model_spec.init_checkpoint.empty()) {
    model_spec.datastore = datastore;
  }
  ModelParams params = make_initial_model(model_spec, cfg.rng_seed);

  Digest digest;
  digest.update_file(data);
  digest.update(read_file(config, "train config"));
  digest.update_u64(cfg.rng_seed);
  digest.update_u64(k);
  for (const fs::path& p : task_paths) digest.update_file(p);
  digest.update_file(datastore);

  TrainState state =
      train_go(std::move(params), dataset, std::move(merged.weights), cfg);
  save_checkpoint(out, state, digest.hex());
  std::cout << "trained " << specs.size() << " merged tasks, " << cfg.epochs
            << " epochs -> " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& task,
             const std::string& data, const std::string& report_path,
             const std::string& dump) {
  TaskSpec spec = load_task_spec(task);
  std::vector<EvalExample> examples = load_eval_examples(data);
  ModelParams params = load_model(fs::path(checkpoint) / "model.gomlm");

  Digest digest;
  digest.update_file(fs::path(checkpoint) / "model.gomlm");
  digest.update_file(task);
  digest.update_file(data);

  Report report;
  report.config_digest = digest.hex();
  std::vector<Prediction> predictions;
  report.rows.push_back(evaluate(params, spec, examples,
                                 dump.empty() ? nullptr : &predictions));
  save_report(report_path, report);
  if (!dump.empty()) save_predictions(dump, predictions);
  std::printf("%s: accuracy %.4f over %zu examples\n", spec.name.c_str(),
              report.rows[0].accuracy, report.rows[0].n);
  return 0;
}

int cmd_report(const std::vector<std::string>& report_globs,
               const std::string& out) {
  std::vector<fs::path> paths = expand_globs(report_globs);
  std::string merged = "task\taccuracy\tn\n";
  std::string comments;
  char buf[64];
  for (const fs::path& p : paths) {
    Report r = load_report(p);
    for (const ReportRow& row : r.rows) {
      std::snprintf(buf, sizeof(buf), "%.4f", row.accuracy);
      merged += row.task + "\t" + buf + "\t" + std::to_string(row.n) + "\n";
    }
    comments += "# seed=" + std::to_string(r.seed) + "\n";
    comments += "# config=" + r.config_digest + "\n";
  }
  merged += comments;
  if (out.empty()) {
    std::cout << merged;
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw ValidationError("cannot write merged report: " + out);
    f << merged;
  }
  return 0;
}

int cmd_pipeline(const std::string& config) {
  require_exists(config, "pipeline config");
  PipelineConfig cfg = parse_pipeline_config(config);
  Report report = run_pipeline(cfg);
  for (const ReportRow& row : report.rows) {
    std::printf("%s\t%.4f\t%zu\n", row.task.c_str(), row.accuracy, row.n);
  }
  std::cout << "report -> " << (cfg.out_dir / "report.tsv").string() << "\n";
  return 0;
}

int cmd_gen_synthetic(const std::string& out, uint64_t seed, bool two_tasks,
                      size_t shards, size_t eval_n) {
  SyntheticWorld world = generate_synthetic_world(seed, two_tasks, shards, eval_n);
  write_synthetic_world(world, out);
  std::cout << "synthetic world (" << world.tasks.size() << " tasks, "
            << world.datastore.size() << " tokens) -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gotune: geometry-weighted self-supervised tuning pipeline"};
  app.require_subcommand(1);

  // build-datastore
  std::string bd_tsv, bd_goemb, bd_out;
  auto* bd = app.add_subcommand("build-datastore",
                                "Build or re-encode a label datastore");
  auto* bd_tsv_opt = bd->add_option("--tsv", bd_tsv, "TSV embedding export");
  auto* bd_goemb_opt =
      bd->add_option("--goemb", bd_goemb, "existing GOEMB file to validate");
  bd->add_option("--out", bd_out, "output GOEMB path")->required();
  bd_tsv_opt->excludes(bd_goemb_opt);

  // neighbors
  std::string nb_datastore, nb_task, nb_out;
  std::vector<std::string> nb_tasks;
  size_t nb_k = 100;
  bool nb_cosine = false;
  auto* nb = app.add_subcommand("neighbors",
                                "Retrieve per-seed neighbor label sets");
  nb->add_option("--datastore", nb_datastore, "GOEMB datastore")->required();
  auto* nb_task_opt = nb->add_option("--task", nb_task, "task document");
  auto* nb_tasks_opt = nb->add_option(
      "--tasks", nb_tasks, "task document glob(s); merges seed labels");
  nb->add_option("--k", nb_k, "neighbors per seed")->capture_default_str();
  nb->add_flag("--cosine", nb_cosine,
               "score by cosine instead of raw dot product");
  nb->add_option("--out", nb_out, "neighbor set JSON output")->required();
  nb_task_opt->excludes(nb_tasks_opt);

  // mine
  std::vector<std::string> mn_corpus;
  std::string mn_neighbors, mn_out, mn_policy = "proportional";
  size_t mn_cap = 100000, mn_min = 5, mn_max = 64;
  unsigned mn_workers = 1;
  auto* mn = app.add_subcommand("mine", "Extract masked examples from a corpus");
  mn->add_option("--corpus", mn_corpus, "corpus shard glob(s)")->required();
  mn->add_option("--neighbors", mn_neighbors, "neighbor set JSON")->required();
  mn->add_option("--cap", mn_cap, "total example cap")->capture_default_str();
  mn->add_option("--policy", mn_policy, "per-token cap policy: proportional|unlimited")
      ->capture_default_str()
      ->check(CLI::IsMember({"proportional", "unlimited"}));
  mn->add_option("--min-tokens", mn_min, "minimum sentence length")
      ->capture_default_str();
  mn->add_option("--max-tokens", mn_max, "maximum sentence length")
      ->capture_default_str();
  mn->add_option("--workers", mn_workers, "parallel shard scanners")
      ->capture_default_str();
  mn->add_option("--out", mn_out, "mined dataset JSONL output")->required();

  // train
  std::string tr_mode, tr_data, tr_neighbors, tr_config, tr_out;
  uint64_t tr_seed = 0;
  auto* tr = app.add_subcommand("train", "Train a checkpoint on mined data");
  tr->add_option("--mode", tr_mode, "sda|go")
      ->required()
      ->check(CLI::IsMember({"sda", "go"}));
  tr->add_option("--data", tr_data, "mined dataset JSONL")->required();
  tr->add_option("--neighbors", tr_neighbors, "neighbor set JSON (go mode)");
  tr->add_option("--config", tr_config, "train config JSON")->required();
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "rng seed override");
  tr->add_option("--out", tr_out, "checkpoint directory")->required();

  // train-mgo
  std::vector<std::string> tm_tasks;
  std::string tm_datastore, tm_data, tm_config, tm_out;
  size_t tm_k = 100;
  uint64_t tm_seed = 0;
  auto* tm = app.add_subcommand(
      "train-mgo", "Merge tasks' seed labels and train one go checkpoint");
  tm->add_option("--tasks", tm_tasks, "task document glob(s)")->required();
  tm->add_option("--datastore", tm_datastore, "GOEMB datastore")->required();
  tm->add_option("--data", tm_data, "mined dataset JSONL")->required();
  tm->add_option("--config", tm_config, "train config JSON")->required();
  tm->add_option("--k", tm_k, "neighbors per seed")->capture_default_str();
  auto* tm_seed_opt = tm->add_option("--seed", tm_seed, "rng seed override");
  tm->add_option("--out", tm_out, "checkpoint directory")->required();

  // eval
  std::string ev_checkpoint, ev_task, ev_data, ev_report, ev_dump;
  auto* ev = app.add_subcommand("eval", "Zero-shot evaluation of a checkpoint");
  ev->add_option("--checkpoint", ev_checkpoint, "checkpoint directory")->required();
  ev->add_option("--task", ev_task, "task document")->required();
  ev->add_option("--data", ev_data, "eval examples JSONL")->required();
  ev->add_option("--report", ev_report, "report TSV output")->required();
  ev->add_option("--dump", ev_dump, "per-example prediction JSONL output");

  // report
  std::vector<std::string> rp_globs;
  std::string rp_out;
  auto* rp = app.add_subcommand("report", "Merge report TSVs");
  rp->add_option("--reports", rp_globs, "report TSV glob(s)")->required();
  rp->add_option("--out", rp_out, "merged TSV output (stdout when omitted)");

  // pipeline
  std::string pl_config;
  auto* pl = app.add_subcommand(
      "pipeline", "Run datastore -> neighbors -> mine -> train -> eval");
  pl->add_option("--config", pl_config, "pipeline config JSON")->required();

  // gen-synthetic
  std::string gs_out;
  uint64_t gs_seed = 42;
  bool gs_two = false;
  size_t gs_shards = 4, gs_eval = 200;
  auto* gs = app.add_subcommand("gen-synthetic",
                                "Generate a synthetic benchmark world");
  gs->add_option("--out", gs_out, "output directory")->required();
  gs->add_option("--seed", gs_seed, "rng seed")->capture_default_str();
  gs->add_flag("--two-tasks", gs_two, "emit the second task as well");
  gs->add_option("--shards", gs_shards, "corpus shard count")->capture_default_str();
  gs->add_option("--eval-n", gs_eval, "eval examples per task")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (bd->parsed()) {
      if (bd_tsv.empty() && bd_goemb.empty()) {
        std::cerr << "build-datastore: need --tsv or --goemb\n";
        return 1;
      }
      return cmd_build_datastore(bd_tsv, bd_goemb, bd_out);
    }
    if (nb->parsed()) {
      if (nb_task.empty() && nb_tasks.empty()) {
        std::cerr << "neighbors: need --task or --tasks\n";
        return 1;
      }
      return cmd_neighbors(nb_datastore, nb_task, nb_tasks, nb_k, nb_cosine,
                           nb_out);
    }
    if (mn->parsed()) {
      return cmd_mine(mn_corpus, mn_neighbors, mn_cap, mn_policy, mn_min,
                      mn_max, mn_workers, mn_out);
    }
    if (tr->parsed()) {
      return cmd_train(tr_mode, tr_data, tr_neighbors, tr_config, tr_seed,
                       tr_seed_opt->count() > 0, tr_out);
    }
    if (tm->parsed()) {
      return cmd_train_mgo(tm_tasks, tm_datastore, tm_data, tm_config, tm_k,
                           tm_seed, tm_seed_opt->count() > 0, tm_out);
    }
    if (ev->parsed()) {
      return cmd_eval(ev_checkpoint, ev_task, ev_data, ev_report, ev_dump);
    }
    if (rp->parsed()) {
      return cmd_report(rp_globs, rp_out);
    }
    if (pl->parsed()) {
      return cmd_pipeline(pl_config);
    }
    if (gs->parsed()) {
      return cmd_gen_synthetic(gs_out, gs_seed, gs_two, gs_shards, gs_eval);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected failure: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
