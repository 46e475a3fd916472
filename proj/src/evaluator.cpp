#include "gotune/evaluator.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "gotune/errors.hpp"

namespace gotune {

Prediction predict(const ModelParams& params, const TaskSpec& spec,
                   const EvalExample& example, size_t id) {
  if (std::find(spec.seed_labels.begin(), spec.seed_labels.end(),
                example.gold) == spec.seed_labels.end()) {
    throw ValidationError("gold label \"" + example.gold +
                          "\" is not a seed of task " + spec.name);
  }
  Prediction p;
  p.id = id;
  p.log_probs = score_label(params, spec, example.inputs);
  size_t best = 0;
  for (size_t i = 1; i < p.log_probs.size(); ++i) {
    if (p.log_probs[i] > p.log_probs[best]) best = i;  // strict: ties keep the earlier seed
  }
  p.predicted = spec.seed_labels[best];
  p.correct = p.predicted == example.gold;
  return p;
}

ReportRow evaluate(const ModelParams& params, const TaskSpec& spec,
                   const std::vector<EvalExample>& examples,
                   std::vector<Prediction>* dump) {
  if (examples.empty()) {
    throw ValidationError("empty evaluation set for task " + spec.name);
  }
  size_t correct = 0;
  for (size_t i = 0; i < examples.size(); ++i) {
    Prediction p = predict(params, spec, examples[i], i);
    if (p.correct) ++correct;
    if (dump) dump->push_back(std::move(p));
  }
  ReportRow row;
  row.task = spec.name;
  row.n = examples.size();
  row.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  return row;
}

std::string prediction_to_json(const Prediction& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["log_probs"] = p.log_probs;
  j["predicted"] = p.predicted;
  j["correct"] = p.correct;
  return j.dump();
}

void save_predictions(const std::filesystem::path& path,
                      const std::vector<Prediction>& preds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write predictions: " + path.string());
  for (const Prediction& p : preds) out << prediction_to_json(p) << '\n';
}

}  // namespace gotune
