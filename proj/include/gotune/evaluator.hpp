#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gotune/core.hpp"
#include "gotune/model.hpp"

namespace gotune {

struct Prediction {
  size_t id = 0;
  std::vector<double> log_probs;  // aligned with spec.seed_labels
  std::string predicted;          // argmax seed; ties go to the earliest seed
  bool correct = false;
};

Prediction predict(const ModelParams& params, const TaskSpec& spec,
                   const EvalExample& example, size_t id);

// Accuracy is the exact fraction of correct predictions. Per-example
// predictions are appended to `dump` when provided.
ReportRow evaluate(const ModelParams& params, const TaskSpec& spec,
                   const std::vector<EvalExample>& examples,
                   std::vector<Prediction>* dump = nullptr);

std::string prediction_to_json(const Prediction& p);
void save_predictions(const std::filesystem::path& path,
                      const std::vector<Prediction>& preds);

}  // namespace gotune
