#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "gotune/errors.hpp"
#include "gotune/evaluator.hpp"

using namespace gotune;

namespace {

std::vector<std::string> vocab() {
  return {std::string(kMaskToken), std::string(kOovToken),
          "pos", "neg", "w0", "w1", "w2"};
}

TaskSpec toy_spec() {
  return parse_task_spec(
      R"({"name":"toy","template":"w0 [input] is [label]",
          "seed_labels":["pos","neg"],"task_kind":"k"})");
}

// Forces the argmax by writing the output rows directly.
ModelParams biased_model(double pos_bias) {
  ModelParams params = init_params(vocab(), 4, 3, false, 42);
  std::fill(params.W2.begin(), params.W2.end(), 0.0f);
  std::fill(params.b2.begin(), params.b2.end(), 1.0f);  // out = ones
  size_t pos = params.token_id_checked("pos");
  size_t neg = params.token_id_checked("neg");
  for (size_t j = 0; j < params.dim; ++j) {
    params.U[pos * params.dim + j] = static_cast<float>(pos_bias);
    params.U[neg * params.dim + j] = static_cast<float>(-pos_bias);
  }
  return params;
}

EvalExample example(const std::string& text, const std::string& gold) {
  EvalExample ex;
  ex.inputs["[input]"] = text;
  ex.gold = gold;
  return ex;
}

}  // namespace

TEST_CASE("predict takes the argmax") {
  ModelParams params = biased_model(1.0);
  Prediction p = predict(params, toy_spec(), example("w1 w2", "pos"), 0);
  CHECK(p.predicted == "pos");
  CHECK(p.correct);
  CHECK(p.log_probs.size() == 2);
  CHECK(p.log_probs[0] > p.log_probs[1]);

  ModelParams negative = biased_model(-1.0);
  Prediction q = predict(negative, toy_spec(), example("w1 w2", "pos"), 1);
  CHECK(q.predicted == "neg");
  CHECK_FALSE(q.correct);
}

TEST_CASE("exact ties resolve to the first seed in task order") {
  // pos and neg share an output row value, so their logits tie exactly.
  ModelParams params = init_params(vocab(), 4, 3, false, 7);
  size_t pos = params.token_id_checked("pos");
  size_t neg = params.token_id_checked("neg");
  for (size_t j = 0; j < params.dim; ++j) {
    params.U[neg * params.dim + j] = params.U[pos * params.dim + j];
  }
  Prediction p = predict(params, toy_spec(), example("w1", "neg"), 0);
  CHECK(p.log_probs[0] == p.log_probs[1]);
  CHECK(p.predicted == "pos");
  CHECK_FALSE(p.correct);
}

TEST_CASE("predict validates the gold label") {
  ModelParams params = biased_model(1.0);
  CHECK_THROWS_WITH_AS(predict(params, toy_spec(), example("w1", "meh"), 0),
                       doctest::Contains("not a seed"), ValidationError);
}

TEST_CASE("prediction scores equal score_label exactly") {
  ModelParams params = init_params(vocab(), 4, 3, false, 21);
  EvalExample ex = example("w1 w2 w0", "neg");
  Prediction p = predict(params, toy_spec(), ex, 0);
  std::vector<double> direct = score_label(params, toy_spec(), ex.inputs);
  CHECK(p.log_probs == direct);
}

TEST_CASE("argmax is invariant to a common score shift") {
  ModelParams params = init_params(vocab(), 4, 3, false, 23);
  EvalExample ex = example("w2 w1", "pos");
  Prediction p = predict(params, toy_spec(), ex, 0);
  // Literal restatement on the scores themselves.
  std::vector<double> shifted = p.log_probs;
  for (double& s : shifted) s += 123.456;
  size_t best = 0;
  for (size_t i = 1; i < shifted.size(); ++i) {
    if (shifted[i] > shifted[best]) best = i;
  }
  CHECK(toy_spec().seed_labels[best] == p.predicted);
}

TEST_CASE("evaluate aggregates exact accuracy") {
  ModelParams params = biased_model(1.0);  // always predicts pos
  std::vector<EvalExample> all_correct = {example("w1", "pos"),
                                          example("w2", "pos")};
  ReportRow row = evaluate(params, toy_spec(), all_correct);
  CHECK(row.task == "toy");
  CHECK(row.accuracy == 1.0);
  CHECK(row.n == 2);

  std::vector<EvalExample> balanced = {
      example("w1", "pos"), example("w1", "neg"),
      example("w2", "pos"), example("w2", "neg")};
  row = evaluate(params, toy_spec(), balanced);
  CHECK(row.accuracy == 0.5);  // constant prediction on balanced labels

  CHECK_THROWS_WITH_AS(evaluate(params, toy_spec(), {}),
                       doctest::Contains("empty evaluation set"),
                       ValidationError);
}

TEST_CASE("evaluate dumps per-example predictions and is deterministic") {
  ModelParams params = init_params(vocab(), 4, 3, false, 29);
  std::vector<EvalExample> data = {example("w1 w2", "pos"),
                                   example("w0", "neg"),
                                   example("w2 w2 w1", "pos")};
  std::vector<Prediction> dump1, dump2;
  ReportRow r1 = evaluate(params, toy_spec(), data, &dump1);
  ReportRow r2 = evaluate(params, toy_spec(), data, &dump2);
  CHECK(r1.accuracy == r2.accuracy);
  REQUIRE(dump1.size() == 3);
  for (size_t i = 0; i < dump1.size(); ++i) {
    CHECK(dump1[i].id == i);
    CHECK(prediction_to_json(dump1[i]) == prediction_to_json(dump2[i]));
  }
}
