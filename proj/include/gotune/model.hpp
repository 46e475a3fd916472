#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gotune/core.hpp"

namespace gotune {

// A small masked LM: mean-of-embeddings context, one tanh hidden layer,
// output projection against per-token rows. Parameters live in float32;
// all accumulation happens in double so finite-difference checks mean
// something.
//
//   ctx    = mean of E rows over non-mask tokens (zero vector if none)
//   hidden = tanh(W1 ctx + b1)
//   out    = W2 hidden + b2
//   logits = U out        (U rows double as output token embeddings)
//   probs  = softmax(logits), max-subtracted
struct ModelParams {
  std::vector<std::string> vocab;  // includes kMaskToken and kOovToken
  size_t dim = 0;                  // embedding width d
  size_t hidden = 0;               // hidden width h
  bool tied = false;               // U aliases E when set
  uint64_t rng_seed = 0;

  std::vector<float> E;   // V x d
  std::vector<float> U;   // V x d; empty when tied
  std::vector<float> W1;  // h x d
  std::vector<float> b1;  // h
  std::vector<float> W2;  // d x h
  std::vector<float> b2;  // d

  std::unordered_map<std::string, size_t> vocab_index;

  size_t vocab_size() const { return vocab.size(); }
  const std::vector<float>& output_matrix() const { return tied ? E : U; }
  std::vector<float>& output_matrix() { return tied ? E : U; }

  // Row id for a token; unknown tokens land on the OOV row.
  size_t token_id_or_oov(const std::string& token) const;
  // Row id for a token that must exist; throws otherwise.
  size_t token_id_checked(const std::string& token) const;

  void rebuild_index();
};

// Deterministic uniform(-0.1, 0.1) init from a counter-based stream per
// tensor; identical (seed, dims) always produce bit-identical parameters.
ModelParams init_params(std::vector<std::string> vocab, size_t dim,
                        size_t hidden, bool tied, uint64_t rng_seed);

struct ForwardTrace {
  std::vector<size_t> context_ids;  // non-mask rows, input order
  std::vector<double> ctx;          // d
  std::vector<double> hid;          // h, post-tanh
  std::vector<double> out;          // d
  std::vector<double> prob;         // V
};

// Probability distribution over the vocabulary at the mask position.
// The trace, when requested, carries what backward needs.
std::vector<double> forward(const ModelParams& params,
                            const std::vector<std::string>& tokens,
                            size_t mask_index, ForwardTrace* trace = nullptr);

// Gradient accumulators, double precision, matching the float tensors.
struct Gradients {
  std::vector<double> E, U, W1, b1, W2, b2;
};
Gradients zero_gradients(const ModelParams& params);

// Weighted cross entropy over a batch:
//   loss = -sum_b w_b log p(target_b | x_b) / sum_b w_b
// Fills exact analytic gradients when `grads` is non-null. Throws on an
// empty batch, all-zero weights, or a target outside the vocabulary.
double loss_wce(const ModelParams& params, std::span<const MinedExample> batch,
                Gradients* grads);

// log p(seed | rendered masked template) for every seed label, one forward
// pass. Seeds must be in the vocabulary.
std::vector<double> score_label(const ModelParams& params, const TaskSpec& spec,
                                const PlaceholderMap& inputs);

// SGD step with optional global-norm clipping (clip_norm <= 0 disables).
void sgd_update(ModelParams& params, const Gradients& grads, double lr,
                double clip_norm);

// GOMLM checkpoint: "GOMLM 1 <V> <d> <h> <tied>\n", vocab lines, tensors as
// little-endian float32 in field order (E, U when untied, W1, b1, W2, b2).
void save_model(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace gotune
