#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gotune/datastore.hpp"

namespace gotune {

// Learnable weighting over one seed's neighbor tokens. The weights are
// softmax(base_logits + phi): at phi == 0 they reduce to the closed-form
// similarity weights, and phi is the learned correction fitted by the
// constraint step.
struct GeometricWeights {
  std::string task;
  std::string seed;
  std::vector<std::string> neighbor_tokens;
  std::vector<double> base_logits;  // seed . neighbor dot products, frozen
  std::vector<double> phi;          // init 0
};

// softmax(base_logits + phi) with max-subtraction; sums to 1 within 1e-12.
// Throws ValidationError on an empty neighbor list.
std::vector<double> kde_weights(const GeometricWeights& gw);

// Convex combination sum_t w_t * p_z[t].
double aggregate(const GeometricWeights& gw, std::span<const double> p_z);

// Mean squared residual (1/B) sum_b (p_y[b] - agg[b])^2.
double constraint_loss(std::span<const double> p_y,
                       std::span<const double> aggregates);

// Exact gradient of constraint_loss w.r.t. phi through the softmax, holding
// the model probabilities fixed. p_z is row-major B x n.
std::vector<double> constraint_grad_phi(
    const GeometricWeights& gw, std::span<const double> p_y,
    const std::vector<std::vector<double>>& p_z);

// One backtracking step on phi: tries initial_step and halves until the
// loss does not increase (keeps phi unchanged if no step helps). Returns
// the loss after the step.
double phi_line_search_step(GeometricWeights& gw, std::span<const double> p_y,
                            const std::vector<std::vector<double>>& p_z,
                            double initial_step, int max_halvings = 30);

// Builds the record for one seed from a neighbor set: the entries assigned
// to that seed, minus any token that is itself a seed of the set (seed
// targets bypass the weighting entirely).
GeometricWeights geometric_weights_from(const NeighborSet& ns,
                                        const std::string& task,
                                        const std::string& seed);

// JSON {"task","seed","neighbor_tokens","base_logits","phi"}; weights are
// always recomputed, never stored.
std::string geometric_weights_to_json(const GeometricWeights& gw);
GeometricWeights geometric_weights_from_json(const std::string& text);
void save_geometric_weights(const std::filesystem::path& path,
                            const GeometricWeights& gw);
GeometricWeights load_geometric_weights(const std::filesystem::path& path);

}  // namespace gotune
