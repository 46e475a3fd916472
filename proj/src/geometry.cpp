#include "gotune/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gotune/errors.hpp"

namespace gotune {

namespace {

using ordered_json = nlohmann::ordered_json;

void check_shape(const GeometricWeights& gw) {
  if (gw.neighbor_tokens.empty()) {
    throw ValidationError("empty neighbor list for seed \"" + gw.seed + "\"");
  }
  if (gw.base_logits.size() != gw.neighbor_tokens.size() ||
      gw.phi.size() != gw.neighbor_tokens.size()) {
    throw ValidationError("geometric weights shape mismatch for seed \"" +
                          gw.seed + "\"");
  }
}

}  // namespace

std::vector<double> kde_weights(const GeometricWeights& gw) {
  check_shape(gw);
  const size_t n = gw.neighbor_tokens.size();
  std::vector<double> w(n);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (size_t t = 0; t < n; ++t) {
    w[t] = gw.base_logits[t] + gw.phi[t];
    max_logit = std::max(max_logit, w[t]);
  }
  double denom = 0.0;
  for (size_t t = 0; t < n; ++t) {
    w[t] = std::exp(w[t] - max_logit);
    denom += w[t];
  }
  for (size_t t = 0; t < n; ++t) w[t] /= denom;
  return w;
}

double aggregate(const GeometricWeights& gw, std::span<const double> p_z) {
  std::vector<double> w = kde_weights(gw);
  if (p_z.size() != w.size()) {
    throw ValidationError("aggregate length mismatch: " +
                          std::to_string(p_z.size()) + " probabilities vs " +
                          std::to_string(w.size()) + " neighbors");
  }
  double acc = 0.0;
  for (size_t t = 0; t < w.size(); ++t) acc += w[t] * p_z[t];
  return acc;
}

double constraint_loss(std::span<const double> p_y,
                       std::span<const double> aggregates) {
  if (p_y.empty()) throw ValidationError("constraint_loss: empty batch");
  if (p_y.size() != aggregates.size()) {
    throw ValidationError("constraint_loss: batch length mismatch");
  }
  double acc = 0.0;
  for (size_t b = 0; b < p_y.size(); ++b) {
    double r = p_y[b] - aggregates[b];
    acc += r * r;
  }
  return acc / static_cast<double>(p_y.size());
}

std::vector<double> constraint_grad_phi(
    const GeometricWeights& gw, std::span<const double> p_y,
    const std::vector<std::vector<double>>& p_z) {
  check_shape(gw);
  const size_t n = gw.neighbor_tokens.size();
  const size_t batch = p_y.size();
  if (batch == 0) throw ValidationError("constraint_grad_phi: empty batch");
  if (p_z.size() != batch) {
    throw ValidationError("constraint_grad_phi: batch length mismatch");
  }
  for (const auto& row : p_z) {
    if (row.size() != n) {
      throw ValidationError("constraint_grad_phi: p_z width mismatch");
    }
  }

  std::vector<double> w = kde_weights(gw);

  // dL/dw_t = (2/B) sum_b (agg_b - p_y_b) p_z[b][t]
  std::vector<double> grad_w(n, 0.0);
  for (size_t b = 0; b < batch; ++b) {
    double agg = 0.0;
    for (size_t t = 0; t < n; ++t) agg += w[t] * p_z[b][t];
    double coef = 2.0 * (agg - p_y[b]) / static_cast<double>(batch);
    for (size_t t = 0; t < n; ++t) grad_w[t] += coef * p_z[b][t];
  }

  // Through the softmax: dL/dphi_j = w_j (grad_w_j - sum_t w_t grad_w_t).
  double mean = 0.0;
  for (size_t t = 0; t < n; ++t) mean += w[t] * grad_w[t];
  std::vector<double> grad_phi(n);
  for (size_t j = 0; j < n; ++j) grad_phi[j] = w[j] * (grad_w[j] - mean);
  return grad_phi;
}

double phi_line_search_step(GeometricWeights& gw, std::span<const double> p_y,
                            const std::vector<std::vector<double>>& p_z,
                            double initial_step, int max_halvings) {
  const size_t n = gw.neighbor_tokens.size();
  auto loss_at = [&](const std::vector<double>& phi) {
    GeometricWeights probe = gw;
    probe.phi = phi;
    std::vector<double> w = kde_weights(probe);
    std::vector<double> aggs(p_y.size());
    for (size_t b = 0; b < p_y.size(); ++b) {
      double agg = 0.0;
      for (size_t t = 0; t < n; ++t) agg += w[t] * p_z[b][t];
      aggs[b] = agg;
    }
    return constraint_loss(p_y, aggs);
  };

  const double base_loss = loss_at(gw.phi);
  std::vector<double> grad = constraint_grad_phi(gw, p_y, p_z);
  double step = initial_step;
  for (int attempt = 0; attempt <= max_halvings; ++attempt) {
    std::vector<double> candidate(n);
    for (size_t t = 0; t < n; ++t) candidate[t] = gw.phi[t] - step * grad[t];
    double candidate_loss = loss_at(candidate);
    if (candidate_loss <= base_loss) {
      gw.phi = std::move(candidate);
      return candidate_loss;
    }
    step *= 0.5;
  }
  return base_loss;  // no step accepted, phi unchanged
}

GeometricWeights geometric_weights_from(const NeighborSet& ns,
                                        const std::string& task,
                                        const std::string& seed) {
  if (std::find(ns.seeds.begin(), ns.seeds.end(), seed) == ns.seeds.end()) {
    throw ValidationError("seed \"" + seed + "\" not in neighbor set for task " +
                          ns.task);
  }
  GeometricWeights gw;
  gw.task = task;
  gw.seed = seed;
  for (const NeighborEntry& e : ns.entries) {
    if (e.seed != seed) continue;
    if (std::find(ns.seeds.begin(), ns.seeds.end(), e.token) != ns.seeds.end()) {
      continue;  // seed targets carry weight 1, outside the softmax
    }
    gw.neighbor_tokens.push_back(e.token);
    gw.base_logits.push_back(e.score);
    gw.phi.push_back(0.0);
  }
  return gw;
}

std::string geometric_weights_to_json(const GeometricWeights& gw) {
  ordered_json j;
  j["task"] = gw.task;
  j["seed"] = gw.seed;
  j["neighbor_tokens"] = gw.neighbor_tokens;
  j["base_logits"] = gw.base_logits;
  j["phi"] = gw.phi;
  return j.dump();
}

GeometricWeights geometric_weights_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ValidationError("malformed geometric weights: invalid JSON");
  }
  GeometricWeights gw;
  try {
    gw.task = j.at("task").get<std::string>();
    gw.seed = j.at("seed").get<std::string>();
    gw.neighbor_tokens = j.at("neighbor_tokens").get<std::vector<std::string>>();
    gw.base_logits = j.at("base_logits").get<std::vector<double>>();
    gw.phi = j.at("phi").get<std::vector<double>>();
  } catch (const ordered_json::exception& e) {
    throw ValidationError(std::string("malformed geometric weights: ") + e.what());
  }
  if (gw.base_logits.size() != gw.neighbor_tokens.size() ||
      gw.phi.size() != gw.neighbor_tokens.size()) {
    throw ValidationError("malformed geometric weights: array length mismatch");
  }
  return gw;
}

void save_geometric_weights(const std::filesystem::path& path,
                            const GeometricWeights& gw) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot write geometric weights: " + path.string());
  }
  out << geometric_weights_to_json(gw) << '\n';
}

GeometricWeights load_geometric_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open geometric weights: " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return geometric_weights_from_json(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace gotune
