#include "gotune/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "gotune/errors.hpp"
#include "gotune/rng.hpp"

namespace gotune {

namespace {

// Stream ids for parameter init, one per tensor.
enum TensorStream : uint64_t { kE = 1, kU = 2, kW1 = 3, kB1 = 4, kW2 = 5, kB2 = 6 };

void fill_uniform(std::vector<float>& t, uint64_t seed, uint64_t stream) {
  for (size_t i = 0; i < t.size(); ++i) {
    double u = static_cast<double>(CounterRng::hash(seed, stream, i) >> 11) *
               0x1.0p-53;
    t[i] = static_cast<float>(-0.1 + 0.2 * u);
  }
}

void softmax_inplace(std::vector<double>& logits) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double v : logits) max_logit = std::max(max_logit, v);
  double denom = 0.0;
  for (double& v : logits) {
    v = std::exp(v - max_logit);
    denom += v;
  }
  for (double& v : logits) v /= denom;
}

}  // namespace

size_t ModelParams::token_id_or_oov(const std::string& token) const {
  auto it = vocab_index.find(token);
  if (it != vocab_index.end()) return it->second;
  auto oov = vocab_index.find(std::string(kOovToken));
  if (oov == vocab_index.end()) {
    throw ValidationError("model vocabulary is missing the OOV token");
  }
  return oov->second;
}

size_t ModelParams::token_id_checked(const std::string& token) const {
  auto it = vocab_index.find(token);
  if (it == vocab_index.end()) {
    throw ValidationError("token not in model vocabulary: \"" + token + "\"");
  }
  return it->second;
}

void ModelParams::rebuild_index() {
  vocab_index.clear();
  vocab_index.reserve(vocab.size());
  for (size_t i = 0; i < vocab.size(); ++i) {
    if (!vocab_index.emplace(vocab[i], i).second) {
      throw ValidationError("duplicate token in model vocabulary: \"" +
                            vocab[i] + "\"");
    }
  }
}

ModelParams init_params(std::vector<std::string> vocab, size_t dim,
                        size_t hidden, bool tied, uint64_t rng_seed) {
  if (dim == 0 || hidden == 0) {
    throw ValidationError("model dimensions must be positive");
  }
  ModelParams p;
  p.vocab = std::move(vocab);
  p.dim = dim;
  p.hidden = hidden;
  p.tied = tied;
  p.rng_seed = rng_seed;
  p.rebuild_index();
  if (!p.vocab_index.count(std::string(kMaskToken)) ||
      !p.vocab_index.count(std::string(kOovToken))) {
    throw ValidationError("model vocabulary must include " +
                          std::string(kMaskToken) + " and " +
                          std::string(kOovToken));
  }
  const size_t v = p.vocab.size();
  p.E.resize(v * dim);
  fill_uniform(p.E, rng_seed, kE);
  if (!tied) {
    p.U.resize(v * dim);
    fill_uniform(p.U, rng_seed, kU);
  }
  p.W1.resize(hidden * dim);
  fill_uniform(p.W1, rng_seed, kW1);
  p.b1.resize(hidden);
  fill_uniform(p.b1, rng_seed, kB1);
  p.W2.resize(dim * hidden);
  fill_uniform(p.W2, rng_seed, kW2);
  p.b2.resize(dim);
  fill_uniform(p.b2, rng_seed, kB2);
  return p;
}

std::vector<double> forward(const ModelParams& params,
                            const std::vector<std::string>& tokens,
                            size_t mask_index, ForwardTrace* trace) {
  if (mask_index >= tokens.size()) {
    throw ValidationError("mask_index " + std::to_string(mask_index) +
                          " out of range for " + std::to_string(tokens.size()) +
                          " tokens");
  }
  const size_t v = params.vocab_size();
  const size_t d = params.dim;
  const size_t h = params.hidden;
  const std::vector<float>& out_mat = params.output_matrix();

  std::vector<size_t> context_ids;
  context_ids.reserve(tokens.size());
  for (const std::string& tok : tokens) {
    if (tok == kMaskToken) continue;
    context_ids.push_back(params.token_id_or_oov(tok));
  }

  std::vector<double> ctx(d, 0.0);
  if (!context_ids.empty()) {
    for (size_t id : context_ids) {
      const float* row = params.E.data() + id * d;
      for (size_t j = 0; j < d; ++j) ctx[j] += static_cast<double>(row[j]);
    }
    const double inv = 1.0 / static_cast<double>(context_ids.size());
    for (size_t j = 0; j < d; ++j) ctx[j] *= inv;
  }

  std::vector<double> hid(h);
  for (size_t i = 0; i < h; ++i) {
    const float* row = params.W1.data() + i * d;
    double acc = static_cast<double>(params.b1[i]);
    for (size_t j = 0; j < d; ++j) acc += static_cast<double>(row[j]) * ctx[j];
    hid[i] = std::tanh(acc);
  }

  std::vector<double> out(d);
  for (size_t i = 0; i < d; ++i) {
    const float* row = params.W2.data() + i * h;
    double acc = static_cast<double>(params.b2[i]);
    for (size_t j = 0; j < h; ++j) acc += static_cast<double>(row[j]) * hid[j];
    out[i] = acc;
  }

  std::vector<double> prob(v);
  for (size_t r = 0; r < v; ++r) {
    const float* row = out_mat.data() + r * d;
    double acc = 0.0;
    for (size_t j = 0; j < d; ++j) acc += static_cast<double>(row[j]) * out[j];
    prob[r] = acc;
  }
  softmax_inplace(prob);

  if (trace) {
    trace->context_ids = std::move(context_ids);
    trace->ctx = std::move(ctx);
    trace->hid = std::move(hid);
    trace->out = std::move(out);
    trace->prob = prob;
  }
  return prob;
}

Gradients zero_gradients(const ModelParams& params) {
  Gradients g;
  g.E.assign(params.E.size(), 0.0);
  g.U.assign(params.U.size(), 0.0);
  g.W1.assign(params.W1.size(), 0.0);
  g.b1.assign(params.b1.size(), 0.0);
  g.W2.assign(params.W2.size(), 0.0);
  g.b2.assign(params.b2.size(), 0.0);
  return g;
}

double loss_wce(const ModelParams& params, std::span<const MinedExample> batch,
                Gradients* grads) {
  if (batch.empty()) throw ValidationError("loss_wce: empty batch");
  const size_t v = params.vocab_size();
  const size_t d = params.dim;
  const size_t h = params.hidden;

  double weight_sum = 0.0;
  for (const MinedExample& ex : batch) {
    if (ex.weight < 0.0) throw ValidationError("loss_wce: negative weight");
    weight_sum += ex.weight;
  }
  if (weight_sum <= 0.0) throw ValidationError("loss_wce: all-zero weights");

  const std::vector<float>& out_mat = params.output_matrix();
  std::vector<double>* grad_out_mat = nullptr;
  if (grads) grad_out_mat = params.tied ? &grads->E : &grads->U;

  double loss = 0.0;
  std::vector<double> dlogits(v), dout(d), dhid(h), da1(h), dctx(d);
  for (const MinedExample& ex : batch) {
    const size_t target = params.token_id_checked(ex.target);
    if (ex.weight == 0.0) continue;  // contributes nothing to loss or grads
    ForwardTrace trace;
    forward(params, ex.tokens, ex.mask_index, &trace);
    loss += -ex.weight * std::log(trace.prob[target]);
    if (!grads) continue;

    const double coef = ex.weight / weight_sum;
    for (size_t r = 0; r < v; ++r) dlogits[r] = coef * trace.prob[r];
    dlogits[target] -= coef;

    // logits = U out
    std::fill(dout.begin(), dout.end(), 0.0);
    for (size_t r = 0; r < v; ++r) {
      const double g = dlogits[r];
      if (g == 0.0) continue;
      const float* row = out_mat.data() + r * d;
      double* grow = grad_out_mat->data() + r * d;
      for (size_t j = 0; j < d; ++j) {
        grow[j] += g * trace.out[j];
        dout[j] += g * static_cast<double>(row[j]);
      }
    }

    // out = W2 hid + b2
    std::fill(dhid.begin(), dhid.end(), 0.0);
    for (size_t i = 0; i < d; ++i) {
      const double g = dout[i];
      grads->b2[i] += g;
      const float* row = params.W2.data() + i * h;
      double* grow = grads->W2.data() + i * h;
      for (size_t j = 0; j < h; ++j) {
        grow[j] += g * trace.hid[j];
        dhid[j] += g * static_cast<double>(row[j]);
      }
    }

    // hid = tanh(W1 ctx + b1)
    for (size_t i = 0; i < h; ++i) {
      da1[i] = dhid[i] * (1.0 - trace.hid[i] * trace.hid[i]);
    }
    std::fill(dctx.begin(), dctx.end(), 0.0);
    for (size_t i = 0; i < h; ++i) {
      const double g = da1[i];
      grads->b1[i] += g;
      const float* row = params.W1.data() + i * d;
      double* grow = grads->W1.data() + i * d;
      for (size_t j = 0; j < d; ++j) {
        grow[j] += g * trace.ctx[j];
        dctx[j] += g * static_cast<double>(row[j]);
      }
    }

    // ctx = mean of context embedding rows
    if (!trace.context_ids.empty()) {
      const double inv = 1.0 / static_cast<double>(trace.context_ids.size());
      for (size_t id : trace.context_ids) {
        double* grow = grads->E.data() + id * d;
        for (size_t j = 0; j < d; ++j) grow[j] += inv * dctx[j];
      }
    }
  }
  return loss / weight_sum;
}

std::vector<double> score_label(const ModelParams& params, const TaskSpec& spec,
                                const PlaceholderMap& inputs) {
  std::vector<size_t> seed_ids;
  seed_ids.reserve(spec.seed_labels.size());
  for (const std::string& seed : spec.seed_labels) {
    seed_ids.push_back(params.token_id_checked(seed));
  }
  auto [tokens, mask_index] = render_masked(spec, inputs);
  std::vector<double> prob = forward(params, tokens, mask_index);
  std::vector<double> scores;
  scores.reserve(seed_ids.size());
  for (size_t id : seed_ids) scores.push_back(std::log(prob[id]));
  return scores;
}

void sgd_update(ModelParams& params, const Gradients& grads, double lr,
                double clip_norm) {
  double scale = 1.0;
  if (clip_norm > 0.0) {
    double sq = 0.0;
    auto add = [&](const std::vector<double>& g) {
      for (double v : g) sq += v * v;
    };
    add(grads.E);
    add(grads.U);
    add(grads.W1);
    add(grads.b1);
    add(grads.W2);
    add(grads.b2);
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) scale = clip_norm / norm;
  }
  auto apply = [&](std::vector<float>& t, const std::vector<double>& g) {
    for (size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<float>(static_cast<double>(t[i]) - lr * scale * g[i]);
    }
  };
  apply(params.E, grads.E);
  if (!params.tied) apply(params.U, grads.U);
  apply(params.W1, grads.W1);
  apply(params.b1, grads.b1);
  apply(params.W2, grads.W2);
  apply(params.b2, grads.b2);
}

void save_model(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path.string());
  out << "GOMLM 1 " << params.vocab_size() << ' ' << params.dim << ' '
      << params.hidden << ' ' << (params.tied ? 1 : 0) << '\n';
  for (const std::string& tok : params.vocab) out << tok << '\n';
  auto write_tensor = [&](const std::vector<float>& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  };
  write_tensor(params.E);
  if (!params.tied) write_tensor(params.U);
  write_tensor(params.W1);
  write_tensor(params.b1);
  write_tensor(params.W2);
  write_tensor(params.b2);
  if (!out) throw ValidationError("short write saving checkpoint: " + path.string());
}

ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  std::string header;
  if (!std::getline(in, header)) {
    throw ValidationError(path.string() + ": not a GOMLM file (empty)");
  }
  std::istringstream hs(header);
  std::string magic;
  int version = 0, tied = 0;
  size_t v = 0, d = 0, h = 0;
  hs >> magic >> version >> v >> d >> h >> tied;
  if (magic != "GOMLM" || hs.fail() || (tied != 0 && tied != 1)) {
    throw ValidationError(path.string() + ": not a GOMLM file");
  }
  if (version != 1) {
    throw ValidationError(path.string() + ": unsupported GOMLM version " +
                          std::to_string(version));
  }
  ModelParams p;
  p.dim = d;
  p.hidden = h;
  p.tied = tied == 1;
  p.vocab.reserve(v);
  std::string line;
  for (size_t i = 0; i < v; ++i) {
    if (!std::getline(in, line)) {
      throw ValidationError(path.string() + ": truncated GOMLM file (vocab)");
    }
    p.vocab.push_back(line);
  }
  p.rebuild_index();
  auto read_tensor = [&](std::vector<float>& t, size_t n, const char* name) {
    t.resize(n);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float))) {
      throw ValidationError(path.string() + ": truncated GOMLM file (" +
                            name + ")");
    }
  };
  read_tensor(p.E, v * d, "E");
  if (!p.tied) read_tensor(p.U, v * d, "U");
  read_tensor(p.W1, h * d, "W1");
  read_tensor(p.b1, h, "b1");
  read_tensor(p.W2, d * h, "W2");
  read_tensor(p.b2, d, "b2");
  return p;
}

}  // namespace gotune
