#include "grover/nn_core.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "grover/error.hpp"

namespace grover {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

std::size_t conv1_len(const ClassifierConfig& c, std::size_t k) { return c.seq_len - k + 1; }
std::size_t pool_len(const ClassifierConfig& c, std::size_t k) { return conv1_len(c, k) / 2; }
std::size_t conv2_len(const ClassifierConfig& c, std::size_t k) {
  const std::size_t pooled = pool_len(c, k);
  return pooled >= k ? pooled - k + 1 : 0;
}

void fill_glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values) v = rng.uniform(-limit, limit);
}

std::uint64_t mix(std::uint64_t h, std::uint64_t x) { return splitmix64(h ^ x); }

void check_batch(const ClassifierParams& params, const EmbeddingTable& embeddings,
                 const TokenBatch& batch) {
  const auto& cfg = params.config;
  if (batch.seq_len != cfg.seq_len) {
    throw ConfigError("batch sequence length " + std::to_string(batch.seq_len) +
                      " does not match configured seq_len " + std::to_string(cfg.seq_len));
  }
  if (batch.ids.size() != batch.batch_size * batch.seq_len) {
    throw ConfigError("token batch has inconsistent size");
  }
  if (embeddings.dim() != cfg.embedding_dim) {
    throw ConfigError("embedding dimension " + std::to_string(embeddings.dim()) +
                      " does not match configured " + std::to_string(cfg.embedding_dim));
  }
  for (TokenId id : batch.ids) {
    if (id >= embeddings.rows()) {
      throw InputError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                       std::to_string(embeddings.rows()));
    }
  }
}

// Embedding lookup for one example: seq_len x dim, row-major.
void gather(const EmbeddingTable& embeddings, std::span<const TokenId> ids, std::vector<double>& x) {
  const std::size_t d = embeddings.dim();
  x.resize(ids.size() * d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto row = embeddings.row(ids[t]);
    std::copy(row.begin(), row.end(), x.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
}

}  // namespace

void ClassifierConfig::validate() const {
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
  if (seq_len == 0) throw ConfigError("seq_len must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0, 1)");
  if (model_kind == ModelKind::bow_linear) return;
  if (kernel_sizes.empty()) throw ConfigError("textcnn needs at least one kernel size");
  if (conv1_channels == 0 || conv2_channels == 0) {
    throw ConfigError("conv channel counts must be positive");
  }
  for (std::size_t k : kernel_sizes) {
    if (k == 0 || k > seq_len) {
      throw ConfigError("kernel size " + std::to_string(k) + " must be in [1, seq_len]");
    }
    if (conv2_len(*this, k) == 0) {
      throw ConfigError("seq_len " + std::to_string(seq_len) + " is too short for kernel " +
                        std::to_string(k) + " (conv1 -> pool -> conv2 leaves no positions)");
    }
  }
}

std::size_t ClassifierConfig::feature_dim() const {
  return model_kind == ModelKind::bow_linear ? embedding_dim
                                             : conv2_channels * kernel_sizes.size();
}

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  values.assign(n, 0.0);
}

ClassifierParams ClassifierParams::zeros(const ClassifierConfig& config) {
  config.validate();
  ClassifierParams p;
  p.config = config;
  if (config.model_kind == ModelKind::textcnn) {
    for (std::size_t k : config.kernel_sizes) {
      ConvBranch b;
      b.kernel = k;
      b.conv1_w = Tensor({config.conv1_channels, k, config.embedding_dim});
      b.conv1_b = Tensor({config.conv1_channels});
      b.conv2_w = Tensor({config.conv2_channels, k, config.conv1_channels});
      b.conv2_b = Tensor({config.conv2_channels});
      p.branches.push_back(std::move(b));
    }
  }
  p.fc_w = Tensor({config.num_classes, config.feature_dim()});
  p.fc_b = Tensor({config.num_classes});
  return p;
}

std::vector<Tensor*> ClassifierParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& b : branches) {
    out.insert(out.end(), {&b.conv1_w, &b.conv1_b, &b.conv2_w, &b.conv2_b});
  }
  out.push_back(&fc_w);
  out.push_back(&fc_b);
  return out;
}

std::vector<const Tensor*> ClassifierParams::tensors() const {
  auto mutable_ptrs = const_cast<ClassifierParams*>(this)->tensors();
  return {mutable_ptrs.begin(), mutable_ptrs.end()};
}

std::vector<std::string> ClassifierParams::tensor_names() const {
  std::vector<std::string> out;
  for (const auto& b : branches) {
    const std::string prefix = "conv_k" + std::to_string(b.kernel);
    out.push_back(prefix + ".conv1.weight");
    out.push_back(prefix + ".conv1.bias");
    out.push_back(prefix + ".conv2.weight");
    out.push_back(prefix + ".conv2.bias");
  }
  out.push_back("fc.weight");
  out.push_back("fc.bias");
  return out;
}

std::size_t ClassifierParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->size();
  return n;
}

bool ClassifierParams::all_finite() const {
  for (const auto* t : tensors()) {
    for (double v : t->values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void audit_shapes(const ClassifierParams& params) {
  const auto expected = ClassifierParams::zeros(params.config);
  const auto want = expected.tensors();
  const auto have = params.tensors();
  const auto names = expected.tensor_names();
  if (want.size() != have.size()) {
    throw ConfigError("parameter set has " + std::to_string(have.size()) + " tensors, expected " +
                      std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (have[i]->shape != want[i]->shape || have[i]->values.size() != want[i]->values.size()) {
      throw ConfigError("tensor " + names[i] + " has the wrong shape");
    }
  }
  for (std::size_t i = 0; i < params.branches.size(); ++i) {
    if (params.branches[i].kernel != params.config.kernel_sizes[i]) {
      throw ConfigError("branch " + std::to_string(i) + " kernel does not match config");
    }
  }
}

ClassifierParams init_params(const ClassifierConfig& config, std::uint64_t seed) {
  ClassifierParams p = ClassifierParams::zeros(config);
  Rng rng(seed);
  for (auto& b : p.branches) {
    fill_glorot(b.conv1_w, b.kernel * config.embedding_dim, b.kernel * config.conv1_channels, rng);
    fill_glorot(b.conv2_w, b.kernel * config.conv1_channels, b.kernel * config.conv2_channels, rng);
  }
  fill_glorot(p.fc_w, config.feature_dim(), config.num_classes, rng);
  return p;
}

TokenBatch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  TokenBatch batch;
  batch.batch_size = indices.size();
  batch.seq_len = data.seq_len;
  batch.ids.reserve(indices.size() * data.seq_len);
  for (std::size_t i : indices) {
    const auto& ids = data.examples.at(i).ids;
    if (ids.size() != data.seq_len) throw InputError("example has wrong sequence length");
    batch.ids.insert(batch.ids.end(), ids.begin(), ids.end());
  }
  return batch;
}

std::uint64_t Tape::activation_pattern() const {
  std::uint64_t h = 0x5eed;
  for (const auto& example : branches) {
    for (const auto& br : example) {
      for (double z : br.conv1) h = mix(h, z > 0.0);
      for (auto a : br.pool_arg) h = mix(h, a);
      for (double z : br.conv2) h = mix(h, z > 0.0);
      for (auto a : br.max_arg) h = mix(h, a);
    }
  }
  for (double s : dropout_scale) h = mix(h, s != 0.0);
  return h;
}

ForwardResult forward(const ClassifierParams& params, const EmbeddingTable& embeddings,
                      const TokenBatch& batch, bool train_mode, Rng* rng) {
  const auto& cfg = params.config;
  check_batch(params, embeddings, batch);
  const std::size_t B = batch.batch_size;
  const std::size_t d = cfg.embedding_dim;
  const std::size_t F = cfg.feature_dim();
  const std::size_t C = cfg.num_classes;

  ForwardResult out;
  Tape& tape = out.tape;
  tape.batch = batch;
  tape.features.assign(B * F, 0.0);

  std::vector<double> x;
  if (cfg.model_kind == ModelKind::textcnn) {
    const std::size_t C1 = cfg.conv1_channels;
    const std::size_t C2 = cfg.conv2_channels;
    tape.branches.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
      gather(embeddings, batch.row(b), x);
      auto& example = tape.branches[b];
      example.resize(params.branches.size());
      for (std::size_t br = 0; br < params.branches.size(); ++br) {
        const auto& w = params.branches[br];
        const std::size_t k = w.kernel;
        const std::size_t L1 = conv1_len(cfg, k), L2 = pool_len(cfg, k), L3 = conv2_len(cfg, k);
        auto& bt = example[br];

        bt.conv1.resize(L1 * C1);
        for (std::size_t t = 0; t < L1; ++t) {
          const double* window = x.data() + t * d;
          for (std::size_t c = 0; c < C1; ++c) {
            bt.conv1[t * C1 + c] =
                w.conv1_b.values[c] + dot(w.conv1_w.values.data() + c * k * d, window, k * d);
          }
        }

        bt.pooled.resize(L2 * C1);
        bt.pool_arg.resize(L2 * C1);
        for (std::size_t t = 0; t < L2; ++t) {
          for (std::size_t c = 0; c < C1; ++c) {
            const double a = std::max(0.0, bt.conv1[(2 * t) * C1 + c]);
            const double b2 = std::max(0.0, bt.conv1[(2 * t + 1) * C1 + c]);
            const bool second = b2 > a;
            bt.pooled[t * C1 + c] = second ? b2 : a;
            bt.pool_arg[t * C1 + c] = static_cast<std::uint32_t>(second ? 2 * t + 1 : 2 * t);
          }
        }

        bt.conv2.resize(L3 * C2);
        for (std::size_t t = 0; t < L3; ++t) {
          const double* window = bt.pooled.data() + t * C1;
          for (std::size_t c = 0; c < C2; ++c) {
            bt.conv2[t * C2 + c] =
                w.conv2_b.values[c] + dot(w.conv2_w.values.data() + c * k * C1, window, k * C1);
          }
        }

        bt.max_arg.resize(C2);
        for (std::size_t c = 0; c < C2; ++c) {
          std::size_t best_t = 0;
          double best = std::max(0.0, bt.conv2[c]);
          for (std::size_t t = 1; t < L3; ++t) {
            const double v = std::max(0.0, bt.conv2[t * C2 + c]);
            if (v > best) {
              best = v;
              best_t = t;
            }
          }
          bt.max_arg[c] = static_cast<std::uint32_t>(best_t);
          tape.features[b * F + br * C2 + c] = best;
        }
      }
    }
  } else {
    tape.token_counts.assign(B, 0);
    for (std::size_t b = 0; b < B; ++b) {
      double* feat = tape.features.data() + b * F;
      std::size_t count = 0;
      for (TokenId id : batch.row(b)) {
        if (id == Vocabulary::kPad) continue;
        ++count;
        axpy(1.0, embeddings.row(id).data(), feat, d);
      }
      tape.token_counts[b] = count;
      if (count > 0) {
        for (std::size_t i = 0; i < F; ++i) feat[i] /= static_cast<double>(count);
      }
    }
  }

  std::vector<double> hidden = tape.features;
  if (train_mode && cfg.dropout_p > 0.0) {
    if (!rng) throw ContractViolation("train-mode dropout needs a random generator");
    const double keep_scale = 1.0 / (1.0 - cfg.dropout_p);
    tape.dropout_scale.resize(B * F);
    for (std::size_t i = 0; i < B * F; ++i) {
      tape.dropout_scale[i] = rng->bernoulli(cfg.dropout_p) ? 0.0 : keep_scale;
      hidden[i] *= tape.dropout_scale[i];
    }
  }

  out.logits = Tensor({B, C});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      out.logits.values[b * C + c] =
          params.fc_b.values[c] + dot(params.fc_w.values.data() + c * F, hidden.data() + b * F, F);
    }
  }
  return out;
}

namespace {

// log-sum-exp of a row, stable against large logits.
double log_sum_exp(const double* row, std::size_t n) {
  const double m = *std::max_element(row, row + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(row[i] - m);
  return m + std::log(s);
}

void check_labels(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.shape.size() != 2 || logits.shape[0] != labels.size()) {
    throw ConfigError("logits and labels disagree on batch size");
  }
  for (std::size_t y : labels) {
    if (y >= logits.shape[1]) {
      throw InputError("label " + std::to_string(y) + " out of range for " +
                       std::to_string(logits.shape[1]) + " classes");
    }
  }
}

}  // namespace

double cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  check_labels(logits, labels);
  const std::size_t B = labels.size(), C = logits.shape[1];
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = logits.values.data() + b * C;
    total += log_sum_exp(row, C) - row[labels[b]];
  }
  return B ? total / static_cast<double>(B) : 0.0;
}

LossAndGrad loss_and_grad(const Tensor& logits, std::span<const std::size_t> labels,
                          const Tape& tape, const ClassifierParams& params,
                          const EmbeddingTable& embeddings) {
  check_labels(logits, labels);
  const auto& cfg = params.config;
  const auto& batch = tape.batch;
  const std::size_t B = batch.batch_size;
  const std::size_t C = cfg.num_classes;
  const std::size_t F = cfg.feature_dim();
  const std::size_t d = cfg.embedding_dim;
  if (logits.shape[1] != C) throw ConfigError("logits width does not match num_classes");

  LossAndGrad out;
  out.grads.params = ClassifierParams::zeros(cfg);
  auto& g = out.grads.params;

  // Softmax cross-entropy; the loss is never negative because
  // log-sum-exp >= every logit.
  std::vector<double> dlogits(B * C);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = logits.values.data() + b * C;
    const double lse = log_sum_exp(row, C);
    total += lse - row[labels[b]];
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(row[c] - lse);
      dlogits[b * C + c] = (p - (c == labels[b] ? 1.0 : 0.0)) / static_cast<double>(B);
    }
  }
  out.loss = B ? std::max(0.0, total / static_cast<double>(B)) : 0.0;

  // Fully connected layer.
  const bool dropout = !tape.dropout_scale.empty();
  std::vector<double> hidden(F), dfeat(B * F, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < F; ++f) {
      hidden[f] = tape.features[b * F + f] * (dropout ? tape.dropout_scale[b * F + f] : 1.0);
    }
    double* dh = dfeat.data() + b * F;
    for (std::size_t c = 0; c < C; ++c) {
      const double gl = dlogits[b * C + c];
      g.fc_b.values[c] += gl;
      axpy(gl, hidden.data(), g.fc_w.values.data() + c * F, F);
      axpy(gl, params.fc_w.values.data() + c * F, dh, F);
    }
    if (dropout) {
      for (std::size_t f = 0; f < F; ++f) dh[f] *= tape.dropout_scale[b * F + f];
    }
  }

  // Embedding gradient, accumulated sparsely in first-touch order.
  std::unordered_map<TokenId, std::size_t> slot;
  std::vector<TokenId> rows;
  std::vector<double> row_values;
  auto emb_row = [&](TokenId id) -> double* {
    auto [it, inserted] = slot.try_emplace(id, rows.size());
    if (inserted) {
      rows.push_back(id);
      row_values.resize(row_values.size() + d, 0.0);
    }
    return row_values.data() + it->second * d;
  };

  if (cfg.model_kind == ModelKind::textcnn) {
    const std::size_t C1 = cfg.conv1_channels;
    const std::size_t C2 = cfg.conv2_channels;
    std::vector<double> x, dx, dpooled, dz1;
    for (std::size_t b = 0; b < B; ++b) {
      gather(embeddings, batch.row(b), x);
      dx.assign(x.size(), 0.0);
      for (std::size_t br = 0; br < params.branches.size(); ++br) {
        const auto& w = params.branches[br];
        auto& gw = g.branches[br];
        const auto& bt = tape.branches[b][br];
        const std::size_t k = w.kernel;
        const std::size_t L1 = conv1_len(cfg, k), L2 = pool_len(cfg, k);

        // Global max + ReLU route each feature gradient to a single conv2 output.
        dpooled.assign(L2 * C1, 0.0);
        for (std::size_t c = 0; c < C2; ++c) {
          const double gf = dfeat[b * F + br * C2 + c];
          const std::size_t t = bt.max_arg[c];
          if (gf == 0.0 || !(bt.conv2[t * C2 + c] > 0.0)) continue;
          gw.conv2_b.values[c] += gf;
          axpy(gf, bt.pooled.data() + t * C1, gw.conv2_w.values.data() + c * k * C1, k * C1);
          axpy(gf, w.conv2_w.values.data() + c * k * C1, dpooled.data() + t * C1, k * C1);
        }

        // Pool routes to its winner; ReLU passes only positive pre-activations.
        dz1.assign(L1 * C1, 0.0);
        for (std::size_t t = 0; t < L2; ++t) {
          for (std::size_t c = 0; c < C1; ++c) {
            const double gp = dpooled[t * C1 + c];
            if (gp == 0.0) continue;
            const std::size_t src = bt.pool_arg[t * C1 + c];
            if (bt.conv1[src * C1 + c] > 0.0) dz1[src * C1 + c] += gp;
          }
        }

        for (std::size_t t = 0; t < L1; ++t) {
          for (std::size_t c = 0; c < C1; ++c) {
            const double gz = dz1[t * C1 + c];
            if (gz == 0.0) continue;
            gw.conv1_b.values[c] += gz;
            axpy(gz, x.data() + t * d, gw.conv1_w.values.data() + c * k * d, k * d);
            axpy(gz, w.conv1_w.values.data() + c * k * d, dx.data() + t * d, k * d);
          }
        }
      }
      const auto ids = batch.row(b);
      for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] == Vocabulary::kPad) continue;
        axpy(1.0, dx.data() + t * d, emb_row(ids[t]), d);
      }
    }
  } else {
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t count = tape.token_counts[b];
      if (count == 0) continue;
      const double scale = 1.0 / static_cast<double>(count);
      for (TokenId id : batch.row(b)) {
        if (id == Vocabulary::kPad) continue;
        axpy(scale, dfeat.data() + b * F, emb_row(id), d);
      }
    }
  }

  // Canonical (sorted) row order.
  std::vector<std::size_t> perm(rows.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return rows[a] < rows[b]; });
  auto& sparse = out.grads.embeddings;
  sparse.dim = d;
  sparse.rows.reserve(rows.size());
  sparse.values.reserve(row_values.size());
  for (std::size_t i : perm) {
    sparse.rows.push_back(rows[i]);
    sparse.values.insert(sparse.values.end(), row_values.begin() + static_cast<std::ptrdiff_t>(i * d),
                         row_values.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return out;
}

AdamState AdamState::fresh(const ClassifierParams& params, const EmbeddingTable& embeddings,
                           AdamHyper hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto* t : params.tensors()) {
    s.m.emplace_back(t->shape);
    s.v.emplace_back(t->shape);
  }
  s.embedding_dim = embeddings.dim();
  s.embedding_m.assign(embeddings.values().size(), 0.0);
  s.embedding_v.assign(embeddings.values().size(), 0.0);
  return s;
}

void adam_step(ClassifierParams& params, EmbeddingTable& embeddings, const Gradients& grads,
               AdamState& state) {
  auto tensors = params.tensors();
  const auto gtensors = grads.params.tensors();
  if (gtensors.size() != tensors.size() || state.m.size() != tensors.size() ||
      state.v.size() != tensors.size()) {
    throw ConfigError("optimizer state does not mirror the parameter set");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (gtensors[i]->values.size() != tensors[i]->values.size() ||
        state.m[i].values.size() != tensors[i]->values.size() ||
        state.v[i].values.size() != tensors[i]->values.size()) {
      throw ConfigError("optimizer state does not mirror the parameter shapes");
    }
    for (double gv : gtensors[i]->values) {
      if (!std::isfinite(gv)) throw TrainingDiverged("non-finite parameter gradient");
    }
  }
  const auto& eg = grads.embeddings;
  if (!eg.rows.empty() && eg.dim != embeddings.dim()) {
    throw ConfigError("embedding gradient dimension mismatch");
  }
  if (state.embedding_dim != embeddings.dim() ||
      state.embedding_m.size() != embeddings.values().size()) {
    throw ConfigError("optimizer state does not mirror the embedding table");
  }
  for (std::size_t r = 0; r < eg.rows.size(); ++r) {
    if (eg.rows[r] >= embeddings.rows()) throw InputError("embedding gradient row out of range");
  }
  for (double gv : eg.values) {
    if (!std::isfinite(gv)) throw TrainingDiverged("non-finite embedding gradient");
  }

  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  auto update = [&](double& p, double& m, double& v, double g) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    p -= h.lr * mhat / (std::sqrt(vhat) + h.epsilon);
  };

  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& p = tensors[i]->values;
    const auto& g = gtensors[i]->values;
    auto& m = state.m[i].values;
    auto& v = state.v[i].values;
    for (std::size_t j = 0; j < p.size(); ++j) update(p[j], m[j], v[j], g[j]);
  }

  const std::size_t d = embeddings.dim();
  for (std::size_t r = 0; r < eg.rows.size(); ++r) {
    const std::size_t base = static_cast<std::size_t>(eg.rows[r]) * d;
    auto row = embeddings.row(eg.rows[r]);
    for (std::size_t j = 0; j < d; ++j) {
      update(row[j], state.embedding_m[base + j], state.embedding_v[base + j], eg.values[r * d + j]);
    }
  }
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t B = logits.shape.at(0), C = logits.shape.at(1);
  std::vector<std::size_t> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = logits.values.data() + b * C;
    out[b] = static_cast<std::size_t>(std::max_element(row, row + C) - row);
  }
  return out;
}

std::vector<std::size_t> predict(const ClassifierParams& params, const EmbeddingTable& embeddings,
                                 const TokenBatch& batch) {
  return argmax_rows(forward(params, embeddings, batch, false).logits);
}

double accuracy(const ClassifierParams& params, const EmbeddingTable& embeddings,
                const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw InputError("cannot measure accuracy on an empty dataset");
  batch_size = std::max<std::size_t>(batch_size, 1);
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto pred = predict(params, embeddings, make_batch(data, idx));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      correct += pred[j] == data.examples[idx[j]].label;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

const char* to_string(ModelKind kind) {
  return kind == ModelKind::textcnn ? "textcnn" : "bow_linear";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "textcnn") return ModelKind::textcnn;
  if (s == "bow_linear") return ModelKind::bow_linear;
  throw ConfigError("unknown model kind '" + std::string(s) + "' (textcnn, bow_linear)");
}

}  // namespace grover
