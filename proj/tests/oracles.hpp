#pragma once

// Independent oracles shared by the unit suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include "grover/controller.hpp"
#include "grover/nn_core.hpp"

namespace grover::testing {

// ---- finite differences -------------------------------------------------

struct FdStats {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that crossed a ReLU / max / pool kink
  std::size_t failed = 0;
  double worst = 0.0;
};

inline std::shared_ptr<const Vocabulary> counting_vocab(std::size_t words) {
  Vocabulary v;
  for (std::size_t i = 0; i < words; ++i) v.add("t" + std::to_string(i), i + 1);
  return std::make_shared<const Vocabulary>(std::move(v));
}

inline TokenBatch random_batch(std::size_t b, std::size_t len, std::size_t vocab, Rng& rng) {
  TokenBatch batch;
  batch.batch_size = b;
  batch.seq_len = len;
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t used = 3 + rng.below(len - 2);
    for (std::size_t t = 0; t < len; ++t) {
      batch.ids.push_back(t < used ? static_cast<TokenId>(1 + rng.below(vocab - 1)) : Vocabulary::kPad);
    }
  }
  return batch;
}

// Compares every analytic gradient entry (classifier weights and every
// non-PAD embedding entry) with a central difference at h = 1e-3. The error
// measure is |a - n| / max(|a|, |n|, 1e-6). Entries whose +-h probes change
// the activation pattern are skipped. The dropout mask is held fixed by
// reseeding the generator for every probe.
inline FdStats gradient_check(const ClassifierConfig& config, std::uint64_t seed,
                              double tolerance = 1e-4) {
  constexpr double h = 1e-3;
  const auto vocab = counting_vocab(10);
  auto emb = init_random(vocab, config.embedding_dim, seed);
  auto params = init_params(config, seed + 1);
  Rng rng(seed + 2);
  for (auto* t : params.tensors()) {
    for (auto& v : t->values) v += 0.1 * rng.uniform(-1, 1);
  }
  const auto batch = random_batch(4, config.seq_len, vocab->size(), rng);
  std::vector<std::size_t> labels;
  for (std::size_t b = 0; b < batch.batch_size; ++b) labels.push_back(rng.below(config.num_classes));

  const bool train = config.dropout_p > 0.0;
  auto run = [&] {
    Rng drop(seed + 3);
    return forward(params, emb, batch, train, &drop);
  };
  const auto base = run();
  const auto pattern = base.tape.activation_pattern();
  const auto lg = loss_and_grad(base.logits, labels, base.tape, params, emb);

  FdStats stats;
  auto probe = [&](double& slot, double analytic) {
    const double saved = slot;
    slot = saved + h;
    const auto up = run();
    slot = saved - h;
    const auto down = run();
    slot = saved;
    if (up.tape.activation_pattern() != pattern || down.tape.activation_pattern() != pattern) {
      ++stats.skipped;
      return;
    }
    const double numeric =
        (cross_entropy(up.logits, labels) - cross_entropy(down.logits, labels)) / (2 * h);
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    stats.worst = std::max(stats.worst, rel);
    ++stats.checked;
    if (!(rel < tolerance)) ++stats.failed;
  };

  auto tensors = params.tensors();
  const auto grads = lg.grads.params.tensors();
  if (tensors.size() != grads.size()) {
    ++stats.failed;
    return stats;
  }
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    if (grads[t]->shape != tensors[t]->shape) {
      ++stats.failed;
      continue;
    }
    for (std::size_t i = 0; i < tensors[t]->size(); ++i) probe(tensors[t]->values[i], grads[t]->values[i]);
  }
  const auto& sparse = lg.grads.embeddings;
  for (TokenId id = 1; id < emb.rows(); ++id) {
    const auto it = std::lower_bound(sparse.rows.begin(), sparse.rows.end(), id);
    const bool present = it != sparse.rows.end() && *it == id;
    for (std::size_t j = 0; j < emb.dim(); ++j) {
      probe(emb.row(id)[j], present ? sparse.row(static_cast<std::size_t>(it - sparse.rows.begin()))[j] : 0.0);
    }
  }
  return stats;
}

// Small configs for gradient checks: seq_len 8, d 6, channels 3/2, C 3.
inline ClassifierConfig gradient_config(ModelKind kind, double dropout = 0.0) {
  ClassifierConfig c;
  c.embedding_dim = 6;
  c.seq_len = 8;
  c.kernel_sizes = {2, 3};
  c.conv1_channels = 3;
  c.conv2_channels = 2;
  c.num_classes = 3;
  c.dropout_p = dropout;
  c.model_kind = kind;
  return c;
}

// ---- scripted meta-loop --------------------------------------------------

using PositionSet = std::set<std::size_t>;

inline PositionSet positions(const std::vector<PositionRange>& ranges) {
  PositionSet s;
  for (const auto& r : ranges)
    for (std::size_t p = r.begin; p < r.end; ++p) s.insert(p);
  return s;
}

inline PositionSet span_set(std::size_t begin, std::size_t end) {
  PositionSet s;
  for (std::size_t p = begin; p < end; ++p) s.insert(p);
  return s;
}

// Vocabulary whose frequency order is ids 2, 3, ..., n+1.
inline std::shared_ptr<const Vocabulary> ordered_vocab(std::size_t n) {
  Vocabulary v;
  for (std::size_t i = 0; i < n; ++i) v.add("w" + std::to_string(i), i + 1);
  return std::make_shared<const Vocabulary>(std::move(v));
}

// Trainer whose validation accuracy follows a script of improve / fail
// decisions (entry k decides meta-epoch k >= 1; missing entries improve).
// W' is the input shifted by a per-call constant so adoptions are visible.
struct ScriptedTrainer {
  std::vector<bool> improve;
  std::size_t calls = 0;
  double best = 0.5;

  MetaTrainOutcome operator()(const EmbeddingTable& init, std::uint64_t) {
    const std::size_t k = calls++;
    double acc = best;
    if (k > 0) {
      const bool up = k < improve.size() ? bool(improve[k]) : true;
      acc = up ? best + 0.01 : best - 0.01;
      if (up) best = acc;
    }
    MetaTrainOutcome out{ClassifierParams{}, init, acc, std::nullopt, 1, acc, false};
    for (auto& v : out.embeddings.values()) v += 0.001 * static_cast<double>(k + 1);
    return out;
  }
};

inline MetaTrainingResult run_stub(std::size_t n, double s, MaskPolicy policy,
                                   ScriptedTrainer& trainer, const MetaObserver& observer = {},
                                   double r = 1.0, std::size_t cap = 64) {
  const auto vocab = ordered_vocab(n);
  const auto table = init_random(vocab, 3, 1);
  GroverConfig cfg;
  cfg.step_size = s;
  cfg.policy = policy;
  cfg.noise_range = r;
  cfg.max_meta_epochs = cap;
  cfg.seed = 77;
  MetaTrainer fn = [&trainer](const EmbeddingTable& init, std::uint64_t seed) { return trainer(init, seed); };
  return run_meta_training(frequency_order(*vocab), table, cfg, fn, {}, observer);
}

// Hand-traced mask sets for meta-epochs 1 .. meta_epochs-1, given whether
// each earlier meta-epoch was accepted.
inline std::vector<PositionSet> oracle_masks(std::size_t n, std::size_t w, MaskPolicy policy,
                                             const std::vector<bool>& accepted,
                                             std::size_t meta_epochs) {
  std::vector<PositionSet> out;
  PositionSet prev;
  std::size_t frontier = 0;
  for (std::size_t k = 1; k < meta_epochs; ++k) {
    const bool improved = accepted.at(k - 1);
    PositionSet next = span_set(frontier, std::min(n, frontier + w));
    frontier = std::min(n, frontier + w);
    const bool keep = policy == MaskPolicy::both || (policy == MaskPolicy::gradual && !improved) ||
                      (policy == MaskPolicy::reversed && improved);
    if (keep) next.insert(prev.begin(), prev.end());
    out.push_back(next);
    prev = next;
  }
  return out;
}

inline std::vector<bool> coin_flips(std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<bool> p(len);
  for (std::size_t i = 0; i < len; ++i) p[i] = rng.bernoulli(0.5);
  return p;
}

}  // namespace grover::testing
