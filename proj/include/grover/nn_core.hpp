#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "grover/data_pipeline.hpp"
#include "grover/embedding_store.hpp"
#include "grover/random.hpp"

namespace grover {

enum class ModelKind { textcnn, bow_linear };

struct ClassifierConfig {
  std::size_t embedding_dim = 300;
  std::size_t seq_len = 100;
  std::vector<std::size_t> kernel_sizes{2, 3, 4, 5};
  std::size_t conv1_channels = 32;
  std::size_t conv2_channels = 16;
  std::size_t num_classes = 2;
  double dropout_p = 0.0;
  ModelKind model_kind = ModelKind::textcnn;

  // Throws ConfigError. Besides the per-field bounds, every textcnn branch
  // must leave at least one position after conv1 -> pool -> conv2.
  void validate() const;

  // Width of the vector fed to the final fully connected layer.
  std::size_t feature_dim() const;

  bool operator==(const ClassifierConfig&) const = default;
};

// Dense row-major array with an explicit shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);

  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const Tensor&) const = default;
};

struct ConvBranch {
  std::size_t kernel = 0;
  Tensor conv1_w;  // [conv1_channels][kernel][embedding_dim]
  Tensor conv1_b;  // [conv1_channels]
  Tensor conv2_w;  // [conv2_channels][kernel][conv1_channels]
  Tensor conv2_b;  // [conv2_channels]

  bool operator==(const ConvBranch&) const = default;
};

// Every trainable weight of the classifier except the embedding table.
struct ClassifierParams {
  ClassifierConfig config;
  std::vector<ConvBranch> branches;  // empty for bow_linear
  Tensor fc_w;                       // [num_classes][feature_dim]
  Tensor fc_b;                       // [num_classes]

  // Zero-valued parameters with the shapes implied by `config`.
  static ClassifierParams zeros(const ClassifierConfig& config);

  // Fixed visiting order shared by the optimizer, serialization and tests.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> tensor_names() const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  bool operator==(const ClassifierParams&) const = default;
};

// Throws ConfigError describing the first tensor whose shape disagrees with
// the config.
void audit_shapes(const ClassifierParams& params);

// Glorot-uniform weights, zero biases.
ClassifierParams init_params(const ClassifierConfig& config, std::uint64_t seed);

// B x seq_len token ids, row-major.
struct TokenBatch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> ids;

  std::span<const TokenId> row(std::size_t b) const { return {ids.data() + b * seq_len, seq_len}; }
};

TokenBatch make_batch(const Dataset& data, std::span<const std::size_t> indices);

struct BranchTape {
  std::vector<double> conv1;            // conv1 positions x channels (pre-activation)
  std::vector<std::uint32_t> pool_arg;  // source position of each pooled value
  std::vector<double> pooled;           // pooled positions x conv1 channels
  std::vector<double> conv2;            // conv2 positions x channels (pre-activation)
  std::vector<std::uint32_t> max_arg;   // winning position per conv2 channel
};

// Saved activations of one forward pass.
struct Tape {
  TokenBatch batch;
  std::vector<std::vector<BranchTape>> branches;  // [example][branch]
  std::vector<double> features;                   // B x feature_dim, before dropout
  std::vector<double> dropout_scale;              // B x feature_dim; empty when inactive
  std::vector<std::size_t> token_counts;          // bow_linear: non-PAD tokens per example

  // Fingerprint of every piecewise decision (ReLU signs, pool and max
  // winners, dropout mask). Equal fingerprints mean the network is the same
  // smooth function of its inputs.
  std::uint64_t activation_pattern() const;
};

struct ForwardResult {
  Tensor logits;  // [B][num_classes]
  Tape tape;
};

// `rng` is only drawn from when train_mode is set and dropout_p > 0.
ForwardResult forward(const ClassifierParams& params, const EmbeddingTable& embeddings,
                      const TokenBatch& batch, bool train_mode, Rng* rng = nullptr);

// Gradient rows of the embedding table; rows are sorted and unique.
struct SparseRows {
  std::size_t dim = 0;
  std::vector<TokenId> rows;
  std::vector<double> values;  // rows.size() x dim

  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

struct Gradients {
  ClassifierParams params;
  SparseRows embeddings;
};

struct LossAndGrad {
  double loss = 0.0;  // mean softmax cross-entropy
  Gradients grads;
};

// The PAD row is frozen: it never receives gradient.
LossAndGrad loss_and_grad(const Tensor& logits, std::span<const std::size_t> labels,
                          const Tape& tape, const ClassifierParams& params,
                          const EmbeddingTable& embeddings);

// Mean cross-entropy only, without gradients.
double cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamHyper&) const = default;
};

struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Tensor> m;  // mirrors ClassifierParams::tensors()
  std::vector<Tensor> v;
  std::size_t embedding_dim = 0;
  std::vector<double> embedding_m;  // |V| x dim
  std::vector<double> embedding_v;

  static AdamState fresh(const ClassifierParams& params, const EmbeddingTable& embeddings,
                         AdamHyper hyper = {});
};

// Bias-corrected Adam. Embedding rows are updated lazily: only rows present
// in the gradient touch their moments or values. Throws TrainingDiverged on a
// non-finite gradient before modifying anything.
void adam_step(ClassifierParams& params, EmbeddingTable& embeddings, const Gradients& grads,
               AdamState& state);

// Argmax of the eval-mode logits; ties go to the lowest class id.
std::vector<std::size_t> predict(const ClassifierParams& params, const EmbeddingTable& embeddings,
                                 const TokenBatch& batch);
std::vector<std::size_t> argmax_rows(const Tensor& logits);

double accuracy(const ClassifierParams& params, const EmbeddingTable& embeddings,
                const Dataset& data, std::size_t batch_size = 256);

const char* to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view s);

}  // namespace grover
