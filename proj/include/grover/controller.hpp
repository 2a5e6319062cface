#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grover/data_pipeline.hpp"
#include "grover/embedding_store.hpp"
#include "grover/nn_core.hpp"

namespace grover {

// How the mask set grows after each meta-epoch:
//   gradual  - new window if improved, previous mask + window otherwise
//   none     - always just the new window
//   reversed - previous mask + window if improved, new window otherwise
//   both     - always previous mask + window
enum class MaskPolicy { gradual, none, reversed, both };

const char* to_string(MaskPolicy policy);
MaskPolicy parse_policy(std::string_view s);
const char* to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view s);

// Inner (per meta-epoch) training loop settings.
struct InnerTrainingConfig {
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  std::size_t batch_size = 64;
  double word_drop_p = 0.0;
  AdamHyper adam;

  void validate() const;
  bool operator==(const InnerTrainingConfig&) const = default;
};

struct GroverConfig {
  double step_size = 0.1;
  double noise_range = 1.0;
  MaskPolicy policy = MaskPolicy::gradual;
  NoiseKind noise = NoiseKind::uniform;
  InnerTrainingConfig inner;
  std::uint64_t seed = 0;
  std::size_t max_meta_epochs = 64;  // total meta-epochs, including the unmasked first one

  void validate() const;
  bool operator==(const GroverConfig&) const = default;
};

// Half-open range [begin, end) of positions in a FrequencyOrder.
struct PositionRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const PositionRange&) const = default;
};

struct MaskerState {
  std::size_t frontier = 0;          // positions [0, frontier) have been windowed
  std::vector<PositionRange> mask;   // sorted, disjoint, non-adjacent
  PositionRange last_window;

  std::size_t masked_count() const;
  bool operator==(const MaskerState&) const = default;
};

// Number of positions each window consumes: ceil(step * n), at least 1.
std::size_t window_size(std::size_t order_size, double step_size);

// Moves the frontier by one window and rebuilds the mask per `policy`.
// Throws ContractViolation once the frontier has reached the end.
MaskerState advance_maskers(const MaskerState& state, bool improved, const FrequencyOrder& order,
                            double step_size, MaskPolicy policy);

// Token ids covered by the state's mask.
std::vector<TokenId> mask_ids(const MaskerState& state, const FrequencyOrder& order);

struct TrainOnceResult {
  ClassifierParams params;
  EmbeddingTable embeddings;  // fine-tuned table from the best epoch
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;  // 1-based; 0 if no epoch completed
  std::size_t epochs_run = 0;
  bool diverged = false;
  std::vector<double> val_history;
};

// Trains a freshly initialised classifier on top of `embeddings` (which are
// fine-tuned, not re-initialised). Early stopping on validation accuracy with
// restore-best semantics. A non-finite loss or gradient stops the run and
// returns the best state seen so far with `diverged` set.
TrainOnceResult train_once(std::uint64_t model_seed, const EmbeddingTable& embeddings,
                           const Dataset& train, const Dataset& val,
                           const ClassifierConfig& classifier, const InnerTrainingConfig& inner);

struct MetaEpochRecord {
  std::size_t meta_epoch = 0;
  std::vector<PositionRange> windows;  // masked positions; empty for meta-epoch 0
  std::size_t masked_words = 0;
  std::size_t frontier = 0;
  std::size_t inner_epochs = 0;
  double best_inner_val_accuracy = 0.0;
  double val_accuracy = 0.0;  // meta-level validation accuracy
  std::optional<double> test_accuracy;
  bool accepted = false;
  double max_accuracy = 0.0;  // running maximum after this meta-epoch
  bool diverged = false;
  std::uint64_t model_seed = 0;
  std::uint64_t noise_seed = 0;
  double wall_seconds = 0.0;  // kept out of the run report

  bool operator==(const MetaEpochRecord&) const = default;
};

nlohmann::json to_json(const MetaEpochRecord& record, bool include_timing = false);
MetaEpochRecord record_from_json(const nlohmann::json& j);

// What one meta-epoch's training produced.
struct MetaTrainOutcome {
  ClassifierParams params;
  EmbeddingTable embeddings;  // W'
  double val_accuracy = 0.0;  // meta-level Acc
  std::optional<double> test_accuracy;
  std::size_t inner_epochs = 0;
  double best_inner_val_accuracy = 0.0;
  bool diverged = false;
};

// Trains from `initial` with the given model seed. The real implementation
// wraps train_once; tests substitute scripted evaluators.
using MetaTrainer =
    std::function<MetaTrainOutcome(const EmbeddingTable& initial, std::uint64_t model_seed)>;

struct CheckpointManifest {
  std::uint64_t config_hash = 0;
  std::uint64_t vocab_hash = 0;
  nlohmann::json config;  // canonical run configuration the hash was computed over
};

struct Checkpoint {
  ClassifierParams params;
  EmbeddingTable embeddings;
  MetaEpochRecord record;
  CheckpointManifest manifest;
};

// Observer hook: called once per meta-epoch with the carried table before
// noise, the noised table handed to training, and the masked ids.
struct MetaEpochTrace {
  std::size_t meta_epoch;
  const EmbeddingTable& carried;
  const EmbeddingTable& noised;
  std::span<const TokenId> masked;
  const MetaEpochRecord& record;
};
using MetaObserver = std::function<void(const MetaEpochTrace&)>;

struct MetaTrainingResult {
  Checkpoint best;
  std::vector<MetaEpochRecord> records;
  EmbeddingTable carried;  // W at the end of the run
  bool cap_reached = false;
};

// The meta-training loop over an arbitrary trainer. `order` is the
// frequency order of the vocabulary behind `initial`.
MetaTrainingResult run_meta_training(const FrequencyOrder& order, const EmbeddingTable& initial,
                                     const GroverConfig& config, const MetaTrainer& trainer,
                                     const nlohmann::json& run_config = {},
                                     const MetaObserver& observer = {});

// Full pipeline: train_once per meta-epoch, meta-level validation on `val`
// (or `meta_val` when given), optional test accuracy for reporting only.
MetaTrainingResult run_meta_training(const Dataset& train, const Dataset& val,
                                     const Dataset* test, const EmbeddingTable& initial,
                                     const ClassifierConfig& classifier,
                                     const GroverConfig& config,
                                     const Dataset* meta_val = nullptr,
                                     const MetaObserver& observer = {},
                                     const std::function<void(const MetaEpochRecord&)>& on_record = {});

nlohmann::json to_json(const ClassifierConfig& c);
nlohmann::json to_json(const GroverConfig& c);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

// Canonical configuration document and its hash.
nlohmann::json run_config_json(const ClassifierConfig& classifier, const GroverConfig& grover);
std::uint64_t config_hash(const nlohmann::json& config);
std::string hex64(std::uint64_t v);

// Directory layout: manifest.json, embeddings.txt (word-vector text),
// params.bin (little-endian float64, tensors in ClassifierParams order).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);

// Verifies the manifest against the stored files; when expected hashes are
// given they must match too. Throws ManifestMismatch on any disagreement.
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           std::optional<std::uint64_t> expected_config_hash = std::nullopt,
                           std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

// One JSON object per line, fields mirroring MetaEpochRecord (without timing).
void write_run_report(std::span<const MetaEpochRecord> records, const std::filesystem::path& path);
std::vector<MetaEpochRecord> read_run_report(const std::filesystem::path& path);

}  // namespace grover
