#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "grover/controller.hpp"
#include "grover/embedding_store.hpp"

namespace grover {

// u.v / (|u||v|), clamped to [-1, 1]. Throws InputError for a zero vector.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

struct Neighbor {
  TokenId id = 0;
  std::string token;
  double similarity = 0.0;
};

struct NeighborReport {
  std::string cue;
  std::vector<Neighbor> neighbors;  // similarity descending, ties by ascending id
};

// Exact top-k by cosine over every non-special, non-cue row. Zero rows have
// no defined similarity and are skipped. k larger than the candidate count
// returns every candidate.
NeighborReport nearest_neighbors(const EmbeddingTable& table, std::string_view cue, std::size_t k);

// "cue: tok(.5939), tok(.5929), ..."
std::string format_neighbor_report(const NeighborReport& report);

// |A ∩ B| / |A ∪ B| over the neighbor token sets of two reports.
double neighbor_overlap(const NeighborReport& a, const NeighborReport& b);

struct WordDrift {
  TokenId id = 0;
  double euclidean = 0.0;
  double cosine = 1.0;  // similarity to its former self
};

struct DriftReport {
  std::vector<WordDrift> words;
  double mean_euclidean = 0.0;
  double median_euclidean = 0.0;
  double mean_cosine = 1.0;
  double median_cosine = 1.0;
};

// Per-word movement between two tables over the same vocabulary. Defaults to
// every non-special id. A word whose old or new row is zero gets cosine 1 if
// both rows are zero and 0 otherwise.
DriftReport embedding_drift(const EmbeddingTable& before, const EmbeddingTable& after,
                            std::optional<std::span<const TokenId>> ids = std::nullopt);

// Curve CSV with header meta_epoch,val_acc,test_acc (test left empty when absent).
void emit_curves(std::span<const MetaEpochRecord> records, const std::filesystem::path& path);

struct CurvePoint {
  std::size_t meta_epoch = 0;
  double val_acc = 0.0;
  std::optional<double> test_acc;

  bool operator==(const CurvePoint&) const = default;
};
std::vector<CurvePoint> read_curves(const std::filesystem::path& path);

// One grid point of an ablation sweep.
struct SweepPoint {
  std::string value;
  std::vector<double> final_test_accuracy;     // selected checkpoint, per repeat
  std::vector<double> baseline_test_accuracy;  // meta-epoch 0, per repeat
  std::vector<std::string> failures;           // error messages of failed repeats
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single run
  double baseline_mean = 0.0;
};

struct SweepResult {
  std::string parameter;
  std::vector<SweepPoint> points;
};

struct SweepAxis {
  std::string parameter;
  std::vector<std::string> values;
};

// Parameters a sweep may vary.
const std::vector<std::string>& sweepable_parameters();

// Applies `parameter=value` to the configs. Throws ConfigError for unknown
// names or unparseable values.
void apply_sweep_value(std::string_view parameter, std::string_view value,
                       ClassifierConfig& classifier, GroverConfig& grover);

// `name=v1,v2,...`
SweepAxis parse_sweep_axis(std::string_view text);

struct ExperimentData {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;
  const Dataset* test = nullptr;
  const Dataset* meta_val = nullptr;
  // Initial table for a run seed (random init depends on the seed; a
  // pretrained file ignores it).
  std::function<EmbeddingTable(std::uint64_t seed)> embeddings;
};

// Runs every grid value `repeats` times with seeds derived from
// (master_seed, grid_index, repeat_index). Independent runs are spread over
// `jobs` threads; results do not depend on the thread count.
SweepResult run_sweep(const ExperimentData& data, const ClassifierConfig& classifier,
                      const GroverConfig& base, const SweepAxis& axis, std::size_t repeats,
                      std::uint64_t master_seed, std::size_t jobs = 1);

nlohmann::json to_json(const SweepResult& result);

// Mean and sample standard deviation.
std::pair<double, double> mean_stddev(std::span<const double> xs);

}  // namespace grover
