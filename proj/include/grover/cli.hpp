#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "grover/analysis.hpp"
#include "grover/controller.hpp"
#include "grover/data_pipeline.hpp"
#include "grover/embedding_store.hpp"
#include "grover/nn_core.hpp"

namespace grover::cli {

// Effective configuration of a train or sweep run after defaults, the config
// file and command-line flags have been merged (flags win).
struct RunConfig {
  // Exactly one data source.
  std::optional<std::filesystem::path> data;  // training corpus
  std::optional<std::filesystem::path> test;  // optional test corpus
  std::optional<std::string> synthetic;       // "standard", "k=v,..." or a spec file
  CorpusFormat format = CorpusFormat::csv;
  double val_fraction = 0.15;
  double meta_val_fraction = 0.0;  // > 0 carves a separate meta-validation set out of val

  std::string embeddings = "random";  // "random" or a word-vector file
  ClassifierConfig classifier;
  GroverConfig grover;

  std::optional<std::filesystem::path> out;
  std::size_t jobs = 1;
  std::size_t repeats = 1;
  std::vector<std::string> sweeps;

  // Flat `key = value` form, keys equal to the long flag names.
  std::map<std::string, std::string> to_key_values() const;
  void validate() const;
};

// Everything a run needs, built from a RunConfig.
struct Experiment {
  std::shared_ptr<const Vocabulary> vocab;
  Dataset train;
  Dataset val;
  std::optional<Dataset> meta_val;
  std::optional<Dataset> test;
  ClassifierConfig classifier;  // num_classes filled in from the data

  EmbeddingTable initial_embeddings(std::uint64_t seed) const;

  std::string embedding_source;
};

Experiment prepare_experiment(const RunConfig& config);

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_sweep(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_analyze(const std::filesystem::path& checkpoint, const std::vector<std::string>& cues,
                std::size_t k, const std::optional<std::filesystem::path>& initial,
                const std::optional<std::filesystem::path>& vectors_out, std::ostream& out,
                std::ostream& err);
int cmd_synth(const std::string& spec, const std::filesystem::path& out_dir, std::ostream& out,
              std::ostream& err);

// Parses `args` (without the program name) and dispatches to a subcommand.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

SyntheticSpec resolve_synthetic_spec(const std::string& text);

}  // namespace grover::cli
