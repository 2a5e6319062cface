#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "grover/data_pipeline.hpp"
#include "grover/random.hpp"

namespace grover {

// |V| x dim matrix of word vectors bound to a vocabulary. Copies share the
// vocabulary and own their values; the row count always equals |V|.
class EmbeddingTable {
 public:
  EmbeddingTable(std::shared_ptr<const Vocabulary> vocab, std::size_t dim);

  std::size_t rows() const noexcept { return vocab_->size(); }
  std::size_t dim() const noexcept { return dim_; }
  const Vocabulary& vocabulary() const noexcept { return *vocab_; }
  const std::shared_ptr<const Vocabulary>& vocabulary_ptr() const noexcept { return vocab_; }

  std::span<double> row(std::size_t id) { return {values_.data() + id * dim_, dim_}; }
  std::span<const double> row(std::size_t id) const { return {values_.data() + id * dim_, dim_}; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool all_finite() const;

  // Bit-exact equality of tokens, dims and values.
  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b);

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::size_t dim_;
  std::vector<double> values_;
};

// Non-special ids sorted ascending by frequency, ties by ascending id.
struct FrequencyOrder {
  std::vector<TokenId> ids;

  std::size_t size() const noexcept { return ids.size(); }
};

enum class NoiseKind { uniform, gaussian };

// Entries i.i.d. uniform in [-0.5, 0.5]; the PAD row is zero.
EmbeddingTable init_random(std::shared_ptr<const Vocabulary> vocab, std::size_t dim,
                           std::uint64_t seed);

struct PretrainedCoverage {
  std::size_t found = 0;    // vocabulary tokens present in the file
  std::size_t missing = 0;  // non-special vocabulary tokens absent from the file
  std::size_t unused = 0;   // file lines for tokens outside the vocabulary
};

// Word-vector text file: optional "count dim" header, then "token v1 ... vd".
// Tokens in the file get the file's vector verbatim; everything else keeps
// its init_random row.
EmbeddingTable load_pretrained(const std::filesystem::path& path,
                               std::shared_ptr<const Vocabulary> vocab, std::size_t dim,
                               std::uint64_t seed, PretrainedCoverage* coverage = nullptr);

FrequencyOrder frequency_order(const Vocabulary& vocab);

// Returns a copy of `table` with independent noise added to every entry of
// the masked rows: uniform(-r, r), or normal(0, r) for NoiseKind::gaussian.
// Rows are visited in ascending id order. Special ids are rejected.
EmbeddingTable apply_maskers(const EmbeddingTable& table, std::span<const TokenId> mask_ids,
                             double noise_range, Rng& rng, NoiseKind kind = NoiseKind::uniform);

// Full-precision word-vector text format (shortest decimal that round-trips).
void save_table(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_table(const std::filesystem::path& path);

// Shortest round-trip decimal rendering of a double.
std::string format_double(double v);

}  // namespace grover
