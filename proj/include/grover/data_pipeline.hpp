#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "grover/random.hpp"

namespace grover {

using TokenId = std::uint32_t;

// Token <-> id map with per-token training-corpus counts. Ids are dense;
// PAD is 0 and OOV is 1 in every vocabulary.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kOov = 1;
  static constexpr std::size_t kNumSpecial = 2;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kOovToken = "<oov>";

  Vocabulary();

  // Builds a vocabulary from an id-ordered token list (first two entries must
  // be the special tokens) with zero frequencies. Used when reading tables
  // back from disk, where counts are not stored.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // Adds `count` occurrences of `token`, assigning a new id on first sight.
  TokenId add(std::string_view token, std::uint64_t count = 1);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id_or_oov(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::uint64_t frequency(TokenId id) const { return frequency_.at(id); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::vector<std::uint64_t>& frequencies() const noexcept { return frequency_; }

  static constexpr bool is_special(TokenId id) noexcept { return id < kNumSpecial; }

  // Hash of the id-ordered token list; frequencies are not included so a
  // table reloaded from disk hashes the same as the vocabulary it came from.
  std::uint64_t fingerprint() const;

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> frequency_;
  std::unordered_map<std::string, TokenId> index_;
};

struct LabeledText {
  std::size_t label = 0;
  std::string text;

  bool operator==(const LabeledText&) const = default;
};

enum class Split { train, val, test };

struct Example {
  std::vector<TokenId> ids;     // exactly seq_len, PAD on the right
  std::vector<TokenId> source;  // untruncated, unpadded ids (used by word dropping)
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t num_classes = 0;
  std::size_t seq_len = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
};

// Lowercases and splits on anything that is not an ASCII letter or digit.
// Bytes >= 0x80 are kept as-is so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

// Counts every token in the given training texts. Ids follow first-occurrence
// order after the specials.
Vocabulary build_vocab(std::span<const LabeledText> train_texts);
Vocabulary build_vocab(std::span<const std::string> train_texts);

// Seeded shuffle, then the first round(fraction * N) shuffled items become the
// validation part. Both parts keep the shuffled order.
std::pair<std::vector<LabeledText>, std::vector<LabeledText>> split_train_val(
    std::span<const LabeledText> examples, double fraction, std::uint64_t seed);

std::vector<TokenId> encode(std::span<const std::string> tokens, const Vocabulary& vocab,
                            std::size_t seq_len);

// Truncates/pads an already-mapped id sequence to seq_len.
std::vector<TokenId> fit_to_length(std::span<const TokenId> ids, std::size_t seq_len);

Dataset make_dataset(std::span<const LabeledText> texts, const Vocabulary& vocab,
                     std::size_t seq_len, std::size_t num_classes, Split split);

// Removes each element independently with probability p.
template <typename T>
std::vector<T> word_drop(std::span<const T> tokens, double p, Rng& rng);

enum class CorpusFormat { csv, tsv };

// One example per line: `label,text` (or tab-separated). In CSV the text may
// be wrapped in double quotes to carry commas; `""` inside quotes is a quote.
// When num_classes is given, labels >= num_classes are rejected.
std::vector<LabeledText> load_corpus(const std::filesystem::path& path,
                                     CorpusFormat format = CorpusFormat::csv,
                                     std::optional<std::size_t> num_classes = std::nullopt);
void write_corpus(const std::filesystem::path& path, std::span<const LabeledText> texts,
                  CorpusFormat format = CorpusFormat::csv);

std::size_t count_classes(std::span<const LabeledText> texts);

// Desk-scale labelled corpus with a Zipf background vocabulary and
// per-class keyword tokens.
struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t vocab_size = 500;
  std::size_t docs_per_class = 500;       // training documents per class
  std::size_t test_docs_per_class = 100;  // test documents per class
  std::size_t keywords_per_class = 8;
  std::size_t min_length = 20;
  std::size_t max_length = 60;
  double signal = 0.15;  // probability that a token is drawn from the class keywords
  double zipf_exponent = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<LabeledText> train;
  std::vector<LabeledText> test;
};

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Background token name for a Zipf rank.
std::string synthetic_token(std::size_t rank);

// `key=value` pairs separated by commas or newlines; unknown keys are rejected.
SyntheticSpec parse_synthetic_spec(std::string_view text, SyntheticSpec base = {});

// The corpus used by the acceptance suite and `--synthetic standard`:
// 4 classes, 500-word vocabulary, keyword signal 0.08, 2400 training
// documents (2000 after a 1/6 validation split) and 400 test documents.
SyntheticSpec standard_synthetic_spec();

}  // namespace grover
