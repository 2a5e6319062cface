#include "grover/embedding_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "grover/error.hpp"

namespace grover {

EmbeddingTable::EmbeddingTable(std::shared_ptr<const Vocabulary> vocab, std::size_t dim)
    : vocab_(std::move(vocab)), dim_(dim) {
  if (!vocab_) throw ConfigError("embedding table needs a vocabulary");
  if (dim_ == 0) throw ConfigError("embedding dimension must be positive");
  values_.assign(vocab_->size() * dim_, 0.0);
}

bool EmbeddingTable::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
  if (a.dim_ != b.dim_ || a.values_.size() != b.values_.size()) return false;
  if (a.vocab_ != b.vocab_ && a.vocab_->tokens() != b.vocab_->tokens()) return false;
  // memcmp so that -0.0 vs 0.0 and NaN payloads count as differences.
  return std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0;
}

EmbeddingTable init_random(std::shared_ptr<const Vocabulary> vocab, std::size_t dim,
                           std::uint64_t seed) {
  EmbeddingTable table(std::move(vocab), dim);
  Rng rng(seed);
  for (std::size_t id = 0; id < table.rows(); ++id) {
    auto row = table.row(id);
    for (auto& v : row) v = rng.uniform(-0.5, 0.5);
  }
  std::fill(table.row(Vocabulary::kPad).begin(), table.row(Vocabulary::kPad).end(), 0.0);
  return table;
}

namespace {

bool parse_double(std::string_view s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

bool is_header(const std::vector<std::string_view>& fields) {
  if (fields.size() != 2) return false;
  std::size_t a = 0, b = 0;
  auto [p1, e1] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), a);
  auto [p2, e2] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), b);
  return e1 == std::errc() && e2 == std::errc() && p1 == fields[0].data() + fields[0].size() &&
         p2 == fields[1].data() + fields[1].size();
}

struct VectorLine {
  std::string token;
  std::vector<double> values;
};

// Calls `sink` for every vector line; checks dimensions and numeric fields.
template <typename Sink>
void read_word_vectors(const std::filesystem::path& path, std::size_t expected_dim, Sink&& sink,
                       std::size_t* header_count = nullptr, bool require_newline = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open word-vector file " + path.string());
  const std::string source = path.string();
  std::string raw;
  std::size_t line = 0;
  VectorLine vec;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    auto fields = split_spaces(raw);
    if (fields.empty()) continue;
    // Our own tables always end in a newline; a missing one means the file was cut short.
    if (require_newline && in.eof()) {
      throw ParseError(source, line, "unterminated last line (truncated file?)");
    }
    if (line == 1 && is_header(fields)) {
      std::size_t dim = 0;
      std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), dim);
      if (expected_dim != 0 && dim != expected_dim) {
        throw ConfigError(source + ": header declares dimension " + std::to_string(dim) +
                          ", expected " + std::to_string(expected_dim));
      }
      if (header_count) {
        std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), *header_count);
      }
      continue;
    }
    if (fields.size() < 2) throw ParseError(source, line, "expected 'token v1 ... vd'");
    const std::size_t dim = fields.size() - 1;
    if (expected_dim != 0 && dim != expected_dim) {
      throw ConfigError(source + ":" + std::to_string(line) + ": vector has dimension " +
                        std::to_string(dim) + ", expected " + std::to_string(expected_dim));
    }
    vec.token.assign(fields[0]);
    vec.values.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      if (!parse_double(fields[i + 1], vec.values[i]) || !std::isfinite(vec.values[i])) {
        throw ParseError(source, line, "bad number '" + std::string(fields[i + 1]) + "'");
      }
    }
    sink(vec, line);
  }
  if (in.bad()) throw IoError("read failure on " + source);
}

}  // namespace

EmbeddingTable load_pretrained(const std::filesystem::path& path,
                               std::shared_ptr<const Vocabulary> vocab, std::size_t dim,
                               std::uint64_t seed, PretrainedCoverage* coverage) {
  EmbeddingTable table = init_random(vocab, dim, seed);
  PretrainedCoverage cov;
  std::vector<bool> seen(table.rows(), false);
  read_word_vectors(path, dim, [&](const VectorLine& vec, std::size_t) {
    auto id = table.vocabulary().find(vec.token);
    if (!id) {
      ++cov.unused;
      return;
    }
    std::copy(vec.values.begin(), vec.values.end(), table.row(*id).begin());
    seen[*id] = true;
  });
  for (std::size_t id = Vocabulary::kNumSpecial; id < table.rows(); ++id) {
    (seen[id] ? cov.found : cov.missing) += 1;
  }
  if (coverage) *coverage = cov;
  return table;
}

FrequencyOrder frequency_order(const Vocabulary& vocab) {
  FrequencyOrder order;
  for (std::size_t id = Vocabulary::kNumSpecial; id < vocab.size(); ++id) {
    order.ids.push_back(static_cast<TokenId>(id));
  }
  const auto& freq = vocab.frequencies();
  std::stable_sort(order.ids.begin(), order.ids.end(),
                   [&](TokenId a, TokenId b) { return freq[a] < freq[b]; });
  return order;
}

EmbeddingTable apply_maskers(const EmbeddingTable& table, std::span<const TokenId> mask_ids,
                             double noise_range, Rng& rng, NoiseKind kind) {
  if (!(noise_range >= 0.0) || !std::isfinite(noise_range)) {
    throw ConfigError("noise range must be a finite non-negative number");
  }
  std::vector<TokenId> ids(mask_ids.begin(), mask_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (TokenId id : ids) {
    if (Vocabulary::is_special(id)) {
      throw ContractViolation("special token id " + std::to_string(id) + " cannot be masked");
    }
    if (id >= table.rows()) throw InputError("mask id " + std::to_string(id) + " out of range");
  }
  EmbeddingTable out = table;
  if (noise_range == 0.0) return out;
  for (TokenId id : ids) {
    for (auto& v : out.row(id)) {
      v += kind == NoiseKind::uniform ? rng.symmetric(noise_range) : noise_range * rng.normal();
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::string text;
  text.reserve(table.rows() * (table.dim() * 20 + 16));
  text += std::to_string(table.rows()) + " " + std::to_string(table.dim()) + "\n";
  char buf[32];
  for (std::size_t id = 0; id < table.rows(); ++id) {
    text += table.vocabulary().token(static_cast<TokenId>(id));
    for (double v : table.row(id)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      text.push_back(' ');
      text.append(buf, ptr);
    }
    text.push_back('\n');
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write embedding table " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failure on " + path.string());
}

EmbeddingTable load_table(const std::filesystem::path& path) {
  std::vector<std::string> tokens;
  std::vector<double> values;
  std::size_t dim = 0;
  std::size_t declared = 0;
  read_word_vectors(
      path, 0,
      [&](const VectorLine& vec, std::size_t line) {
        if (dim == 0) dim = vec.values.size();
        if (vec.values.size() != dim) {
          throw ParseError(path.string(), line, "inconsistent vector dimension");
        }
        tokens.push_back(vec.token);
        values.insert(values.end(), vec.values.begin(), vec.values.end());
      },
      &declared, true);
  if (tokens.empty()) throw ParseError(path.string(), 1, "no vectors in file");
  if (declared != 0 && declared != tokens.size()) {
    throw ParseError(path.string(), tokens.size() + 1,
                     "file declares " + std::to_string(declared) + " rows but contains " +
                         std::to_string(tokens.size()));
  }
  std::shared_ptr<const Vocabulary> vocab;
  try {
    vocab = std::make_shared<const Vocabulary>(Vocabulary::from_tokens(std::move(tokens)));
  } catch (const InputError& e) {
    throw ParseError(path.string(), 1, e.what());
  }
  EmbeddingTable table(vocab, dim);
  std::copy(values.begin(), values.end(), table.values().begin());
  return table;
}

}  // namespace grover
