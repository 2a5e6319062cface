#include "grover/data_pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "grover/error.hpp"

namespace grover {

Vocabulary::Vocabulary() {
  add(kPadToken, 0);
  add(kOovToken, 0);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumSpecial || tokens[kPad] != kPadToken || tokens[kOov] != kOovToken) {
    throw InputError("token list must start with " + std::string(kPadToken) + " and " +
                     std::string(kOovToken));
  }
  Vocabulary vocab;
  for (std::size_t i = kNumSpecial; i < tokens.size(); ++i) {
    if (vocab.find(tokens[i])) throw InputError("duplicate token '" + tokens[i] + "'");
    vocab.add(tokens[i], 0);
  }
  return vocab;
}

TokenId Vocabulary::add(std::string_view token, std::uint64_t count) {
  auto [it, inserted] =
      index_.try_emplace(std::string(token), static_cast<TokenId>(tokens_.size()));
  if (inserted) {
    tokens_.emplace_back(token);
    frequency_.push_back(0);
  }
  frequency_[it->second] += count;
  return it->second;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id_or_oov(std::string_view token) const {
  return find(token).value_or(kOov);
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = fnv1a64("vocab");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\n", 1), h);
  }
  return h;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool word_char = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
                           (c >= 'A' && c <= 'Z') || c >= 0x80;
    if (word_char) {
      current.push_back(static_cast<char>((c >= 'A' && c <= 'Z') ? c - 'A' + 'a' : c));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Vocabulary build_vocab(std::span<const std::string> train_texts) {
  if (train_texts.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  Vocabulary vocab;
  for (const auto& text : train_texts) {
    for (const auto& tok : tokenize(text)) vocab.add(tok);
  }
  return vocab;
}

Vocabulary build_vocab(std::span<const LabeledText> train_texts) {
  std::vector<std::string> texts;
  texts.reserve(train_texts.size());
  for (const auto& t : train_texts) texts.push_back(t.text);
  return build_vocab(std::span<const std::string>(texts));
}

std::pair<std::vector<LabeledText>, std::vector<LabeledText>> split_train_val(
    std::span<const LabeledText> examples, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must be in (0, 1)");
  }
  if (examples.size() < 2) throw InputError("need at least 2 examples to split");
  const auto n_val =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(examples.size())));
  if (n_val == 0) throw InputError("validation split would be empty");
  if (n_val >= examples.size()) throw InputError("training split would be empty");

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<LabeledText> train, val;
  val.reserve(n_val);
  train.reserve(examples.size() - n_val);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? val : train).push_back(examples[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

std::vector<TokenId> fit_to_length(std::span<const TokenId> ids, std::size_t seq_len) {
  std::vector<TokenId> out(seq_len, Vocabulary::kPad);
  std::copy_n(ids.begin(), std::min(seq_len, ids.size()), out.begin());
  return out;
}

std::vector<TokenId> encode(std::span<const std::string> tokens, const Vocabulary& vocab,
                            std::size_t seq_len) {
  std::vector<TokenId> out(seq_len, Vocabulary::kPad);
  for (std::size_t i = 0; i < std::min(seq_len, tokens.size()); ++i) {
    out[i] = vocab.id_or_oov(tokens[i]);
  }
  return out;
}

Dataset make_dataset(std::span<const LabeledText> texts, const Vocabulary& vocab,
                     std::size_t seq_len, std::size_t num_classes, Split split) {
  if (seq_len == 0) throw ConfigError("seq_len must be positive");
  Dataset ds;
  ds.num_classes = num_classes;
  ds.seq_len = seq_len;
  ds.split = split;
  ds.examples.reserve(texts.size());
  for (const auto& t : texts) {
    if (t.label >= num_classes) {
      throw InputError("label " + std::to_string(t.label) + " out of range for " +
                       std::to_string(num_classes) + " classes");
    }
    Example ex;
    ex.label = t.label;
    for (const auto& tok : tokenize(t.text)) ex.source.push_back(vocab.id_or_oov(tok));
    ex.ids = fit_to_length(ex.source, seq_len);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

template <typename T>
std::vector<T> word_drop(std::span<const T> tokens, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("word drop probability must be in [0, 1)");
  std::vector<T> kept;
  kept.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (p == 0.0 || !rng.bernoulli(p)) kept.push_back(t);
  }
  return kept;
}

template std::vector<std::string> word_drop(std::span<const std::string>, double, Rng&);
template std::vector<TokenId> word_drop(std::span<const TokenId>, double, Rng&);

namespace {

std::size_t parse_label(std::string_view field, const std::string& source, std::size_t line) {
  std::size_t label = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), label);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(source, line, "label '" + std::string(field) + "' is not a non-negative integer");
  }
  return label;
}

LabeledText parse_csv_row(std::string_view row, const std::string& source, std::size_t line) {
  const auto comma = row.find(',');
  if (comma == std::string_view::npos) throw ParseError(source, line, "expected 'label,text'");
  LabeledText out;
  out.label = parse_label(row.substr(0, comma), source, line);
  std::string_view rest = row.substr(comma + 1);
  if (!rest.empty() && rest.front() == '"') {
    std::string text;
    std::size_t i = 1;
    bool closed = false;
    while (i < rest.size()) {
      if (rest[i] == '"') {
        if (i + 1 < rest.size() && rest[i + 1] == '"') {
          text.push_back('"');
          i += 2;
          continue;
        }
        closed = true;
        ++i;
        break;
      }
      text.push_back(rest[i++]);
    }
    if (!closed) throw ParseError(source, line, "unterminated quoted text");
    if (i != rest.size()) throw ParseError(source, line, "trailing characters after quoted text");
    out.text = std::move(text);
  } else {
    if (rest.find('"') != std::string_view::npos) {
      throw ParseError(source, line, "stray quote in unquoted text");
    }
    out.text = std::string(rest);
  }
  return out;
}

}  // namespace

std::vector<LabeledText> load_corpus(const std::filesystem::path& path, CorpusFormat format,
                                     std::optional<std::size_t> num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  const std::string source = path.string();
  std::vector<LabeledText> out;
  std::string row;
  std::size_t line = 0;
  while (std::getline(in, row)) {
    ++line;
    if (!row.empty() && row.back() == '\r') row.pop_back();
    if (row.empty()) continue;
    LabeledText item;
    if (format == CorpusFormat::csv) {
      item = parse_csv_row(row, source, line);
    } else {
      const auto tab = row.find('\t');
      if (tab == std::string::npos) throw ParseError(source, line, "expected 'label<TAB>text'");
      item.label = parse_label(std::string_view(row).substr(0, tab), source, line);
      item.text = row.substr(tab + 1);
    }
    if (num_classes && item.label >= *num_classes) {
      throw InputError(source + ":" + std::to_string(line) + ": label " +
                       std::to_string(item.label) + " out of range for " +
                       std::to_string(*num_classes) + " classes");
    }
    out.push_back(std::move(item));
  }
  if (in.bad()) throw IoError("read failure on " + source);
  return out;
}

void write_corpus(const std::filesystem::path& path, std::span<const LabeledText> texts,
                  CorpusFormat format) {
  std::ostringstream buf;
  for (const auto& t : texts) {
    if (t.text.find_first_of("\r\n") != std::string::npos) {
      throw InputError("corpus text may not contain line breaks");
    }
    if (format == CorpusFormat::tsv) {
      if (t.text.find('\t') != std::string::npos) throw InputError("tsv text may not contain tabs");
      buf << t.label << '\t' << t.text << '\n';
      continue;
    }
    buf << t.label << ',';
    if (t.text.find_first_of(",\"") != std::string::npos ||
        (!t.text.empty() && t.text.front() == '"')) {
      buf << '"';
      for (char c : t.text) {
        if (c == '"') buf << '"';
        buf << c;
      }
      buf << '"';
    } else {
      buf << t.text;
    }
    buf << '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus file " + path.string());
  out << buf.str();
  if (!out.flush()) throw IoError("write failure on " + path.string());
}

std::size_t count_classes(std::span<const LabeledText> texts) {
  std::size_t max_label = 0;
  for (const auto& t : texts) max_label = std::max(max_label, t.label);
  return texts.empty() ? 0 : max_label + 1;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic corpus needs at least 2 classes");
  if (keywords_per_class == 0) throw ConfigError("keywords_per_class must be positive");
  if (vocab_size < classes * keywords_per_class) {
    throw ConfigError("vocab_size must hold classes * keywords_per_class keyword tokens");
  }
  if (docs_per_class == 0) throw ConfigError("docs_per_class must be positive");
  if (min_length == 0 || max_length < min_length) throw ConfigError("invalid document length range");
  if (!(signal >= 0.0 && signal <= 1.0)) throw ConfigError("signal must be in [0, 1]");
  if (!(zipf_exponent > 0.0)) throw ConfigError("zipf_exponent must be positive");
}

std::string synthetic_token(std::size_t rank) { return "w" + std::to_string(rank); }

namespace {

struct SyntheticSampler {
  const SyntheticSpec& spec;
  std::vector<double> cdf;
  std::vector<std::vector<std::size_t>> keywords;  // ranks per class

  explicit SyntheticSampler(const SyntheticSpec& s) : spec(s) {
    cdf.resize(spec.vocab_size);
    double total = 0.0;
    for (std::size_t r = 0; r < spec.vocab_size; ++r) {
      total += 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
      cdf[r] = total;
    }
    for (auto& c : cdf) c /= total;
    // Keywords sit in the middle of the frequency range, interleaved across
    // classes, so they are neither the rarest nor the most common words.
    const std::size_t n_kw = spec.classes * spec.keywords_per_class;
    const std::size_t start = std::min(spec.vocab_size / 10, spec.vocab_size - n_kw);
    keywords.resize(spec.classes);
    for (std::size_t i = 0; i < n_kw; ++i) keywords[i % spec.classes].push_back(start + i);
  }

  std::size_t background(Rng& rng) const {
    const double u = rng.uniform01();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), spec.vocab_size - 1);
  }

  LabeledText document(std::size_t label, Rng& rng) const {
    const std::size_t len =
        spec.min_length + static_cast<std::size_t>(rng.below(spec.max_length - spec.min_length + 1));
    std::string text;
    for (std::size_t i = 0; i < len; ++i) {
      std::size_t rank;
      if (spec.signal > 0.0 && rng.bernoulli(spec.signal)) {
        const auto& kw = keywords[label];
        rank = kw[rng.below(kw.size())];
      } else {
        rank = background(rng);
      }
      if (i) text.push_back(' ');
      text += synthetic_token(rank);
    }
    return {label, std::move(text)};
  }

  std::vector<LabeledText> corpus(std::size_t per_class, Rng& rng) const {
    std::vector<LabeledText> out;
    out.reserve(per_class * spec.classes);
    // Round-robin labels so file order does not group classes.
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < spec.classes; ++c) out.push_back(document(c, rng));
    }
    return out;
  }
};

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticSampler sampler(spec);
  Rng train_rng(derive_seed(spec.seed, 1));
  Rng test_rng(derive_seed(spec.seed, 2));
  SyntheticCorpus out;
  out.train = sampler.corpus(spec.docs_per_class, train_rng);
  out.test = sampler.corpus(spec.test_docs_per_class, test_rng);
  return out;
}

SyntheticSpec parse_synthetic_spec(std::string_view text, SyntheticSpec base) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  };
  auto to_size = [](std::string_view key, std::string_view v) {
    std::size_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("synthetic spec: '" + std::string(key) + "' expects an integer");
    }
    return out;
  };
  auto to_double = [](std::string_view key, std::string_view v) {
    try {
      std::size_t used = 0;
      double out = std::stod(std::string(v), &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return out;
    } catch (const std::exception&) {
      throw ConfigError("synthetic spec: '" + std::string(key) + "' expects a number");
    }
  };

  SyntheticSpec spec = base;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find_first_of(",\n", pos);
    std::string_view item = trim(text.substr(pos, end == std::string_view::npos ? end : end - pos));
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    if (item.empty() || item.front() == '#') continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("synthetic spec: expected key=value, got '" + std::string(item) + "'");
    }
    const auto key = trim(item.substr(0, eq));
    const auto value = trim(item.substr(eq + 1));
    if (key == "classes") spec.classes = to_size(key, value);
    else if (key == "vocab_size") spec.vocab_size = to_size(key, value);
    else if (key == "docs_per_class") spec.docs_per_class = to_size(key, value);
    else if (key == "test_docs_per_class") spec.test_docs_per_class = to_size(key, value);
    else if (key == "keywords_per_class") spec.keywords_per_class = to_size(key, value);
    else if (key == "min_length") spec.min_length = to_size(key, value);
    else if (key == "max_length") spec.max_length = to_size(key, value);
    else if (key == "signal") spec.signal = to_double(key, value);
    else if (key == "zipf_exponent") spec.zipf_exponent = to_double(key, value);
    else if (key == "seed") spec.seed = to_size(key, value);
    else throw ConfigError("synthetic spec: unknown key '" + std::string(key) + "'");
  }
  spec.validate();
  return spec;
}

SyntheticSpec standard_synthetic_spec() {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.vocab_size = 500;
  spec.docs_per_class = 600;
  spec.test_docs_per_class = 100;
  spec.signal = 0.08;
  spec.seed = 20190101;
  return spec;
}

}  // namespace grover
