#include "grover/controller.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "grover/error.hpp"

namespace grover {

using nlohmann::json;

const char* to_string(MaskPolicy policy) {
  switch (policy) {
    case MaskPolicy::gradual: return "gradual";
    case MaskPolicy::none: return "none";
    case MaskPolicy::reversed: return "reversed";
    case MaskPolicy::both: return "both";
  }
  return "?";
}

MaskPolicy parse_policy(std::string_view s) {
  if (s == "gradual") return MaskPolicy::gradual;
  if (s == "none") return MaskPolicy::none;
  if (s == "reversed") return MaskPolicy::reversed;
  if (s == "both") return MaskPolicy::both;
  throw ConfigError("unknown policy '" + std::string(s) + "' (gradual, none, reversed, both)");
}

const char* to_string(NoiseKind kind) { return kind == NoiseKind::uniform ? "uniform" : "gaussian"; }

NoiseKind parse_noise_kind(std::string_view s) {
  if (s == "uniform") return NoiseKind::uniform;
  if (s == "gaussian") return NoiseKind::gaussian;
  throw ConfigError("unknown noise kind '" + std::string(s) + "' (uniform, gaussian)");
}

void InnerTrainingConfig::validate() const {
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(word_drop_p >= 0.0 && word_drop_p < 1.0)) throw ConfigError("word drop must be in [0, 1)");
  if (!(adam.lr > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
}

void GroverConfig::validate() const {
  if (!(step_size > 0.0 && step_size <= 1.0)) throw ConfigError("step size must be in (0, 1]");
  if (!(noise_range >= 0.0) || !std::isfinite(noise_range)) {
    throw ConfigError("noise range must be a finite non-negative number");
  }
  if (max_meta_epochs < 1) throw ConfigError("max meta-epochs must be at least 1");
  inner.validate();
}

std::size_t MaskerState::masked_count() const {
  std::size_t n = 0;
  for (const auto& r : mask) n += r.size();
  return n;
}

std::size_t window_size(std::size_t order_size, double step_size) {
  if (order_size == 0) return 0;
  // The tolerance keeps products like 0.1 * 100 from rounding up past an
  // exact integer.
  const double raw = std::ceil(step_size * static_cast<double>(order_size) - 1e-9);
  const auto w = static_cast<std::size_t>(std::max(1.0, raw));
  return std::min(w, order_size);
}

namespace {

std::vector<PositionRange> merge(std::vector<PositionRange> ranges) {
  std::sort(ranges.begin(), ranges.end(),
            [](const PositionRange& a, const PositionRange& b) { return a.begin < b.begin; });
  std::vector<PositionRange> out;
  for (const auto& r : ranges) {
    if (r.size() == 0) continue;
    if (!out.empty() && r.begin <= out.back().end) {
      out.back().end = std::max(out.back().end, r.end);
    } else {
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace

MaskerState advance_maskers(const MaskerState& state, bool improved, const FrequencyOrder& order,
                            double step_size, MaskPolicy policy) {
  const std::size_t n = order.size();
  if (state.frontier >= n) {
    throw ContractViolation("maskers already cover the whole vocabulary");
  }
  if (!(step_size > 0.0 && step_size <= 1.0)) throw ConfigError("step size must be in (0, 1]");
  const PositionRange window{state.frontier, std::min(n, state.frontier + window_size(n, step_size))};

  auto grown = state.mask;
  grown.push_back(window);
  grown = merge(std::move(grown));

  bool keep_previous = false;
  switch (policy) {
    case MaskPolicy::gradual: keep_previous = !improved; break;
    case MaskPolicy::none: keep_previous = false; break;
    case MaskPolicy::reversed: keep_previous = improved; break;
    case MaskPolicy::both: keep_previous = true; break;
  }

  MaskerState next;
  next.frontier = window.end;
  next.last_window = window;
  next.mask = keep_previous ? std::move(grown) : std::vector<PositionRange>{window};
  return next;
}

std::vector<TokenId> mask_ids(const MaskerState& state, const FrequencyOrder& order) {
  std::vector<TokenId> ids;
  for (const auto& r : state.mask) {
    for (std::size_t p = r.begin; p < r.end; ++p) ids.push_back(order.ids.at(p));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

TrainOnceResult train_once(std::uint64_t model_seed, const EmbeddingTable& embeddings,
                           const Dataset& train, const Dataset& val,
                           const ClassifierConfig& classifier, const InnerTrainingConfig& inner) {
  classifier.validate();
  inner.validate();
  if (train.empty() || val.empty()) throw InputError("training and validation sets must be non-empty");
  if (train.num_classes != classifier.num_classes || val.num_classes != classifier.num_classes) {
    throw ConfigError("dataset class count does not match the classifier");
  }
  if (train.seq_len != classifier.seq_len || val.seq_len != classifier.seq_len) {
    throw ConfigError("dataset sequence length does not match the classifier");
  }

  TrainOnceResult best{init_params(classifier, model_seed), embeddings, -1.0, 0, 0, false, {}};
  ClassifierParams params = best.params;
  EmbeddingTable table = embeddings;
  AdamState adam = AdamState::fresh(params, table, inner.adam);

  Rng order_rng(derive_seed(model_seed, 1));
  Rng dropout_rng(derive_seed(model_seed, 2));
  Rng word_drop_rng(derive_seed(model_seed, 3));

  std::vector<std::size_t> order(train.size());
  std::vector<std::size_t> labels;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= inner.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(std::span<std::size_t>(order));

    bool diverged = false;
    for (std::size_t start = 0; start < order.size() && !diverged; start += inner.batch_size) {
      const std::size_t end = std::min(order.size(), start + inner.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      TokenBatch batch;
      if (inner.word_drop_p > 0.0) {
        // Dropping happens on the untruncated text, so later words can shift
        // into the window.
        batch.batch_size = idx.size();
        batch.seq_len = train.seq_len;
        for (std::size_t i : idx) {
          const auto& src = train.examples[i].source;
          const auto kept = word_drop(std::span<const TokenId>(src), inner.word_drop_p, word_drop_rng);
          const auto ids = fit_to_length(kept, train.seq_len);
          batch.ids.insert(batch.ids.end(), ids.begin(), ids.end());
        }
      } else {
        batch = make_batch(train, idx);
      }
      labels.clear();
      for (std::size_t i : idx) labels.push_back(train.examples[i].label);

      auto fwd = forward(params, table, batch, true, &dropout_rng);
      auto lg = loss_and_grad(fwd.logits, labels, fwd.tape, params, table);
      if (!std::isfinite(lg.loss)) {
        diverged = true;
        break;
      }
      try {
        adam_step(params, table, lg.grads, adam);
      } catch (const TrainingDiverged&) {
        diverged = true;
      }
      if (!diverged && !params.all_finite()) diverged = true;
    }
    if (diverged) {
      best.diverged = true;
      break;
    }

    best.epochs_run = epoch;
    const double acc = accuracy(params, table, val);
    best.val_history.push_back(acc);
    if (acc > best.best_val_accuracy) {
      best.best_val_accuracy = acc;
      best.best_epoch = epoch;
      best.params = params;
      best.embeddings = table;
      since_best = 0;
    } else if (++since_best >= inner.patience) {
      break;
    }
  }
  if (best.best_epoch == 0) {
    // Diverged before finishing an epoch: report the untrained state.
    best.best_val_accuracy = accuracy(best.params, best.embeddings, val);
  }
  return best;
}

json to_json(const MetaEpochRecord& r, bool include_timing) {
  json windows = json::array();
  for (const auto& w : r.windows) windows.push_back({w.begin, w.end});
  json j = {
      {"meta_epoch", r.meta_epoch},
      {"windows", windows},
      {"masked_words", r.masked_words},
      {"frontier", r.frontier},
      {"inner_epochs", r.inner_epochs},
      {"best_inner_val_acc", r.best_inner_val_accuracy},
      {"val_acc", r.val_accuracy},
      {"test_acc", r.test_accuracy ? json(*r.test_accuracy) : json(nullptr)},
      {"accepted", r.accepted},
      {"max_acc", r.max_accuracy},
      {"diverged", r.diverged},
      {"model_seed", r.model_seed},
      {"noise_seed", r.noise_seed},
  };
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

MetaEpochRecord record_from_json(const json& j) {
  MetaEpochRecord r;
  r.meta_epoch = j.at("meta_epoch").get<std::size_t>();
  for (const auto& w : j.at("windows")) {
    r.windows.push_back({w.at(0).get<std::size_t>(), w.at(1).get<std::size_t>()});
  }
  r.masked_words = j.at("masked_words").get<std::size_t>();
  r.frontier = j.at("frontier").get<std::size_t>();
  r.inner_epochs = j.at("inner_epochs").get<std::size_t>();
  r.best_inner_val_accuracy = j.at("best_inner_val_acc").get<double>();
  r.val_accuracy = j.at("val_acc").get<double>();
  if (!j.at("test_acc").is_null()) r.test_accuracy = j.at("test_acc").get<double>();
  r.accepted = j.at("accepted").get<bool>();
  r.max_accuracy = j.at("max_acc").get<double>();
  r.diverged = j.at("diverged").get<bool>();
  r.model_seed = j.at("model_seed").get<std::uint64_t>();
  r.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  if (j.contains("wall_seconds")) r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

MetaTrainingResult run_meta_training(const FrequencyOrder& order, const EmbeddingTable& initial,
                                     const GroverConfig& config, const MetaTrainer& trainer,
                                     const json& run_config, const MetaObserver& observer) {
  config.validate();
  const std::size_t n = order.size();
  for (TokenId id : order.ids) {
    if (Vocabulary::is_special(id) || id >= initial.rows()) {
      throw ContractViolation("frequency order must list non-special ids of the table");
    }
  }

  MetaTrainingResult result{
      Checkpoint{ClassifierParams{}, initial, {}, {config_hash(run_config), initial.vocabulary().fingerprint(), run_config}},
      {},
      initial,
      false};
  EmbeddingTable& carried = result.carried;
  MaskerState maskers;
  std::optional<double> max_acc;
  bool improved = true;

  for (std::size_t meta = 0;; ++meta) {
    if (meta > 0) {
      if (maskers.frontier >= n) break;
      if (meta >= config.max_meta_epochs) {
        result.cap_reached = true;
        break;
      }
      maskers = advance_maskers(maskers, improved, order, config.step_size, config.policy);
    } else if (config.max_meta_epochs == 0) {
      break;
    }

    MetaEpochRecord rec;
    rec.meta_epoch = meta;
    rec.model_seed = derive_seed(config.seed, meta, 1);
    const auto masked = meta == 0 ? std::vector<TokenId>{} : mask_ids(maskers, order);
    std::optional<EmbeddingTable> noised_storage;
    if (meta > 0) {
      rec.noise_seed = derive_seed(config.seed, meta, 2);
      rec.windows = maskers.mask;
      rec.masked_words = maskers.masked_count();
      Rng noise_rng(rec.noise_seed);
      noised_storage.emplace(apply_maskers(carried, masked, config.noise_range, noise_rng, config.noise));
    }
    const EmbeddingTable& noised = noised_storage ? *noised_storage : carried;
    rec.frontier = maskers.frontier;

    const auto t0 = std::chrono::steady_clock::now();
    MetaTrainOutcome outcome = trainer(noised, rec.model_seed);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    rec.inner_epochs = outcome.inner_epochs;
    rec.best_inner_val_accuracy = outcome.best_inner_val_accuracy;
    rec.val_accuracy = outcome.val_accuracy;
    rec.test_accuracy = outcome.test_accuracy;
    rec.diverged = outcome.diverged;
    improved = !max_acc || outcome.val_accuracy > *max_acc;
    rec.accepted = improved;
    if (improved) max_acc = outcome.val_accuracy;
    rec.max_accuracy = *max_acc;

    if (observer) observer(MetaEpochTrace{meta, carried, noised, masked, rec});

    if (improved) {
      // Adopt W' and remember this meta-epoch as the best so far.
      result.best.params = std::move(outcome.params);
      result.best.embeddings = outcome.embeddings;
      result.best.record = rec;
      carried = std::move(outcome.embeddings);
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

MetaTrainingResult run_meta_training(const Dataset& train, const Dataset& val,
                                     const Dataset* test, const EmbeddingTable& initial,
                                     const ClassifierConfig& classifier,
                                     const GroverConfig& config, const Dataset* meta_val,
                                     const MetaObserver& observer,
                                     const std::function<void(const MetaEpochRecord&)>& on_record) {
  classifier.validate();
  config.validate();
  if (initial.dim() != classifier.embedding_dim) {
    throw ConfigError("initial embedding dimension does not match the classifier");
  }
  const Dataset& meta_set = meta_val ? *meta_val : val;
  MetaTrainer trainer = [&](const EmbeddingTable& init, std::uint64_t seed) {
    auto r = train_once(seed, init, train, val, classifier, config.inner);
    MetaTrainOutcome out{std::move(r.params), std::move(r.embeddings), 0.0, std::nullopt,
                         r.epochs_run, r.best_val_accuracy, r.diverged};
    out.val_accuracy = accuracy(out.params, out.embeddings, meta_set);
    if (test && !test->empty()) out.test_accuracy = accuracy(out.params, out.embeddings, *test);
    return out;
  };
  MetaObserver hook = [&](const MetaEpochTrace& trace) {
    if (observer) observer(trace);
    if (on_record) on_record(trace.record);
  };
  return run_meta_training(frequency_order(initial.vocabulary()), initial, config, trainer,
                           run_config_json(classifier, config), hook);
}

json to_json(const ClassifierConfig& c) {
  return {{"embedding_dim", c.embedding_dim},   {"seq_len", c.seq_len},
          {"kernel_sizes", c.kernel_sizes},     {"conv1_channels", c.conv1_channels},
          {"conv2_channels", c.conv2_channels}, {"num_classes", c.num_classes},
          {"dropout_p", c.dropout_p},           {"model_kind", to_string(c.model_kind)}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
  ClassifierConfig c;
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
  c.conv1_channels = j.at("conv1_channels").get<std::size_t>();
  c.conv2_channels = j.at("conv2_channels").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.dropout_p = j.at("dropout_p").get<double>();
  c.model_kind = parse_model_kind(j.at("model_kind").get<std::string>());
  return c;
}

json to_json(const GroverConfig& c) {
  return {{"step_size", c.step_size},
          {"noise_range", c.noise_range},
          {"policy", to_string(c.policy)},
          {"noise", to_string(c.noise)},
          {"seed", c.seed},
          {"max_meta_epochs", c.max_meta_epochs},
          {"inner",
           {{"max_epochs", c.inner.max_epochs},
            {"patience", c.inner.patience},
            {"batch_size", c.inner.batch_size},
            {"word_drop_p", c.inner.word_drop_p},
            {"adam",
             {{"lr", c.inner.adam.lr},
              {"beta1", c.inner.adam.beta1},
              {"beta2", c.inner.adam.beta2},
              {"epsilon", c.inner.adam.epsilon}}}}}};
}

json run_config_json(const ClassifierConfig& classifier, const GroverConfig& grover) {
  return {{"classifier", to_json(classifier)}, {"grover", to_json(grover)}};
}

std::uint64_t config_hash(const json& config) { return fnv1a64(config.dump()); }

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

namespace {

constexpr const char* kCheckpointFormat = "grover-checkpoint/1";

std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16) throw ManifestMismatch("malformed hash '" + s + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw ManifestMismatch("malformed hash '" + s + "'");
  }
  return v;
}

std::string params_bytes(const ClassifierParams& params) {
  static_assert(std::endian::native == std::endian::little, "params.bin is little-endian float64");
  std::string bytes;
  for (const auto* t : params.tensors()) {
    const auto* p = reinterpret_cast<const char*>(t->values.data());
    bytes.append(p, t->values.size() * sizeof(double));
  }
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out.flush()) throw IoError("write failure on " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  audit_shapes(ckpt.params);

  // The manifest goes last so an interrupted save never looks complete.
  std::filesystem::remove(dir / "manifest.json", ec);
  save_table(ckpt.embeddings, dir / "embeddings.txt");
  const std::string bytes = params_bytes(ckpt.params);
  write_file(dir / "params.bin", bytes);

  json tensors = json::array();
  const auto names = ckpt.params.tensor_names();
  const auto ts = ckpt.params.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    tensors.push_back({{"name", names[i]}, {"shape", ts[i]->shape}});
  }
  json manifest = {
      {"format", kCheckpointFormat},
      {"config", ckpt.manifest.config},
      {"config_hash", hex64(ckpt.manifest.config_hash)},
      {"vocab_hash", hex64(ckpt.manifest.vocab_hash)},
      {"record", to_json(ckpt.record)},
      {"embeddings", {{"file", "embeddings.txt"}, {"rows", ckpt.embeddings.rows()}, {"dim", ckpt.embeddings.dim()}}},
      {"params",
       {{"file", "params.bin"},
        {"dtype", "float64-le"},
        {"count", ckpt.params.parameter_count()},
        {"checksum", hex64(fnv1a64(bytes))},
        {"tensors", tensors}}},
  };
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           std::optional<std::uint64_t> expected_config_hash,
                           std::optional<std::uint64_t> expected_vocab_hash) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("checkpoint directory " + dir.string() + " does not exist");
  }
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw ManifestMismatch("unreadable manifest in " + dir.string() + ": " + e.what());
  }

  try {
    if (manifest.at("format") != kCheckpointFormat) throw ManifestMismatch("unknown checkpoint format");
    Checkpoint ckpt{ClassifierParams{}, load_table(dir / manifest.at("embeddings").at("file").get<std::string>()),
                    record_from_json(manifest.at("record")), {}};
    ckpt.manifest.config = manifest.at("config");
    ckpt.manifest.config_hash = parse_hex64(manifest.at("config_hash").get<std::string>());
    ckpt.manifest.vocab_hash = parse_hex64(manifest.at("vocab_hash").get<std::string>());

    if (config_hash(ckpt.manifest.config) != ckpt.manifest.config_hash) {
      throw ManifestMismatch("config hash does not match the stored configuration");
    }
    if (expected_config_hash && *expected_config_hash != ckpt.manifest.config_hash) {
      throw ManifestMismatch("checkpoint belongs to a different configuration");
    }
    if (ckpt.embeddings.vocabulary().fingerprint() != ckpt.manifest.vocab_hash) {
      throw ManifestMismatch("vocabulary hash does not match the stored embedding table");
    }
    if (expected_vocab_hash && *expected_vocab_hash != ckpt.manifest.vocab_hash) {
      throw ManifestMismatch("checkpoint belongs to a different vocabulary");
    }

    const auto classifier = classifier_config_from_json(ckpt.manifest.config.at("classifier"));
    ckpt.params = ClassifierParams::zeros(classifier);
    const auto& pm = manifest.at("params");
    const auto names = ckpt.params.tensor_names();
    auto ts = ckpt.params.tensors();
    const auto& listed = pm.at("tensors");
    if (listed.size() != ts.size()) throw ManifestMismatch("tensor list does not match the configuration");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (listed[i].at("name") != names[i] ||
          listed[i].at("shape").get<std::vector<std::size_t>>() != ts[i]->shape) {
        throw ManifestMismatch("tensor " + names[i] + " does not match the configuration");
      }
    }
    const std::string bytes = read_file(dir / pm.at("file").get<std::string>());
    if (bytes.size() != ckpt.params.parameter_count() * sizeof(double)) {
      throw ManifestMismatch("params.bin has the wrong size");
    }
    if (hex64(fnv1a64(bytes)) != pm.at("checksum").get<std::string>()) {
      throw ManifestMismatch("params.bin checksum mismatch");
    }
    std::size_t offset = 0;
    for (auto* t : ts) {
      std::memcpy(t->values.data(), bytes.data() + offset, t->values.size() * sizeof(double));
      offset += t->values.size() * sizeof(double);
    }
    if (ckpt.embeddings.dim() != classifier.embedding_dim) {
      throw ManifestMismatch("embedding dimension does not match the configuration");
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw ManifestMismatch("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

void write_run_report(std::span<const MetaEpochRecord> records, const std::filesystem::path& path) {
  std::string text;
  for (const auto& r : records) text += to_json(r).dump() + "\n";
  write_file(path, text);
}

std::vector<MetaEpochRecord> read_run_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read run report " + path.string());
  std::vector<MetaEpochRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), n, e.what());
    }
  }
  return out;
}

}  // namespace grover
