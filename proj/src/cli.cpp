#include "grover/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "grover/error.hpp"

namespace grover::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_sizes(const std::vector<std::size_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument("bad");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("kernel sizes must be positive integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("kernel sizes may not be empty");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failure on " + path.string());
}

std::string percent(double acc) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * acc);
  return buf;
}

std::string signed_points(double delta) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.2f", 100.0 * delta);
  return buf;
}

std::string accuracy_text(double acc) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", acc);
  return buf;
}

// Reads a flat `key = value` file into flag arguments.
std::vector<std::string> config_file_args(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#' || line[first] == ';' || line[first] == '[') {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), n, "expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
      if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
      return s;
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(path.string(), n, "empty key");
    args.push_back("--" + key);
    args.push_back(value);
  }
  return args;
}

}  // namespace

std::map<std::string, std::string> RunConfig::to_key_values() const {
  std::map<std::string, std::string> kv;
  if (data) kv["data"] = data->string();
  if (test) kv["test"] = test->string();
  if (synthetic) kv["synthetic"] = *synthetic;
  kv["format"] = format == CorpusFormat::csv ? "csv" : "tsv";
  kv["val-fraction"] = format_double(val_fraction);
  kv["meta-val-fraction"] = format_double(meta_val_fraction);
  kv["embeddings"] = embeddings;
  kv["embedding-dim"] = std::to_string(classifier.embedding_dim);
  kv["seq-len"] = std::to_string(classifier.seq_len);
  kv["kernel-sizes"] = join_sizes(classifier.kernel_sizes);
  kv["conv1-channels"] = std::to_string(classifier.conv1_channels);
  kv["conv2-channels"] = std::to_string(classifier.conv2_channels);
  kv["dropout"] = format_double(classifier.dropout_p);
  kv["model"] = to_string(classifier.model_kind);
  kv["step-size"] = format_double(grover.step_size);
  kv["noise-range"] = format_double(grover.noise_range);
  kv["policy"] = to_string(grover.policy);
  kv["noise"] = to_string(grover.noise);
  kv["word-drop"] = format_double(grover.inner.word_drop_p);
  kv["seed"] = std::to_string(grover.seed);
  kv["max-meta-epochs"] = std::to_string(grover.max_meta_epochs);
  kv["patience"] = std::to_string(grover.inner.patience);
  kv["epochs"] = std::to_string(grover.inner.max_epochs);
  kv["batch-size"] = std::to_string(grover.inner.batch_size);
  kv["lr"] = format_double(grover.inner.adam.lr);
  if (out) kv["out"] = out->string();
  return kv;
}

void RunConfig::validate() const {
  if (data.has_value() == synthetic.has_value()) {
    throw ConfigError("exactly one of --data and --synthetic is required");
  }
  if (test && synthetic) throw ConfigError("--test only applies to --data corpora");
  if (!out) throw ConfigError("--out is required");
  if (!(meta_val_fraction >= 0.0 && meta_val_fraction < 1.0)) {
    throw ConfigError("--meta-val-fraction must be in [0, 1)");
  }
  grover.validate();
  if (classifier.embedding_dim == 0 || classifier.seq_len == 0) {
    throw ConfigError("embedding-dim and seq-len must be positive");
  }
}

SyntheticSpec resolve_synthetic_spec(const std::string& text) {
  if (text == "standard") return standard_synthetic_spec();
  if (text.find('=') != std::string::npos) return parse_synthetic_spec(text, standard_synthetic_spec());
  std::ifstream in(text);
  if (!in) throw IoError("cannot read synthetic spec file " + text);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synthetic_spec(ss.str(), standard_synthetic_spec());
}

EmbeddingTable Experiment::initial_embeddings(std::uint64_t seed) const {
  if (embedding_source == "random") return init_random(vocab, classifier.embedding_dim, seed);
  return load_pretrained(embedding_source, vocab, classifier.embedding_dim, seed);
}

Experiment prepare_experiment(const RunConfig& config) {
  config.validate();
  std::vector<LabeledText> train_texts, test_texts;
  std::size_t num_classes = 0;
  if (config.synthetic) {
    const auto spec = resolve_synthetic_spec(*config.synthetic);
    auto corpus = generate_synthetic(spec);
    train_texts = std::move(corpus.train);
    test_texts = std::move(corpus.test);
    num_classes = spec.classes;
  } else {
    train_texts = load_corpus(*config.data, config.format);
    if (config.test) test_texts = load_corpus(*config.test, config.format);
    num_classes = std::max(count_classes(train_texts), count_classes(test_texts));
  }
  if (train_texts.empty()) throw InputError("training corpus is empty");
  if (num_classes < 2) throw InputError("corpus must contain at least 2 classes");

  auto [train_part, val_part] =
      split_train_val(train_texts, config.val_fraction, derive_seed(config.grover.seed, 0x5b1));
  std::vector<LabeledText> meta_part;
  if (config.meta_val_fraction > 0.0) {
    auto [v, m] = split_train_val(val_part, config.meta_val_fraction,
                                  derive_seed(config.grover.seed, 0x5b2));
    val_part = std::move(v);
    meta_part = std::move(m);
  }

  Experiment ex;
  ex.vocab = std::make_shared<const Vocabulary>(build_vocab(train_part));
  ex.classifier = config.classifier;
  ex.classifier.num_classes = num_classes;
  ex.classifier.validate();
  const std::size_t L = ex.classifier.seq_len;
  ex.train = make_dataset(train_part, *ex.vocab, L, num_classes, Split::train);
  ex.val = make_dataset(val_part, *ex.vocab, L, num_classes, Split::val);
  if (!meta_part.empty()) ex.meta_val = make_dataset(meta_part, *ex.vocab, L, num_classes, Split::val);
  if (!test_texts.empty()) ex.test = make_dataset(test_texts, *ex.vocab, L, num_classes, Split::test);
  ex.embedding_source = config.embeddings;
  return ex;
}

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  fs::path dir;
  try {
    config.validate();
    dir = *config.out;
    fs::create_directories(dir);
    fs::remove(dir / "FAILED");

    std::string effective;
    for (const auto& [k, v] : config.to_key_values()) effective += k + " = " + v + "\n";
    write_text(dir / "effective_config.ini", effective);

    const Experiment ex = prepare_experiment(config);
    const auto initial = ex.initial_embeddings(derive_seed(config.grover.seed, 0xe3b));
    save_table(initial, dir / "initial_embeddings.txt");
    out << "data train=" << ex.train.size() << " val=" << ex.val.size()
        << " test=" << (ex.test ? ex.test->size() : 0) << " vocab=" << ex.vocab->size()
        << " classes=" << ex.classifier.num_classes << "\n";

    auto on_record = [&](const MetaEpochRecord& r) {
      out << "meta=" << r.meta_epoch << " masked=" << r.masked_words << " frontier=" << r.frontier
          << " epochs=" << r.inner_epochs << " val=" << accuracy_text(r.val_accuracy)
          << " test=" << (r.test_accuracy ? accuracy_text(*r.test_accuracy) : "-")
          << " accepted=" << (r.accepted ? 1 : 0) << " max=" << accuracy_text(r.max_accuracy)
          << (r.diverged ? " diverged=1" : "") << "\n";
      out.flush();
    };
    const auto result = run_meta_training(ex.train, ex.val, ex.test ? &*ex.test : nullptr, initial,
                                          ex.classifier, config.grover,
                                          ex.meta_val ? &*ex.meta_val : nullptr, {}, on_record);

    write_run_report(result.records, dir / "report.jsonl");
    std::string timings;
    for (const auto& r : result.records) {
      timings += json{{"meta_epoch", r.meta_epoch}, {"wall_seconds", r.wall_seconds}}.dump() + "\n";
    }
    write_text(dir / "timings.jsonl", timings);
    emit_curves(result.records, dir / "curves.csv");
    save_checkpoint(result.best, dir / "checkpoint");

    const auto metric = [](const MetaEpochRecord& r) { return r.test_accuracy.value_or(r.val_accuracy); };
    const double baseline = metric(result.records.front());
    const double best = metric(result.best.record);
    if (result.cap_reached) {
      err << "warning: meta-epoch cap reached before every word was masked\n";
    }
    out << "baseline " << percent(baseline) << " grover " << percent(best) << " delta "
        << signed_points(best - baseline) << " (" << (ex.test ? "test" : "val")
        << " accuracy, best meta-epoch " << result.best.record.meta_epoch << " of "
        << result.records.size() << ")\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    if (!dir.empty()) {
      std::error_code ec;
      if (fs::is_directory(dir, ec)) {
        std::ofstream flag(dir / "FAILED");
        flag << e.what() << "\n";
      }
    }
    return 1;
  }
}

int cmd_sweep(const RunConfig& config, std::ostream& out, std::ostream& err) {
  std::vector<SweepAxis> axes;
  try {
    if (config.sweeps.empty()) throw ConfigError("at least one --sweep is required");
    for (const auto& s : config.sweeps) axes.push_back(parse_sweep_axis(s));
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }
  try {
    config.validate();
    const fs::path dir = *config.out;
    fs::create_directories(dir);
    const Experiment ex = prepare_experiment(config);
    ExperimentData data;
    data.train = &ex.train;
    data.val = &ex.val;
    data.test = ex.test ? &*ex.test : nullptr;
    data.meta_val = ex.meta_val ? &*ex.meta_val : nullptr;
    data.embeddings = [&ex](std::uint64_t seed) { return ex.initial_embeddings(seed); };

    std::string summary;
    bool failures = false;
    for (const auto& axis : axes) {
      const auto result = run_sweep(data, ex.classifier, config.grover, axis, config.repeats,
                                    config.grover.seed, config.jobs);
      for (const auto& p : result.points) {
        out << "sweep " << result.parameter << "=" << p.value << " runs=" << p.final_test_accuracy.size()
            << " mean=" << percent(p.mean) << " std=" << percent(p.stddev)
            << " baseline=" << percent(p.baseline_mean) << " delta=" << signed_points(p.mean - p.baseline_mean)
            << "\n";
        for (const auto& f : p.failures) err << "warning: " << result.parameter << "=" << p.value << " " << f << "\n";
        failures = failures || !p.failures.empty();
      }
      summary += to_json(result).dump() + "\n";
    }
    write_text(dir / "sweep.jsonl", summary);
    return failures ? 1 : 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_analyze(const fs::path& checkpoint, const std::vector<std::string>& cues, std::size_t k,
                const std::optional<fs::path>& initial, const std::optional<fs::path>& vectors_out,
                std::ostream& out, std::ostream& err) {
  Checkpoint ckpt{ClassifierParams{}, EmbeddingTable(std::make_shared<const Vocabulary>(), 1), {}, {}};
  std::optional<EmbeddingTable> before;
  try {
    ckpt = load_checkpoint(checkpoint);
    fs::path init_path = initial ? *initial : checkpoint.parent_path() / "initial_embeddings.txt";
    if (initial || fs::exists(init_path)) before = load_table(init_path);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  const auto& table = ckpt.embeddings;
  out << "checkpoint meta_epoch=" << ckpt.record.meta_epoch
      << " val=" << accuracy_text(ckpt.record.val_accuracy) << "\n";

  if (before) {
    try {
      const auto drift = embedding_drift(*before, table);
      out << "drift mean_euclidean=" << accuracy_text(drift.mean_euclidean)
          << " median_euclidean=" << accuracy_text(drift.median_euclidean)
          << " mean_cosine=" << accuracy_text(drift.mean_cosine)
          << " median_cosine=" << accuracy_text(drift.median_cosine) << "\n";
    } catch (const std::exception& e) {
      err << "warning: drift unavailable: " << e.what() << "\n";
      before.reset();
    }
  }

  std::size_t failed = 0;
  std::string vectors;
  std::size_t vector_rows = 0;
  for (const auto& cue : cues) {
    try {
      const auto report = nearest_neighbors(table, cue, k);
      out << format_neighbor_report(report) << "\n";
      if (before) {
        const auto initial_report = nearest_neighbors(*before, cue, k);
        out << "initial " << format_neighbor_report(initial_report) << "\n";
        out << "overlap " << cue << " " << accuracy_text(neighbor_overlap(initial_report, report)) << "\n";
      }
      auto add_row = [&](const std::string& token, TokenId id) {
        vectors += cue + "/" + token;
        for (double v : table.row(id)) vectors += " " + format_double(v);
        vectors += "\n";
        ++vector_rows;
      };
      add_row(cue, *table.vocabulary().find(cue));
      for (const auto& n : report.neighbors) add_row(n.token, n.id);
    } catch (const std::exception& e) {
      err << "warning: " << e.what() << "\n";
      ++failed;
    }
  }
  if (vectors_out) {
    try {
      write_text(*vectors_out, std::to_string(vector_rows) + " " + std::to_string(table.dim()) + "\n" + vectors);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return failed == 0 ? 0 : 1;
}

int cmd_synth(const std::string& spec_text, const fs::path& out_dir, std::ostream& out,
              std::ostream& err) {
  try {
    const auto spec = resolve_synthetic_spec(spec_text);
    const auto corpus = generate_synthetic(spec);
    fs::create_directories(out_dir);
    write_corpus(out_dir / "train.csv", corpus.train);
    write_corpus(out_dir / "test.csv", corpus.test);
    out << "wrote " << corpus.train.size() << " train and " << corpus.test.size()
        << " test examples to " << out_dir.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

namespace {

struct RawOptions {
  std::string data, test, synthetic, format = "csv", model, policy, noise, kernel_sizes, out;
};

void add_run_options(CLI::App* app, RunConfig& cfg, RawOptions& raw) {
  app->add_option("--data", raw.data, "Training corpus (label,text per line)");
  app->add_option("--test", raw.test, "Optional test corpus");
  app->add_option("--synthetic", raw.synthetic,
                  "Synthetic corpus: 'standard', key=value list, or spec file");
  app->add_option("--format", raw.format, "Corpus format: csv or tsv");
  app->add_option("--val-fraction", cfg.val_fraction, "Share of the training corpus held out");
  app->add_option("--meta-val-fraction", cfg.meta_val_fraction,
                  "Share of the validation set kept apart for meta-level validation (0 = off)");
  app->add_option("--embeddings", cfg.embeddings, "'random' or a word-vector text file");
  app->add_option("--embedding-dim", cfg.classifier.embedding_dim);
  app->add_option("--seq-len", cfg.classifier.seq_len);
  app->add_option("--kernel-sizes", raw.kernel_sizes, "Comma-separated kernel widths");
  app->add_option("--conv1-channels", cfg.classifier.conv1_channels);
  app->add_option("--conv2-channels", cfg.classifier.conv2_channels);
  app->add_option("--model", raw.model, "textcnn or bow_linear");
  app->add_option("--dropout", cfg.classifier.dropout_p, "Dropout before the final layer");
  app->add_option("--step-size", cfg.grover.step_size, "Fraction of the vocabulary newly masked per meta-epoch");
  app->add_option("--noise-range", cfg.grover.noise_range, "Half-width r of the uniform(-r, r) noise");
  app->add_option("--policy", raw.policy, "gradual, none, reversed or both");
  app->add_option("--noise", raw.noise, "uniform or gaussian");
  app->add_option("--word-drop", cfg.grover.inner.word_drop_p, "Word dropping probability");
  app->add_option("--seed", cfg.grover.seed);
  app->add_option("--max-meta-epochs", cfg.grover.max_meta_epochs);
  app->add_option("--patience", cfg.grover.inner.patience);
  app->add_option("--epochs", cfg.grover.inner.max_epochs);
  app->add_option("--batch-size", cfg.grover.inner.batch_size);
  app->add_option("--lr", cfg.grover.inner.adam.lr);
  app->add_option("--out", raw.out, "Output directory");
  app->add_option("--jobs", cfg.jobs, "Parallel runs for sweeps");
}

void finish_run_config(RunConfig& cfg, const RawOptions& raw) {
  if (!raw.data.empty()) cfg.data = raw.data;
  if (!raw.test.empty()) cfg.test = raw.test;
  if (!raw.synthetic.empty()) cfg.synthetic = raw.synthetic;
  if (!raw.out.empty()) cfg.out = raw.out;
  if (raw.format == "csv") cfg.format = CorpusFormat::csv;
  else if (raw.format == "tsv") cfg.format = CorpusFormat::tsv;
  else throw ConfigError("unknown corpus format '" + raw.format + "'");
  if (!raw.model.empty()) cfg.classifier.model_kind = parse_model_kind(raw.model);
  if (!raw.policy.empty()) cfg.grover.policy = parse_policy(raw.policy);
  if (!raw.noise.empty()) cfg.grover.noise = parse_noise_kind(raw.noise);
  if (!raw.kernel_sizes.empty()) cfg.classifier.kernel_sizes = parse_sizes(raw.kernel_sizes);
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  // A config file supplies defaults: its entries are spliced in ahead of the
  // user's flags, and with TakeLast the user's flags win.
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      std::size_t consumed = 0;
      if (args[i] == "--config" && i + 1 < args.size()) {
        path = args[i + 1];
        consumed = 2;
      } else if (args[i].rfind("--config=", 0) == 0) {
        path = args[i].substr(9);
        consumed = 1;
      }
      if (consumed) {
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                   args.begin() + static_cast<std::ptrdiff_t>(i + consumed));
        auto extra = config_file_args(path);
        const std::size_t at = args.empty() ? 0 : 1;  // after the subcommand name
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), extra.begin(), extra.end());
        break;
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"Meta-training of text classifiers with frequency-ordered embedding maskers"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  RunConfig train_cfg, sweep_cfg;
  RawOptions train_raw, sweep_raw;
  auto* train = app.add_subcommand("train", "Run meta-training and write report, curves and checkpoint");
  add_run_options(train, train_cfg, train_raw);

  auto* sweep = app.add_subcommand("sweep", "Ablation sweep over one or more hyperparameters");
  add_run_options(sweep, sweep_cfg, sweep_raw);
  sweep->add_option("--sweep", sweep_cfg.sweeps, "name=v1,v2,... (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  sweep->add_option("--repeats", sweep_cfg.repeats, "Runs per grid value");

  std::string ckpt_dir, initial_path, vectors_path;
  std::vector<std::string> cues;
  std::size_t k = 20;
  auto* analyze = app.add_subcommand("analyze", "Nearest neighbours and drift of a checkpoint's embeddings");
  analyze->add_option("--checkpoint", ckpt_dir, "Checkpoint directory")->required();
  analyze->add_option("--cue", cues, "Cue word (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->required();
  analyze->add_option("-k,--top", k, "Neighbours per cue");
  analyze->add_option("--initial", initial_path, "Initial embedding table for drift");
  analyze->add_option("--vectors-out", vectors_path, "Write cue and neighbour vectors here");

  std::string synth_spec, synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus as train.csv/test.csv");
  synth->add_option("--synthetic", synth_spec, "'standard', key=value list, or spec file")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (train->parsed()) {
      finish_run_config(train_cfg, train_raw);
      return cmd_train(train_cfg, out, err);
    }
    if (sweep->parsed()) {
      finish_run_config(sweep_cfg, sweep_raw);
      return cmd_sweep(sweep_cfg, out, err);
    }
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }
  if (analyze->parsed()) {
    return cmd_analyze(ckpt_dir, cues, k,
                       initial_path.empty() ? std::nullopt : std::optional<fs::path>(initial_path),
                       vectors_path.empty() ? std::nullopt : std::optional<fs::path>(vectors_path),
                       out, err);
  }
  return cmd_synth(synth_spec, synth_out, out, err);
}

}  // namespace grover::cli
