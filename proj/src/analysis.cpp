#include "grover/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "grover/error.hpp"

namespace grover {

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw InputError("cosine similarity of vectors with different lengths");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw InputError("cosine similarity is undefined for a zero vector");
  return std::clamp(uv / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

namespace {

bool is_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

NeighborReport nearest_neighbors(const EmbeddingTable& table, std::string_view cue, std::size_t k) {
  const auto& vocab = table.vocabulary();
  const auto cue_id = vocab.find(cue);
  if (!cue_id) throw InputError("cue '" + std::string(cue) + "' is not in the vocabulary");
  if (Vocabulary::is_special(*cue_id)) {
    throw InputError("cue '" + std::string(cue) + "' is a special token");
  }
  const auto cue_row = table.row(*cue_id);
  if (is_zero(cue_row)) throw InputError("cue '" + std::string(cue) + "' has a zero vector");

  std::vector<Neighbor> all;
  for (std::size_t id = Vocabulary::kNumSpecial; id < table.rows(); ++id) {
    if (id == *cue_id || is_zero(table.row(id))) continue;
    all.push_back({static_cast<TokenId>(id), vocab.token(static_cast<TokenId>(id)),
                   cosine_similarity(cue_row, table.row(id))});
  }
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
                    });
  all.resize(take);
  return {std::string(cue), std::move(all)};
}

std::string format_neighbor_report(const NeighborReport& report) {
  std::string out = report.cue + ":";
  char buf[32];
  for (std::size_t i = 0; i < report.neighbors.size(); ++i) {
    const auto& n = report.neighbors[i];
    std::snprintf(buf, sizeof(buf), "%.4f", n.similarity);
    std::string sim = buf;
    // Table-style ".5939": drop the leading zero.
    if (sim.rfind("0.", 0) == 0) sim.erase(0, 1);
    else if (sim.rfind("-0.", 0) == 0) sim.erase(1, 1);
    out += (i ? ", " : " ") + n.token + "(" + sim + ")";
  }
  return out;
}

double neighbor_overlap(const NeighborReport& a, const NeighborReport& b) {
  std::vector<TokenId> x, y;
  for (const auto& n : a.neighbors) x.push_back(n.id);
  for (const auto& n : b.neighbors) y.push_back(n.id);
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::vector<TokenId> common;
  std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(common));
  const std::size_t uni = x.size() + y.size() - common.size();
  return uni == 0 ? 1.0 : static_cast<double>(common.size()) / static_cast<double>(uni);
}

namespace {

double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

}  // namespace

DriftReport embedding_drift(const EmbeddingTable& before, const EmbeddingTable& after,
                            std::optional<std::span<const TokenId>> ids) {
  if (before.rows() != after.rows() || before.dim() != after.dim()) {
    throw InputError("drift needs tables of the same shape");
  }
  if (before.vocabulary().tokens() != after.vocabulary().tokens()) {
    throw InputError("drift needs tables over the same vocabulary");
  }
  std::vector<TokenId> selected;
  if (ids) {
    selected.assign(ids->begin(), ids->end());
  } else {
    for (std::size_t id = Vocabulary::kNumSpecial; id < before.rows(); ++id) {
      selected.push_back(static_cast<TokenId>(id));
    }
  }

  DriftReport report;
  std::vector<double> euc, cos;
  for (TokenId id : selected) {
    if (id >= before.rows()) throw InputError("drift id out of range");
    const auto a = before.row(id);
    const auto b = after.row(id);
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (b[i] - a[i]) * (b[i] - a[i]);
    WordDrift w{id, std::sqrt(sq), 1.0};
    const bool za = is_zero(a), zb = is_zero(b);
    w.cosine = (za || zb) ? (za && zb ? 1.0 : 0.0) : cosine_similarity(a, b);
    euc.push_back(w.euclidean);
    cos.push_back(w.cosine);
    report.words.push_back(w);
  }
  if (!euc.empty()) {
    report.mean_euclidean = mean_stddev(euc).first;
    report.mean_cosine = mean_stddev(cos).first;
    report.median_euclidean = median(euc);
    report.median_cosine = median(cos);
  }
  return report;
}

void emit_curves(std::span<const MetaEpochRecord> records, const std::filesystem::path& path) {
  if (records.empty()) throw InputError("no meta-epoch records to emit");
  std::string text = "meta_epoch,val_acc,test_acc\n";
  for (const auto& r : records) {
    text += std::to_string(r.meta_epoch) + "," + format_double(r.val_accuracy) + ",";
    if (r.test_accuracy) text += format_double(*r.test_accuracy);
    text += "\n";
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write curve file " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failure on " + path.string());
}

std::vector<CurvePoint> read_curves(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read curve file " + path.string());
  std::string line;
  std::size_t n = 0;
  std::vector<CurvePoint> out;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != "meta_epoch,val_acc,test_acc") throw ParseError(path.string(), n, "bad header");
      continue;
    }
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c);
    try {
      CurvePoint p;
      p.meta_epoch = std::stoul(a);
      p.val_acc = std::stod(b);
      if (!c.empty()) p.test_acc = std::stod(c);
      out.push_back(p);
    } catch (const std::exception&) {
      throw ParseError(path.string(), n, "malformed curve row");
    }
  }
  return out;
}

std::pair<double, double> mean_stddev(std::span<const double> xs) {
  if (xs.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

const std::vector<std::string>& sweepable_parameters() {
  static const std::vector<std::string> names{
      "step_size", "noise_range", "policy",     "noise",   "dropout",
      "word_drop", "patience",    "epochs",     "batch_size", "max_meta_epochs"};
  return names;
}

namespace {

double to_number(std::string_view name, std::string_view v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("sweep value '" + std::string(v) + "' for " + std::string(name) +
                      " is not a number");
  }
}

std::size_t to_count(std::string_view name, std::string_view v) {
  const double x = to_number(name, v);
  if (x < 0 || std::floor(x) != x) {
    throw ConfigError("sweep value '" + std::string(v) + "' for " + std::string(name) +
                      " is not a non-negative integer");
  }
  return static_cast<std::size_t>(x);
}

}  // namespace

void apply_sweep_value(std::string_view parameter, std::string_view value,
                       ClassifierConfig& classifier, GroverConfig& grover) {
  if (parameter == "step_size") grover.step_size = to_number(parameter, value);
  else if (parameter == "noise_range") grover.noise_range = to_number(parameter, value);
  else if (parameter == "policy") grover.policy = parse_policy(value);
  else if (parameter == "noise") grover.noise = parse_noise_kind(value);
  else if (parameter == "dropout") classifier.dropout_p = to_number(parameter, value);
  else if (parameter == "word_drop") grover.inner.word_drop_p = to_number(parameter, value);
  else if (parameter == "patience") grover.inner.patience = to_count(parameter, value);
  else if (parameter == "epochs") grover.inner.max_epochs = to_count(parameter, value);
  else if (parameter == "batch_size") grover.inner.batch_size = to_count(parameter, value);
  else if (parameter == "max_meta_epochs") grover.max_meta_epochs = to_count(parameter, value);
  else {
    std::string names;
    for (const auto& n : sweepable_parameters()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown sweep parameter '" + std::string(parameter) + "' (sweepable: " +
                      names + ")");
  }
}

SweepAxis parse_sweep_axis(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("sweep must look like name=v1,v2,...");
  }
  SweepAxis axis;
  axis.parameter = std::string(text.substr(0, eq));
  std::string_view rest = text.substr(eq + 1);
  std::size_t pos = 0;
  while (true) {
    const auto comma = rest.find(',', pos);
    const auto item = rest.substr(pos, comma == std::string_view::npos ? comma : comma - pos);
    if (item.empty()) throw ConfigError("empty value in sweep '" + std::string(text) + "'");
    axis.values.emplace_back(item);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  // Validate names and values up front.
  ClassifierConfig c;
  GroverConfig g;
  for (const auto& v : axis.values) apply_sweep_value(axis.parameter, v, c, g);
  return axis;
}

SweepResult run_sweep(const ExperimentData& data, const ClassifierConfig& classifier,
                      const GroverConfig& base, const SweepAxis& axis, std::size_t repeats,
                      std::uint64_t master_seed, std::size_t jobs) {
  if (axis.values.empty()) throw ConfigError("sweep grid is empty");
  if (repeats == 0) throw ConfigError("sweep needs at least one repeat");
  if (!data.train || !data.val || !data.embeddings) throw ConfigError("sweep data is incomplete");

  struct Job {
    std::size_t point;
    std::size_t repeat;
    std::optional<double> final_test;
    std::optional<double> baseline_test;
    std::string error;
  };
  std::vector<Job> work;
  for (std::size_t p = 0; p < axis.values.size(); ++p) {
    for (std::size_t r = 0; r < repeats; ++r) work.push_back({p, r, {}, {}, {}});
  }

  auto run_one = [&](Job& job) {
    try {
      ClassifierConfig cc = classifier;
      GroverConfig gc = base;
      apply_sweep_value(axis.parameter, axis.values[job.point], cc, gc);
      gc.seed = derive_seed(master_seed, job.point, job.repeat);
      const auto initial = data.embeddings(derive_seed(gc.seed, 0xe3b));
      const auto result =
          run_meta_training(*data.train, *data.val, data.test, initial, cc, gc, data.meta_val);
      // Without a test set the validation accuracy stands in.
      const auto pick = [](const MetaEpochRecord& r) { return r.test_accuracy.value_or(r.val_accuracy); };
      job.final_test = pick(result.best.record);
      job.baseline_test = pick(result.records.front());
    } catch (const std::exception& e) {
      job.error = e.what();
    }
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, work.size()));
  if (jobs == 1) {
    for (auto& job : work) run_one(job);
  } else {
    std::vector<std::future<void>> workers;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < jobs; ++t) {
      workers.push_back(std::async(std::launch::async, [&] {
        for (std::size_t i = next++; i < work.size(); i = next++) run_one(work[i]);
      }));
    }
    for (auto& w : workers) w.get();
  }

  SweepResult result;
  result.parameter = axis.parameter;
  for (std::size_t p = 0; p < axis.values.size(); ++p) {
    SweepPoint point;
    point.value = axis.values[p];
    for (const auto& job : work) {
      if (job.point != p) continue;
      if (job.final_test) {
        point.final_test_accuracy.push_back(*job.final_test);
        point.baseline_test_accuracy.push_back(*job.baseline_test);
      } else {
        point.failures.push_back("repeat " + std::to_string(job.repeat) + ": " + job.error);
      }
    }
    std::tie(point.mean, point.stddev) = mean_stddev(point.final_test_accuracy);
    point.baseline_mean = mean_stddev(point.baseline_test_accuracy).first;
    result.points.push_back(std::move(point));
  }
  return result;
}

nlohmann::json to_json(const SweepResult& result) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : result.points) {
    points.push_back({{"value", p.value},
                      {"runs", p.final_test_accuracy.size()},
                      {"mean_test_acc", p.mean},
                      {"stddev_test_acc", p.stddev},
                      {"mean_baseline_test_acc", p.baseline_mean},
                      {"test_acc", p.final_test_accuracy},
                      {"baseline_test_acc", p.baseline_test_accuracy},
                      {"failures", p.failures}});
  }
  return {{"parameter", result.parameter}, {"points", points}};
}

}  // namespace grover
