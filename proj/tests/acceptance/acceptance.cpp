// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "../test_support.hpp"
#include "grover/analysis.hpp"
#include "grover/cli.hpp"
#include "grover/controller.hpp"
#include "grover/embedding_store.hpp"
#include "grover/nn_core.hpp"

using namespace grover;
using namespace grover::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects the first few failure descriptions.
struct Failures {
  std::size_t count = 0;
  std::string first;
  void add(const std::string& what) {
    if (count++ == 0) first = what;
  }
  bool empty() const { return count == 0; }
  std::string summary() const {
    return std::to_string(count) + " mismatches, first: " + first;
  }
};

int failures_total = 0;

void report(int id, const std::string& name, const Outcome& o, double secs) {
  char timing[32];
  std::snprintf(timing, sizeof(timing), "%.1fs", secs);
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail
            << " [" << timing << "]" << std::endl;
  if (!o.pass) ++failures_total;
}

void run_criterion(int id, const std::string& name, double budget_seconds,
                   const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = seconds_since(t0);
  if (budget_seconds > 0 && secs >= budget_seconds) {
    o.pass = false;
    o.detail += "; over the " + std::to_string(static_cast<int>(budget_seconds)) + "s budget";
  }
  report(id, name, o, secs);
}

std::string fmt(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---- 1 -------------------------------------------------------------------

Outcome gradient_suite() {
  std::size_t checked = 0, skipped = 0, configs = 0;
  double worst = 0.0;
  Failures f;
  Rng pick(1);
  const std::vector<std::vector<std::size_t>> kernel_sets{{2, 3}, {1, 2}, {3}, {1, 2, 3}};
  for (std::uint64_t seed = 100; seed < 124; ++seed) {
    const auto kind = seed % 4 == 3 ? ModelKind::bow_linear : ModelKind::textcnn;
    const double dropout = seed % 3 == 0 ? 0.3 : 0.0;
    auto config = gradient_config(kind, dropout);
    config.kernel_sizes = kernel_sets[pick.below(kernel_sets.size())];
    const auto s = gradient_check(config, seed);
    ++configs;
    checked += s.checked;
    skipped += s.skipped;
    worst = std::max(worst, s.worst);
    if (s.failed) f.add("seed " + std::to_string(seed) + ": " + std::to_string(s.failed) + " entries");
  }
  Outcome o;
  o.pass = f.empty() && checked > 0 && skipped * 20 < checked;
  o.detail = std::to_string(configs) + " configs, " + std::to_string(checked) + " entries, " +
             std::to_string(skipped) + " kink skips, worst rel err " + fmt(worst * 1e6, 3) + "e-6";
  if (!f.empty()) o.detail += "; " + f.summary();
  return o;
}

// ---- 2 -------------------------------------------------------------------

Outcome trace_conformance() {
  Failures f;
  std::size_t traces = 0;
  const std::size_t n = 100;
  const MaskPolicy policies[] = {MaskPolicy::gradual, MaskPolicy::none, MaskPolicy::reversed,
                                 MaskPolicy::both};
  const std::pair<double, std::size_t> steps[] = {{0.05, 5}, {0.1, 10}, {0.2, 20}, {0.5, 50}, {1.0, 100}};
  for (const auto& [s, w] : steps) {
    const std::size_t expected_total = 1 + static_cast<std::size_t>(std::ceil(1.0 / s));
    for (auto policy : policies) {
      for (std::uint64_t script = 0; script < 6; ++script) {
        // Script 0 always improves, 1 never does, the rest are coin flips.
        std::vector<bool> plan = script == 0   ? std::vector<bool>(64, true)
                                 : script == 1 ? std::vector<bool>(64, false)
                                               : coin_flips(64, script);
        ScriptedTrainer trainer{plan};
        std::vector<EmbeddingTable> carried, noised;
        const auto result = run_stub(n, s, policy, trainer, [&](const MetaEpochTrace& t) {
          carried.push_back(t.carried);
          noised.push_back(t.noised);
        });
        ++traces;
        const std::string tag = std::string(to_string(policy)) + " s=" + fmt(s) + " script " +
                                std::to_string(script);
        if (result.records.size() != expected_total) {
          f.add(tag + ": " + std::to_string(result.records.size()) + " meta-epochs");
          continue;
        }
        // Hand trace: adoption follows the script, meta-epoch 0 always adopts.
        std::vector<bool> accepted{true};
        for (std::size_t k = 1; k < expected_total; ++k) accepted.push_back(plan[k]);
        const auto masks = oracle_masks(n, w, policy, accepted, expected_total);
        for (std::size_t k = 0; k < expected_total; ++k) {
          const auto& rec = result.records[k];
          if (rec.accepted != accepted[k]) f.add(tag + ": adoption at " + std::to_string(k));
          const std::size_t frontier = k == 0 ? 0 : std::min(n, k * w);
          if (rec.frontier != frontier) f.add(tag + ": frontier at " + std::to_string(k));
          const auto mask = k == 0 ? PositionSet{} : masks[k - 1];
          if (positions(rec.windows) != mask) f.add(tag + ": mask at " + std::to_string(k));
          // An adoption carries W' (the scripted shift of meta-epoch k-1's
          // input) forward; a rejection carries the previous table unchanged.
          if (k >= 1) {
            auto expect = carried[k - 1];
            if (accepted[k - 1]) {
              expect = noised[k - 1];
              for (auto& v : expect.values()) v += 0.001 * static_cast<double>(k);
            }
            if (!(carried[k] == expect)) f.add(tag + ": carried table at " + std::to_string(k));
          }
        }
      }
    }
  }

  // The worked example: bottom 10%, then 10% to 20%, then a failure re-masks 10% to 30%.
  FrequencyOrder order;
  for (TokenId i = 0; i < 100; ++i) order.ids.push_back(i + 2);
  const auto s1 = advance_maskers({}, true, order, 0.1, MaskPolicy::gradual);
  const auto s2 = advance_maskers(s1, true, order, 0.1, MaskPolicy::gradual);
  const auto s3 = advance_maskers(s2, false, order, 0.1, MaskPolicy::gradual);
  if (positions(s1.mask) != span_set(0, 10) || s1.frontier != 10) f.add("worked example step 1");
  if (positions(s2.mask) != span_set(10, 20) || s2.frontier != 20) f.add("worked example step 2");
  if (positions(s3.mask) != span_set(10, 30) || s3.frontier != 30) f.add("worked example step 3");

  ScriptedTrainer half{{}};
  const auto r = run_stub(100, 0.5, MaskPolicy::none, half);
  if (r.records.size() != 3 || positions(r.records[1].windows) != span_set(0, 50) ||
      positions(r.records[2].windows) != span_set(50, 100)) {
    f.add("s=0.5 policy none example");
  }

  Outcome o;
  o.pass = f.empty();
  o.detail = std::to_string(traces) + " scripted traces over 5 step sizes x 4 policies plus worked examples";
  if (!f.empty()) o.detail += "; " + f.summary();
  return o;
}

// ---- 3 -------------------------------------------------------------------

Outcome rollback_exactness() {
  Failures f;
  std::size_t rejections = 0, masked_entries = 0;
  for (double r : {0.1, 1.0, 10.0}) {
    for (auto policy : {MaskPolicy::gradual, MaskPolicy::none, MaskPolicy::reversed, MaskPolicy::both}) {
      for (std::uint64_t script = 0; script < 4; ++script) {
        auto plan = coin_flips(64, 40 + script);
        plan[1] = true;
        for (std::size_t k = 2; k < plan.size(); k += 3) plan[k] = false;  // forced failures
        ScriptedTrainer trainer{plan};
        std::vector<EmbeddingTable> carried, noised;
        std::vector<std::vector<TokenId>> masked;
        std::vector<bool> accepted;
        (void)run_stub(120, 0.1, policy, trainer, [&](const MetaEpochTrace& t) {
          carried.push_back(t.carried);
          noised.push_back(t.noised);
          masked.emplace_back(t.masked.begin(), t.masked.end());
          accepted.push_back(t.record.accepted);
        }, r);
        for (std::size_t k = 1; k < carried.size(); ++k) {
          std::vector<bool> is_masked(carried[k].rows(), false);
          for (TokenId id : masked[k]) is_masked[id] = true;
          if (!accepted[k - 1]) {
            ++rejections;
            // The table seeding meta-epoch k is the one that seeded k-1, before noise.
            if (!(carried[k] == carried[k - 1])) f.add("carried table changed after a rejection");
          }
          for (TokenId id = 0; id < carried[k].rows(); ++id) {
            const auto a = carried[k].row(id);
            const auto b = noised[k].row(id);
            if (!is_masked[id]) {
              if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) {
                f.add("unmasked row " + std::to_string(id) + " changed");
              }
              continue;
            }
            for (std::size_t j = 0; j < a.size(); ++j) {
              ++masked_entries;
              if (!(std::abs(b[j] - a[j]) <= r)) f.add("perturbation outside range");
            }
          }
        }
      }
    }
  }
  Outcome o;
  o.pass = f.empty() && rejections > 0;
  o.detail = std::to_string(rejections) + " rollbacks verified bit-exact, " + std::to_string(masked_entries) +
             " masked entries within range";
  if (!f.empty()) o.detail += "; " + f.summary();
  return o;
}

// ---- 4, 5, 6 -------------------------------------------------------------

struct StandardTask {
  std::shared_ptr<const Vocabulary> vocab;
  Dataset train, val, test;
  ClassifierConfig classifier;
};

// The standard synthetic corpus with the desk-scale classifier used for the
// direction checks.
StandardTask standard_task() {
  const auto corpus = generate_synthetic(standard_synthetic_spec());
  auto [tr, va] = split_train_val(corpus.train, 400.0 / 2400.0, derive_seed(20190101, 0x5b1));
  StandardTask t;
  t.vocab = std::make_shared<const Vocabulary>(build_vocab(tr));
  t.classifier.embedding_dim = 16;
  t.classifier.seq_len = 40;
  t.classifier.kernel_sizes = {2, 3, 4, 5};
  t.classifier.conv1_channels = 32;
  t.classifier.conv2_channels = 16;
  t.classifier.num_classes = 4;
  t.train = make_dataset(tr, *t.vocab, 40, 4, Split::train);
  t.val = make_dataset(va, *t.vocab, 40, 4, Split::val);
  t.test = make_dataset(corpus.test, *t.vocab, 40, 4, Split::test);
  return t;
}

struct SeedRun {
  double baseline_test;
  double final_test;
  MetaTrainingResult result;
};

std::vector<SeedRun> five_seeds(const StandardTask& task, double noise_range, std::size_t point) {
  std::vector<SeedRun> runs;
  for (std::size_t rep = 0; rep < 5; ++rep) {
    GroverConfig g;  // defaults: s = 0.1, r = 1.0, gradual
    g.noise_range = noise_range;
    g.seed = derive_seed(20190101, point, rep);
    const auto initial = init_random(task.vocab, task.classifier.embedding_dim, derive_seed(g.seed, 0xe3b));
    auto result = run_meta_training(task.train, task.val, &task.test, initial, task.classifier, g);
    const double baseline = *result.records.front().test_accuracy;
    const double final_test = *result.best.record.test_accuracy;
    runs.push_back(SeedRun{baseline, final_test, std::move(result)});
  }
  return runs;
}

double mean_of(const std::vector<SeedRun>& runs, double SeedRun::*field) {
  double s = 0;
  for (const auto& r : runs) s += r.*field;
  return s / static_cast<double>(runs.size());
}

std::string per_seed(const std::vector<SeedRun>& runs) {
  std::string s;
  for (const auto& r : runs) s += (s.empty() ? "" : " ") + fmt(100 * r.baseline_test) + "->" + fmt(100 * r.final_test);
  return s;
}

// ---- 7 -------------------------------------------------------------------

Outcome determinism() {
  TempDir dir;
  auto args = [&](const std::string& out) {
    return std::vector<std::string>{
        "train", "--synthetic", "standard", "--val-fraction", "0.16666666666666666",
        "--embedding-dim", "16", "--seq-len", "40", "--kernel-sizes", "2,3,4,5",
        "--conv1-channels", "32", "--conv2-channels", "16", "--step-size", "0.5", "--epochs", "3",
        "--seed", "2019", "--out", (dir / out).string()};
  };
  std::ostringstream sink;
  const int a = cli::run_cli(args("a"), sink, sink);
  const int b = cli::run_cli(args("b"), sink, sink);
  Outcome o;
  if (a != 0 || b != 0) return {false, "cmd_train failed: " + sink.str()};
  const auto ra = slurp(dir / "a" / "report.jsonl"), rb = slurp(dir / "b" / "report.jsonl");
  const auto ca = slurp(dir / "a" / "curves.csv"), cb = slurp(dir / "b" / "curves.csv");
  o.pass = !ra.empty() && ra == rb && !ca.empty() && ca == cb;
  o.detail = "report.jsonl " + std::to_string(ra.size()) + " bytes " + (ra == rb ? "identical" : "DIFFER") +
             ", curves.csv " + std::to_string(ca.size()) + " bytes " + (ca == cb ? "identical" : "DIFFER");
  return o;
}

// ---- 8 -------------------------------------------------------------------

Outcome oracle_equivalence() {
  Failures f;
  Rng rng(8);
  // Nearest neighbours against an exhaustive scan.
  for (int trial = 0; trial < 100; ++trial) {
    const auto vocab = ordered_vocab(150 + rng.below(100));
    auto t = init_random(vocab, 1 + rng.below(16), rng.next_u64());
    for (int d = 0; d < 4; ++d) {
      const auto src = 2 + rng.below(vocab->size() - 2), dst = 2 + rng.below(vocab->size() - 2);
      for (std::size_t j = 0; j < t.dim(); ++j) t.row(dst)[j] = 1.5 * t.row(src)[j];
    }
    const auto cue = static_cast<TokenId>(2 + rng.below(vocab->size() - 2));
    const std::size_t k = 1 + rng.below(30);
    std::vector<std::pair<double, TokenId>> all;
    for (TokenId id = 2; id < t.rows(); ++id) {
      if (id == cue) continue;
      double dot = 0, na = 0, nb = 0;
      for (std::size_t j = 0; j < t.dim(); ++j) {
        dot += t.row(cue)[j] * t.row(id)[j];
        na += t.row(cue)[j] * t.row(cue)[j];
        nb += t.row(id)[j] * t.row(id)[j];
      }
      all.push_back({dot / std::sqrt(na * nb), id});
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto got = nearest_neighbors(t, vocab->token(cue), k);
    if (got.neighbors.size() != k) {
      f.add("neighbor count");
      continue;
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (std::abs(got.neighbors[i].similarity - all[i].first) > 1e-12) f.add("similarity at rank " + std::to_string(i));
      const bool clear_gap = (i == 0 || all[i - 1].first - all[i].first > 1e-12) &&
                             (i + 1 == all.size() || all[i].first - all[i + 1].first > 1e-12);
      if (clear_gap && got.neighbors[i].id != all[i].second) f.add("neighbor id at rank " + std::to_string(i));
    }
  }
  // Frequency order against a reference sort.
  for (int trial = 0; trial < 20; ++trial) {
    Vocabulary v;
    for (int i = 0; i < 1000; ++i) v.add("x" + std::to_string(i), 1 + rng.below(30));
    std::vector<std::pair<std::uint64_t, TokenId>> ref;
    for (TokenId id = 2; id < v.size(); ++id) ref.push_back({v.frequency(id), id});
    std::sort(ref.begin(), ref.end());
    const auto order = frequency_order(v);
    bool same = order.size() == ref.size();
    for (std::size_t i = 0; same && i < ref.size(); ++i) same = order.ids[i] == ref[i].second;
    if (!same) f.add("frequency order trial " + std::to_string(trial));
  }
  // Word-vector round trips, including awkward magnitudes.
  TempDir dir;
  for (int trial = 0; trial < 20; ++trial) {
    auto t = init_random(ordered_vocab(50), 1 + rng.below(20), rng.next_u64());
    for (auto& v : t.values()) {
      if (rng.bernoulli(0.1)) v = std::ldexp(rng.uniform(-1, 1), static_cast<int>(rng.below(200)) - 100);
    }
    t.row(5)[0] = 5e-324;
    const auto path = dir / ("t" + std::to_string(trial) + ".txt");
    save_table(t, path);
    if (!(load_table(path) == t)) f.add("round trip trial " + std::to_string(trial));
  }
  Outcome o;
  o.pass = f.empty();
  o.detail = "100 neighbor tables, 20 frequency orders, 20 table round-trips";
  if (!f.empty()) o.detail += "; " + f.summary();
  return o;
}

}  // namespace

int main() {
  run_criterion(1, "gradient suite", 60, gradient_suite);
  run_criterion(2, "meta-loop trace conformance", 0, trace_conformance);
  run_criterion(3, "rollback and noise exactness", 10, rollback_exactness);
  run_criterion(8, "oracle equivalence", 0, oracle_equivalence);
  run_criterion(7, "determinism", 0, determinism);

  const auto task = standard_task();
  std::vector<SeedRun> grover_runs, noisy_runs;
  run_criterion(4, "synthetic direction, random init", 600, [&] {
    grover_runs = five_seeds(task, 1.0, 0);
    const double base = mean_of(grover_runs, &SeedRun::baseline_test);
    const double fin = mean_of(grover_runs, &SeedRun::final_test);
    Outcome o;
    o.pass = fin >= base - 0.005 && fin - base > 0.0;
    o.detail = "5 seeds, mean test " + fmt(100 * base) + " -> " + fmt(100 * fin) + " (delta " +
               fmt(100 * (fin - base)) + " pts; per seed " + per_seed(grover_runs) + ")";
    return o;
  });
  run_criterion(5, "excessive noise direction", 600, [&] {
    if (grover_runs.empty()) return Outcome{false, "criterion 4 produced no runs"};
    noisy_runs = five_seeds(task, 10.0, 1);
    const double noisy = mean_of(noisy_runs, &SeedRun::final_test);
    const double normal = mean_of(grover_runs, &SeedRun::final_test);
    Outcome o;
    o.pass = noisy <= normal;
    o.detail = "mean test at r=10 " + fmt(100 * noisy) + " vs r=1 " + fmt(100 * normal) + " (per seed " +
               per_seed(noisy_runs) + ")";
    return o;
  });
  run_criterion(6, "best selection and ledger", 0, [&] {
    Failures f;
    std::size_t records = 0;
    for (const auto* runs : {&grover_runs, &noisy_runs}) {
      for (const auto& run : *runs) {
        const auto& recs = run.result.records;
        double max_acc = -1.0;
        double running = -1.0;
        for (const auto& r : recs) {
          ++records;
          max_acc = std::max(max_acc, r.val_accuracy);
          if (r.accepted != (r.val_accuracy > running)) f.add("accepted flag at meta " + std::to_string(r.meta_epoch));
          running = std::max(running, r.val_accuracy);
          if (r.max_accuracy != running) f.add("running max at meta " + std::to_string(r.meta_epoch));
        }
        if (run.result.best.record.val_accuracy != max_acc) f.add("checkpoint accuracy");
        // The first maximal record is the selected one.
        for (const auto& r : recs) {
          if (r.val_accuracy == max_acc) {
            if (run.result.best.record.meta_epoch != r.meta_epoch) f.add("checkpoint epoch");
            break;
          }
        }
      }
    }
    Outcome o;
    o.pass = f.empty() && records > 0;
    o.detail = std::to_string(records) + " records from the criterion 4/5 runs";
    if (!f.empty()) o.detail += "; " + f.summary();
    return o;
  });

  std::cout << (failures_total == 0 ? "ALL CRITERIA PASS" : std::to_string(failures_total) + " CRITERIA FAILED")
            << std::endl;
  return failures_total == 0 ? 0 : 1;
}
