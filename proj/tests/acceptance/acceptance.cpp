// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/metrics_oracle.hpp"
#include "graphreason/experiment.hpp"
#include "graphreason/global_reasoning.hpp"
#include "graphreason/gradcheck_suite.hpp"
#include "graphreason/local_reasoning.hpp"

using namespace graphreason;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void verdict(int id, bool pass, const std::string& title, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << title << "  [" << detail << "]" << std::endl;
  if (!pass) ++failures;
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t = normal_param(std::move(shape), 1.0, rng);
  t.set_requires_grad(false);
  return t;
}

Tensor eye(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1;
  return t;
}

// ---------------------------------------------------------------- criterion 1

void gradient_suite() {
  const auto start = Clock::now();
  const auto entries = run_gradcheck_suite();
  const double elapsed = seconds_since(start);
  bool all = true;
  double worst = 0;
  for (const auto& e : entries) {
    std::cout << "      " << format_suite_entry(e) << "\n";
    all = all && e.passed();
    worst = std::max(worst, double(e.max_error));
  }
  const bool has_total = std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.name == "total_loss"; });
  verdict(1, all && has_total && elapsed < 120, "finite-difference gradient suite, 10 seeds, rel err < 1e-4, < 2 min",
          std::to_string(entries.size()) + " cases, max rel err " + sci(worst) + ", " + fmt(elapsed, 1) + " s");
}

// ---------------------------------------------------------------- criterion 2

void exact_identities() {
  Rng rng(2024);
  std::vector<std::string> notes;
  double worst = 0;
  auto note = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    notes.push_back(name + " " + sci(err));
  };

  {
    GruCell cell = GruCell::create(5, 6, rng);
    std::fill(cell.update_b.data().begin(), cell.update_b.data().end(), 1e3);
    Tensor s = random_tensor({7, 6}, rng), x = random_tensor({7, 5}, rng);
    note("gru(u=1)", max_abs_diff(gru_step(cell, s, x), s));
  }
  {
    Tensor m = random_tensor({5, 6}, rng);
    const std::vector<Tensor> adj{eye(5)}, w{eye(6)};
    note("spatial(A=I,W=I)", max_abs_diff(spatial_path(m, adj, w), m));
  }
  {
    Tensor gs = random_tensor({5, 6}, rng);
    const auto assign = assignment_adjacency(ops::softmax_rows(random_tensor({5, 4}, rng)));
    note("merge(G_sem=0)", max_abs_diff(merge_paths(gs, Tensor({4, 6}), assign, random_tensor({6, 6}, rng)), ops::relu(gs)));
  }
  {
    std::vector<PredictionRecord> recs(5);
    Tensor mean({3, 4});
    for (auto& r : recs) {
      r.logits = random_tensor({3, 4}, rng);
      r.attention = Tensor({3}, 0.37);
      mean = ops::add(mean, ops::scale(r.logits, 0.2));
    }
    note("fuse(equal a)", max_abs_diff(attention_fuse(recs).logits, mean));
  }
  {
    const Tensor p = ops::softmax_rows(random_tensor({6, 5}, rng));
    const std::vector<std::size_t> labels{0, 4, 2, 2, 1, 3};
    double err = 0;
    for (Scalar w : reweight_weights(p, labels, 1.0)) err = std::max(err, std::abs(double(w) - 1.0 / 6.0));
    note("reweight(beta=1)", err);
  }
  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : ", ") + n;
  verdict(2, worst <= 1e-12, "exact identities to 1e-12", detail);
}

// ---------------------------------------------------------------- criterion 3

void oracle_equivalence() {
  Rng rng(77);
  double write_err = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor mem = random_tensor({8, 8, 3}, rng);
    // Cell-disjoint boxes: one per quadrant, with random extents inside it.
    std::vector<Box> boxes;
    std::uniform_int_distribution<int> extent(1, 4);
    for (int qy = 0; qy < 2; ++qy)
      for (int qx = 0; qx < 2; ++qx) boxes.push_back({qx * 4.0, qy * 4.0, qx * 4.0 + extent(rng), qy * 4.0 + extent(rng)});
    Tensor updates = random_tensor({4, 3, 3, 3}, rng);
    const Tensor together = parallel_write(mem, boxes, updates, coverage_weights(boxes, 8, 8, 8, 8));
    Tensor seq = mem;
    for (std::size_t r = 0; r < 4; ++r) {
      const std::vector<Box> one{boxes[r]};
      Tensor patch({1, 3, 3, 3});
      std::copy_n(updates.data().begin() + r * 27, 27, patch.data().begin());
      seq = parallel_write(seq, one, patch, coverage_weights(one, 8, 8, 8, 8));
    }
    write_err = std::max(write_err, max_abs_diff(seq, together));
  }

  std::mt19937_64 gen(5);
  std::size_t metric_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 2 + gen() % 5, n = 1 + gen() % 40;
    std::vector<double> scores(n * classes);
    std::vector<std::size_t> labels(n);
    for (auto& s : scores) s = trial % 2 ? double(gen() % 5) / 5 : std::uniform_real_distribution<double>(0, 1)(gen);
    for (auto& l : labels) l = gen() % classes;
    const MetricReport rep = aggregate(scores, classes, labels);
    const auto oracle = testing::brute_force_report(scores, classes, labels);
    bool same = rep.per_instance_ap == oracle.per_instance_ap && rep.per_instance_ac == oracle.per_instance_ac &&
                rep.per_class_ap == oracle.per_class_ap && rep.per_class_ac == oracle.per_class_ac;
    for (std::size_t c = 0; c < classes; ++c) same = same && rep.classes[c].accuracy == oracle.class_ac[c];
    metric_mismatch += !same;
  }

  std::size_t recall_mismatch = 0, recall_checks = 0;
  const SceneSpec spec;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene scene = generate_scene(spec, seed);
    DropProtocol proto;
    const auto proposals = jittered_proposals(scene, proto, seed);
    for (double delta : {0.0, 0.3, 0.5, 0.8, 0.9}) {
      proto.delta = delta;
      std::size_t kept = 0;
      for (const Box& b : scene.boxes) {
        double best = 0;
        for (const Box& p : proposals) best = std::max(best, iou(b, p));
        kept += best > delta;
      }
      ++recall_checks;
      recall_mismatch += drop_regions(scene, proto, seed).recall != double(kept) / double(scene.regions());
    }
  }
  verdict(3, write_err <= 1e-12 && metric_mismatch == 0 && recall_mismatch == 0,
          "parallel write, metrics and drop recall match their oracles",
          "parallel-vs-sequential " + sci(write_err) + ", metric mismatches " + std::to_string(metric_mismatch) +
              "/100, recall mismatches " + std::to_string(recall_mismatch) + "/" + std::to_string(recall_checks));
}

// ------------------------------------------------------------ criteria 4 to 7

ExperimentConfig desk_config(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.model.memory_dim = 16;
  cfg.model.fc_width = 32;
  cfg.model.pool = 5;
  cfg.model.stacks = 3;
  cfg.model.iterations = 3;
  cfg.learning_rate = 0.002;
  cfg.grad_clip = 10;
  cfg.steps = 2000;
  cfg.decay_step = 1600;
  cfg.seed = seed;
  cfg.n_scenes = 700;
  cfg.data_seed = 1 + seed;
  return cfg;
}

struct Run {
  TrainResult trained;
  MetricReport report;
  double seconds = 0;
};

Run train_and_eval(const ExperimentConfig& cfg, const Dataset& data) {
  const auto start = Clock::now();
  Run run{train(cfg, data), {}, 0};
  run.report = evaluate(run.trained.model, cfg, data, data.test);
  run.seconds = seconds_since(start);
  return run;
}

bool reports_differ(const MetricReport& a, const MetricReport& b) {
  return a.per_instance_ap != b.per_instance_ap || a.per_instance_ac != b.per_instance_ac ||
         a.per_class_ap != b.per_class_ap || a.per_class_ac != b.per_class_ac;
}

void benchmark_criteria() {
  const std::vector<Variant> variants{Variant::kBaseline, Variant::kLocal, Variant::kGlobal, Variant::kFull};
  std::map<Variant, std::vector<double>> ac;
  std::map<Variant, double> seconds;
  std::vector<Dataset> datasets;
  std::vector<std::map<Variant, Run>> runs(3);
  double c4_seconds = 0;

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ExperimentConfig base = desk_config(seed);
    auto gen_start = Clock::now();
    datasets.push_back(generate_dataset(base.spec, base.n_scenes, base.data_seed, base.split));
    c4_seconds += seconds_since(gen_start);
    const Dataset& data = datasets.back();
    for (Variant v : variants) {
      ExperimentConfig cfg = base;
      cfg.model.variant = v;
      Run run = train_and_eval(cfg, data);
      if (v == Variant::kBaseline || v == Variant::kFull) c4_seconds += run.seconds;
      seconds[v] += run.seconds;
      ac[v].push_back(run.report.per_class_ac);
      std::cout << "      seed " << seed << " " << variant_name(v) << ": per_class_ac " << fmt(run.report.per_class_ac)
                << ", per_class_ap " << fmt(run.report.per_class_ap) << ", per_instance_ac "
                << fmt(run.report.per_instance_ac) << ", " << fmt(run.seconds, 1) << " s" << std::endl;
      runs[seed].emplace(v, std::move(run));
    }
  }
  auto mean = [](const std::vector<double>& xs) {
    double s = 0;
    for (double x : xs) s += x;
    return s / double(xs.size());
  };
  const double base_ac = mean(ac[Variant::kBaseline]), local_ac = mean(ac[Variant::kLocal]),
               global_ac = mean(ac[Variant::kGlobal]), full_ac = mean(ac[Variant::kFull]);

  const double gain = 100 * (full_ac - base_ac);
  verdict(4, gain >= 10 && c4_seconds < 900, "full model beats the context-blind baseline by >= 10 points per-class AC",
          "3-seed mean per-class AC full " + fmt(full_ac) + " vs baseline " + fmt(base_ac) + " (+" + fmt(gain, 1) +
              " points), " + fmt(c4_seconds, 1) + " s");

  const bool order = full_ac >= std::max(local_ac, global_ac) - 0.01;
  const bool above = std::min({local_ac, global_ac, full_ac}) >= base_ac + 0.03;
  verdict(5, order && above, "Final >= max(Local, Global) - 1 point; every reasoning variant >= baseline + 3 points",
          "baseline " + fmt(base_ac) + ", local " + fmt(local_ac) + ", global " + fmt(global_ac) + ", full " + fmt(full_ac));

  // Criterion 6 on seed 0's models.
  {
    const Dataset& data = datasets[0];
    const std::vector<double> deltas{0, 0.3, 0.5, 0.8};
    ExperimentConfig full_cfg = desk_config(0), base_cfg = desk_config(0);
    base_cfg.model.variant = Variant::kBaseline;
    const auto& full_run = runs[0].at(Variant::kFull);
    const auto& base_run = runs[0].at(Variant::kBaseline);
    const auto full_rows = sweep(full_run.trained.model, full_cfg, data, data.test, deltas);
    const auto base_rows = sweep(base_run.trained.model, base_cfg, data, data.test, deltas);
    std::cout << "      full model sweep:\n" << sweep_csv(full_rows) << "      baseline sweep:\n" << sweep_csv(base_rows);
    bool monotone = true, zero_matches = true;
    double advantage = 0;
    for (const auto* rows : {&full_rows, &base_rows}) {
      for (std::size_t i = 0; i < rows->size(); ++i) {
        const SweepRow& row = (*rows)[i];
        if (i > 0 && row.mode == (*rows)[i - 1].mode) monotone = monotone && *row.report.recall <= *(*rows)[i - 1].report.recall;
        if (row.delta == 0) {
          const MetricReport& plain = rows == &full_rows ? full_run.report : base_run.report;
          zero_matches = zero_matches && !reports_differ(row.report, plain);
        }
      }
    }
    for (std::size_t i = 0; i < full_rows.size(); ++i) {
      if (full_rows[i].delta == 0.5 && full_rows[i].mode == DropMode::kPost) {
        advantage = full_rows[i].report.per_class_ac - base_rows[i].report.per_class_ac;
      }
    }
    verdict(6, monotone && zero_matches && advantage > 0,
            "region-drop sweep: recall non-increasing, delta=0 equals no-drop, full > baseline at delta=0.5 (post)",
            std::string("recall monotone ") + (monotone ? "yes" : "no") + ", delta=0 identical " +
                (zero_matches ? "yes" : "no") + ", post delta=0.5 advantage " + fmt(100 * advantage, 1) + " points");
  }

  // Criterion 7 on seed 0.
  {
    const Dataset& data = datasets[0];
    const MetricReport& full_report = runs[0].at(Variant::kFull).report;
    const std::vector<std::pair<std::string, bool Ablations::*>> flags{
        {"no_reweight", &Ablations::no_reweight},           {"no_cross_feed", &Ablations::no_cross_feed},
        {"no_spatial_path", &Ablations::no_spatial_path},   {"no_semantic_path", &Ablations::no_semantic_path},
        {"no_spatial_memory", &Ablations::no_spatial_memory}, {"no_global_memory", &Ablations::no_global_memory},
        {"no_graph_reasoner", &Ablations::no_graph_reasoner}, {"no_local_convs", &Ablations::no_local_convs}};
    std::size_t ok = 0;
    std::string detail;
    for (const auto& [name, flag] : flags) {
      ExperimentConfig cfg = desk_config(0);
      cfg.model.ablations.*flag = true;
      bool differs = false;
      try {
        const Run run = train_and_eval(cfg, data);
        differs = reports_differ(run.report, full_report);
        std::cout << "      " << name << ": per_class_ac " << fmt(run.report.per_class_ac) << ", per_class_ap "
                  << fmt(run.report.per_class_ap, 6) << ", per_instance_ap " << fmt(run.report.per_instance_ap, 6)
                  << ", " << fmt(run.seconds, 1) << " s" << std::endl;
      } catch (const std::exception& e) {
        std::cout << "      " << name << ": error " << e.what() << std::endl;
      }
      ok += differs;
      if (!differs) detail += " " + name;
    }
    verdict(7, ok == flags.size(), "every ablation flag runs and changes the metric report",
            std::to_string(ok) + "/" + std::to_string(flags.size()) + " differ from full" +
                (detail.empty() ? "" : "; identical:" + detail));
  }
}

// ---------------------------------------------------------------- criterion 8

void reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "graphreason_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ExperimentConfig cfg = desk_config(11);
  cfg.steps = 300;
  cfg.decay_step = 200;
  cfg.n_scenes = 140;
  const Dataset data = generate_dataset(cfg.spec, cfg.n_scenes, cfg.data_seed, cfg.split);
  auto read = [](const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  TrainOptions a, b;
  a.checkpoint = dir / "a.ckpt";
  b.checkpoint = dir / "b.ckpt";
  train(cfg, data, a);
  train(cfg, data, b);
  const std::string ca = read(*a.checkpoint), cb = read(*b.checkpoint);
  const bool same = !ca.empty() && ca == cb && read(dir / "a.ckpt.decay") == read(dir / "b.ckpt.decay");
  verdict(8, same && sizeof(Scalar) == 8, "identical config and seed give bit-identical checkpoints at 64-bit",
          std::to_string(ca.size()) + "-byte checkpoints " + (same ? "identical" : "differ"));
  fs::remove_all(dir);
}

}  // namespace

int main() {
  const auto start = Clock::now();
  std::cout << "acceptance suite (worker limit " << worker_limit() << ")" << std::endl;
  const std::vector<std::function<void()>> steps{gradient_suite, exact_identities, oracle_equivalence, benchmark_criteria,
                                                 reproducibility};
  for (const auto& step : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      std::cout << "FAIL  error: " << e.what() << std::endl;
      ++failures;
    }
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " failing" : std::string("acceptance: all criteria pass"))
            << " (" << fmt(seconds_since(start), 1) << " s)" << std::endl;
  return failures ? 1 : 0;
}
