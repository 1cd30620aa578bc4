#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphreason/metrics.hpp"
#include "graphreason/model.hpp"
#include "graphreason/optim.hpp"
#include "graphreason/rollout.hpp"
#include "graphreason/synthetic.hpp"

namespace graphreason {

struct ExperimentConfig {
  ModelConfig model;  // classes and feature_dim are taken from the dataset
  LossConfig loss;
  double learning_rate = 0.002;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip = 0;  // global gradient-norm cap; 0 disables
  std::size_t steps = 5000;
  std::size_t decay_step = 4000;  // learning rate x0.1 from here on; 0 disables
  std::size_t log_every = 100;
  std::uint64_t seed = 0;

  std::string data_dir;
  SceneSpec spec;  // used by gen-data
  std::size_t n_scenes = 700;
  SplitFractions split;
  std::uint64_t data_seed = 1;

  bool drop_enabled = false;
  DropProtocol drop;
  std::uint64_t drop_seed = 7;
  std::vector<double> sweep_deltas{0.0, 0.3, 0.5, 0.8, 0.9};

  std::size_t gradcheck_seeds = 10;
  std::string gradcheck_corrupt_op;  // test hook: op whose adjoint is doubled
};

// Flat `key=value` lines; '#' starts a comment line. Unknown keys and
// malformed values raise ConfigError.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
// Every key in a fixed order; parse_config(canonical_config(c)) == c.
std::string canonical_config(const ExperimentConfig& cfg);
// FNV-1a over the keys that determine trained parameters.
std::uint64_t config_digest(const ExperimentConfig& cfg);

// Model configuration completed with the dataset's class and feature counts.
ModelConfig resolved_model_config(const ExperimentConfig& cfg, const SceneSpec& spec);
Model build_model(const ExperimentConfig& cfg, const Dataset& data);
LossConfig effective_loss(const ExperimentConfig& cfg);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState& optimizer,
                     std::size_t step, std::uint64_t digest);
// Overwrites the model's parameters (and optimizer state when given);
// ConfigError when the stored digest differs from `expected_digest`.
std::size_t load_checkpoint(const std::filesystem::path& path, Model& model, OptimizerState* optimizer,
                            std::uint64_t expected_digest);

struct TrainOptions {
  std::ostream* log = nullptr;
  std::optional<std::filesystem::path> checkpoint;  // final; "<path>.decay" at the decay step
};

struct TrainResult {
  Model model;
  OptimizerState optimizer;
  std::size_t steps = 0;
  double last_loss = 0;
};

// Deterministic SGD, one scene per step in a seeded per-epoch order.
// EvaluationError, naming the step and scene, on non-finite values.
TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& options = {});

// Scores are the fused soft-max outputs. With a drop protocol, pre mode
// rolls out on kept regions only, post mode rolls out on all regions and
// scores the kept ones. Scenes left without regions are skipped; when no
// region survives, the metrics are NaN and recall is 0. Without a drop
// protocol, EvaluationError if there is nothing to evaluate.
MetricReport evaluate(const Model& model, const ExperimentConfig& cfg, const Dataset& data,
                      std::span<const Scene> scenes, const std::optional<DropProtocol>& drop = std::nullopt);

struct SweepRow {
  double delta = 0;
  DropMode mode = DropMode::kPost;
  MetricReport report;
};

// One evaluation per (mode, delta), modes pre then post.
std::vector<SweepRow> sweep(const Model& model, const ExperimentConfig& cfg, const Dataset& data,
                            std::span<const Scene> scenes, std::span<const double> deltas);
std::string sweep_csv(std::span<const SweepRow> rows);

// Worker cap from GRAPHREASON_THREADS (default: hardware concurrency).
std::size_t worker_limit();
// Runs fn(0..n-1) on up to worker_limit() threads; rethrows the first error.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace graphreason
