#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "graphreason/geometry.hpp"
#include "graphreason/model.hpp"
#include "graphreason/scene.hpp"
#include "graphreason/tensor.hpp"

namespace graphreason {

enum class Source { kPlain, kLocal, kGlobal, kFused };
std::string_view source_name(Source s);

struct PredictionRecord {
  Source source = Source::kPlain;
  std::size_t iteration = 0;
  Tensor logits;     // [R x C]
  Tensor attention;  // [R]; empty for the fused record
  Tensor probs;      // [R x C]
};

struct RolloutState {
  std::size_t iteration = 0;
  Tensor spatial_memory;  // [H x W x D]; empty when the local module is off
  Tensor global_memory;   // [R x D]; empty when the global module is off
  std::vector<PredictionRecord> records;
  PredictionRecord fused;
};

// Constants shared by every iteration of one scene's roll-out.
struct SceneContext {
  std::vector<Box> cells;  // boxes in grid-cell units
  CoverageWeights coverage;
  std::vector<Tensor> spatial_adjacency;
  std::vector<Tensor> kg_adjacency;
};

// Value-derived constants of a roll-out: the soft-max scores behind the
// assignment edges and the loss re-weighting factors. A filled cache in
// replay mode pins them while parameters move, as finite differencing of
// the analytic gradient requires.
struct ConstantCache {
  bool replay = false;
  std::vector<Tensor> assignments;
  std::vector<std::vector<Scalar>> reweights;
};

SceneContext prepare_scene(const Scene& scene, const ModelConfig& config, std::span<const Tensor> kg_adjacency);

// Plain prediction first, then per iteration the local and global
// predictions from the current memories, cross-feed, and memory updates.
RolloutState rollout(const Model& model, const Scene& scene, const SceneContext& context, std::size_t iterations,
                     ConstantCache* cache = nullptr);

// Per region, w_n = softmax_n(-a_n); fused logits = sum_n w_n f_n.
PredictionRecord attention_fuse(std::span<const PredictionRecord> records);
// [R x N] fusion weights as a constant tensor.
Tensor fusion_weights(std::span<const PredictionRecord> records);

// max(1 - p_prev[r, label_r], beta), normalized over regions.
std::vector<Scalar> reweight_weights(const Tensor& p_prev, std::span<const std::size_t> labels, Scalar beta);

// sum_r weight_r * -log softmax(logits)[r, label_r] with constant weights.
Tensor reweighted_loss(const Tensor& p_prev, const Tensor& logits, std::span<const std::size_t> labels, Scalar beta);
Tensor weighted_nll(const Tensor& logits, std::span<const std::size_t> labels, std::span<const Scalar> weights);

struct LossConfig {
  Scalar beta = 0.5;
  Scalar plain_weight = 1;
  Scalar local_weight = 1;
  Scalar global_weight = 1;
  Scalar fused_weight = 1;
};

struct LossBreakdown {
  Tensor total;
  Scalar plain = 0;
  std::vector<Scalar> local;
  std::vector<Scalar> global;
  Scalar fused = 0;
};

LossBreakdown total_loss(const RolloutState& state, std::span<const std::size_t> labels, const LossConfig& cfg,
                         ConstantCache* cache = nullptr);

}  // namespace graphreason
