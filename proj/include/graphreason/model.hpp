#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "graphreason/global_reasoning.hpp"
#include "graphreason/knowledge_graph.hpp"
#include "graphreason/local_reasoning.hpp"
#include "graphreason/ops.hpp"
#include "graphreason/params.hpp"
#include "graphreason/scene.hpp"

namespace graphreason {

enum class Variant { kBaseline, kLocal, kGlobal, kFull };
Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);

// Each flag severs one pathway of the full model.
struct Ablations {
  bool no_reweight = false;
  bool no_cross_feed = false;
  bool no_spatial_path = false;
  bool no_semantic_path = false;
  bool no_spatial_memory = false;  // S is rebuilt from scratch each iteration
  bool no_global_memory = false;   // M is replaced by the fused input
  bool no_graph_reasoner = false;  // the stacks are skipped
  bool no_local_convs = false;     // the local net pools the memory directly

  bool any() const;
  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct ModelConfig {
  Variant variant = Variant::kFull;
  Ablations ablations;
  std::size_t classes = 8;
  std::size_t feature_dim = 8;   // Dh
  std::size_t memory_dim = 32;   // D, also the cross-feed width
  std::size_t fc_width = 64;
  std::size_t pool = 7;
  std::size_t stacks = 3;
  std::size_t iterations = 3;
  ops::Activation gru_candidate = ops::Activation::kTanh;
  // Distance-kernel bandwidth as a fraction of scene width.
  double bandwidth_fraction = 1.0 / 12.0;
  std::uint64_t seed = 0;

  bool uses_local() const { return variant == Variant::kLocal || variant == Variant::kFull; }
  bool uses_global() const { return variant == Variant::kGlobal || variant == Variant::kFull; }
  bool uses_cross_feed() const { return variant == Variant::kFull && !ablations.no_cross_feed; }
};

// Context-blind classifier over a region's pooled features.
struct PlainNet {
  Tensor fc1_w, fc1_b;  // [(pool*pool*Dh) x F], [F]
  Tensor fc2_w, fc2_b;  // [F x F], [F]
  Tensor logit_w, logit_b;
  Tensor att_w, att_b;

  static PlainNet create(std::size_t input, std::size_t fc_width, std::size_t classes, Rng& rng);
  void register_params(ParameterSet& params, const std::string& prefix) const;
};

// Parameters of every module the configured variant uses. Copies share
// tensors, so a copied Model trains the same weights.
struct Model {
  ModelConfig config;
  std::size_t semantic_types = 0;
  PlainNet plain;
  FusionNet local_fusion;
  GruCell local_gru;
  LocalReasoner local_net;
  FusionNet global_fusion;
  GruCell global_gru;
  GraphReasoner reasoner;
  Tensor class_embedding;  // M_c [C x D]
  RegionHead global_head;
  Tensor cross_to_local;   // [(F + D) x D]
  Tensor cross_to_global;  // [(F + D) x D]
  ParameterSet params;

  static Model create(const ModelConfig& config, std::size_t semantic_types);
};

// [R x F] local features and [R x D] global features -> [R x D'].
Tensor cross_feed(const Tensor& local_features, const Tensor& global_features, const Tensor& projection);

}  // namespace graphreason
