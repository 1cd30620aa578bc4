#include "graphreason/model.hpp"

#include <cmath>

#include "graphreason/errors.hpp"

namespace graphreason {

Variant parse_variant(std::string_view name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "local") return Variant::kLocal;
  if (name == "global") return Variant::kGlobal;
  if (name == "full") return Variant::kFull;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kLocal: return "local";
    case Variant::kGlobal: return "global";
    case Variant::kFull: return "full";
  }
  return "?";
}

bool Ablations::any() const { return !(*this == Ablations{}); }

PlainNet PlainNet::create(std::size_t input, std::size_t fc_width, std::size_t classes, Rng& rng) {
  PlainNet net;
  net.fc1_w = he_param({input, fc_width}, input, rng);
  net.fc1_b = zero_param({fc_width});
  net.fc2_w = he_param({fc_width, fc_width}, fc_width, rng);
  net.fc2_b = zero_param({fc_width});
  net.logit_w = zero_param({fc_width, classes});
  net.logit_b = zero_param({classes});
  net.att_w = zero_param({fc_width, 1});
  net.att_b = zero_param({1});
  return net;
}

void PlainNet::register_params(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + ".fc1_w", fc1_w);
  params.add(prefix + ".fc1_b", fc1_b);
  params.add(prefix + ".fc2_w", fc2_w);
  params.add(prefix + ".fc2_b", fc2_b);
  params.add(prefix + ".logit_w", logit_w);
  params.add(prefix + ".logit_b", logit_b);
  params.add(prefix + ".att_w", att_w);
  params.add(prefix + ".att_b", att_b);
}

Model Model::create(const ModelConfig& config, std::size_t semantic_types) {
  if (config.classes < 1 || config.feature_dim < 1 || config.memory_dim < 1 || config.fc_width < 1 ||
      config.pool < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  Model m;
  m.config = config;
  m.semantic_types = semantic_types;
  Rng rng(config.seed);
  const std::size_t c = config.classes, dh = config.feature_dim, d = config.memory_dim, f = config.fc_width;
  const std::size_t vec = c + d;  // memory input vector: [logits, cross-feed]

  m.plain = PlainNet::create(config.pool * config.pool * dh, f, c, rng);
  m.plain.register_params(m.params, "plain");

  if (config.uses_local()) {
    m.local_fusion = FusionNet::create(dh, vec, d, rng);
    m.local_gru = GruCell::create(d, d, rng, config.gru_candidate);
    m.local_net = LocalReasoner::create(d, f, c, config.pool, rng);
    m.local_fusion.register_params(m.params, "local.fusion");
    if (!config.ablations.no_spatial_memory) m.local_gru.register_params(m.params, "local.gru");
    m.local_net.register_params(m.params, "local.net");
  }
  if (config.uses_global()) {
    m.global_fusion = FusionNet::create(dh, vec, d, rng);
    m.global_gru = GruCell::create(d, d, rng, config.gru_candidate);
    m.reasoner = GraphReasoner::create(d, kSpatialEdgeTypes, semantic_types, config.stacks, rng);
    m.class_embedding = normal_param({c, d}, 1.0, rng);
    m.global_head = RegionHead::create(d, c);
    m.global_fusion.register_params(m.params, "global.fusion");
    if (!config.ablations.no_global_memory) m.global_gru.register_params(m.params, "global.gru");
    if (!config.ablations.no_graph_reasoner) {
      m.reasoner.register_params(m.params, "global.reasoner");
      if (!config.ablations.no_semantic_path && semantic_types > 0) {
        m.params.add("global.class_embedding", m.class_embedding);
      }
    }
    m.global_head.register_params(m.params, "global.head");
  }
  if (config.variant == Variant::kFull) {
    const double std = std::sqrt(1.0 / static_cast<double>(f + d));
    m.cross_to_local = normal_param({f + d, d}, std, rng);
    m.cross_to_global = normal_param({f + d, d}, std, rng);
    if (!config.ablations.no_cross_feed) {
      m.params.add("cross.to_local", m.cross_to_local);
      m.params.add("cross.to_global", m.cross_to_global);
    }
  }
  return m;
}

Tensor cross_feed(const Tensor& local_features, const Tensor& global_features, const Tensor& projection) {
  if (local_features.rank() != 2 || global_features.rank() != 2 || local_features.dim(0) != global_features.dim(0)) {
    throw DimensionError("cross_feed: local " + shape_string(local_features.shape()) + " and global " +
                         shape_string(global_features.shape()) + " row counts differ");
  }
  return ops::matmul(ops::concat_last(local_features, global_features), projection);
}

}  // namespace graphreason
