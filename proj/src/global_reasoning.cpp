#include "graphreason/global_reasoning.hpp"

#include <cmath>

#include "graphreason/errors.hpp"
#include "graphreason/ops.hpp"

namespace graphreason {

AssignmentEdges assignment_adjacency(const Tensor& p) {
  if (p.rank() != 2) throw DimensionError("assignment_adjacency: p must be [R x C], got " + shape_string(p.shape()));
  const std::size_t r = p.dim(0), c = p.dim(1);
  for (std::size_t i = 0; i < r; ++i) {
    double total = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double v = p[i * c + k];
      if (!std::isfinite(v)) throw EvaluationError("assignment_adjacency: non-finite score");
      if (v < 0) throw ContractError("assignment_adjacency: negative score");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ContractError("assignment_adjacency: row " + std::to_string(i) + " of p sums to " + std::to_string(total));
    }
  }
  AssignmentEdges edges;
  edges.region_to_class = p.detach();
  Tensor back({c, r});
  for (std::size_t k = 0; k < c; ++k) {
    double total = 0;
    for (std::size_t i = 0; i < r; ++i) total += p[i * c + k];
    if (total == 0.0) continue;
    for (std::size_t i = 0; i < r; ++i) back[k * r + i] = static_cast<Scalar>(p[i * c + k] / total);
  }
  edges.class_from_region = back;
  return edges;
}

std::vector<Tensor> spatial_adjacency_tensors(const SpatialAdjacency& adj) {
  std::vector<Tensor> out;
  const std::size_t r = adj.regions;
  for (const auto& w : adj.weights) out.emplace_back(Shape{r, r}, std::vector<Scalar>(w.begin(), w.end()));
  return out;
}

std::vector<Tensor> knowledge_graph_tensors(const KnowledgeGraph& kg) {
  std::vector<Tensor> out;
  const std::size_t c = kg.classes;
  for (const auto& t : kg.types) {
    out.emplace_back(Shape{c, c}, std::vector<Scalar>(t.adjacency.begin(), t.adjacency.end()));
  }
  return out;
}

GraphReasoner GraphReasoner::create(std::size_t dim, std::size_t spatial_types, std::size_t semantic_types,
                                    std::size_t stack_count, Rng& rng) {
  // Small weights keep each residual stack close to the identity at start.
  const double std = 0.5 / std::sqrt(static_cast<double>(dim));
  GraphReasoner reasoner;
  for (std::size_t k = 0; k < stack_count; ++k) {
    StackWeights s;
    for (std::size_t e = 0; e < spatial_types; ++e) s.spatial.push_back(normal_param({dim, dim}, std, rng));
    s.region_to_class = normal_param({dim, dim}, std, rng);
    s.class_self = normal_param({dim, dim}, std, rng);
    for (std::size_t e = 0; e < semantic_types; ++e) s.semantic.push_back(normal_param({dim, dim}, std, rng));
    s.class_to_region = normal_param({dim, dim}, std, rng);
    reasoner.stacks.push_back(std::move(s));
  }
  return reasoner;
}

void GraphReasoner::register_params(ParameterSet& params, const std::string& prefix) const {
  for (std::size_t k = 0; k < stacks.size(); ++k) {
    const std::string p = prefix + ".stack" + std::to_string(k);
    const auto& s = stacks[k];
    for (std::size_t e = 0; e < s.spatial.size(); ++e) params.add(p + ".spatial" + std::to_string(e), s.spatial[e]);
    params.add(p + ".region_to_class", s.region_to_class);
    params.add(p + ".class_self", s.class_self);
    for (std::size_t e = 0; e < s.semantic.size(); ++e) params.add(p + ".semantic" + std::to_string(e), s.semantic[e]);
    params.add(p + ".class_to_region", s.class_to_region);
  }
}

Tensor spatial_path(const Tensor& m_r, std::span<const Tensor> adjacency, std::span<const Tensor> weights) {
  if (adjacency.size() != weights.size()) {
    throw DimensionError("spatial_path: " + std::to_string(adjacency.size()) + " adjacencies but " +
                         std::to_string(weights.size()) + " weights");
  }
  std::vector<Tensor> terms;
  for (std::size_t e = 0; e < adjacency.size(); ++e) {
    terms.push_back(ops::matmul(ops::matmul(adjacency[e], m_r), weights[e]));
  }
  if (terms.empty()) return Tensor({m_r.dim(0), m_r.dim(1)});
  return ops::add_n(terms);
}

Tensor semantic_path(const Tensor& m_r, const Tensor& m_c, const AssignmentEdges& assign,
                     std::span<const Tensor> kg_adjacency, const Tensor& w_region_to_class, const Tensor& w_class,
                     std::span<const Tensor> weights) {
  if (kg_adjacency.size() != weights.size()) {
    throw DimensionError("semantic_path: " + std::to_string(kg_adjacency.size()) + " adjacencies but " +
                         std::to_string(weights.size()) + " weights");
  }
  if (kg_adjacency.empty()) return Tensor({m_c.dim(0), m_c.dim(1)});
  const Tensor x = ops::relu(ops::add(ops::matmul(ops::matmul(assign.class_from_region, m_r), w_region_to_class),
                                      ops::matmul(m_c, w_class)));
  std::vector<Tensor> terms;
  for (std::size_t e = 0; e < kg_adjacency.size(); ++e) {
    terms.push_back(ops::matmul(ops::matmul(kg_adjacency[e], x), weights[e]));
  }
  return ops::add_n(terms);
}

Tensor merge_paths(const Tensor& g_spatial, const Tensor& g_semantic, const AssignmentEdges& assign,
                   const Tensor& w_class_to_region) {
  const Tensor back = ops::relu(ops::matmul(ops::matmul(assign.region_to_class, g_semantic), w_class_to_region));
  return ops::relu(ops::add(g_spatial, back));
}

Tensor reasoning_stack(const Tensor& m_r, const Tensor& m_c, std::span<const Tensor> spatial_adjacency,
                       const AssignmentEdges& assign, std::span<const Tensor> kg_adjacency,
                       const GraphReasoner& reasoner, PathToggles toggles) {
  Tensor m = m_r;
  for (const auto& s : reasoner.stacks) {
    const Tensor g_sp = toggles.spatial ? spatial_path(m, spatial_adjacency, s.spatial) : Tensor(m.shape());
    Tensor merged;
    if (toggles.semantic) {
      const Tensor g_sem = semantic_path(m, m_c, assign, kg_adjacency, s.region_to_class, s.class_self, s.semantic);
      merged = merge_paths(g_sp, g_sem, assign, s.class_to_region);
    } else {
      merged = ops::relu(g_sp);
    }
    m = ops::add(m, merged);
  }
  return m;
}

Tensor global_memory_update(const Tensor& memory, const Tensor& input, const GruCell& cell) {
  return gru_step(cell, memory, input);
}

RegionHead RegionHead::create(std::size_t dim, std::size_t classes) {
  RegionHead head;
  head.logit_w = zero_param({dim, classes});
  head.logit_b = zero_param({classes});
  head.att_w = zero_param({dim, 1});
  head.att_b = zero_param({1});
  return head;
}

void RegionHead::register_params(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + ".logit_w", logit_w);
  params.add(prefix + ".logit_b", logit_b);
  params.add(prefix + ".att_w", att_w);
  params.add(prefix + ".att_b", att_b);
}

RegionPrediction global_predict(const Tensor& memory, const RegionHead& head) {
  RegionPrediction out;
  out.features = memory;
  out.logits = ops::add_bias(ops::matmul(memory, head.logit_w), head.logit_b);
  out.attention = ops::column(ops::add_bias(ops::matmul(memory, head.att_w), head.att_b), 0);
  return out;
}

Tensor fuse_region_vectors(const Tensor& pooled, const Tensor& vec, const FusionNet& net) {
  if (pooled.rank() != 2 || vec.rank() != 2 || pooled.dim(0) != vec.dim(0)) {
    throw DimensionError("fuse_region_vectors: " + shape_string(pooled.shape()) + " and " +
                         shape_string(vec.shape()) + " disagree");
  }
  const Tensor hidden = ops::relu(ops::add_bias(ops::matmul(ops::concat_last(pooled, vec), net.w1), net.b1));
  return ops::add_bias(ops::matmul(hidden, net.w2), net.b2);
}

}  // namespace graphreason
