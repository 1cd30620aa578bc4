#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "graphreason/geometry.hpp"
#include "graphreason/knowledge_graph.hpp"
#include "graphreason/local_reasoning.hpp"
#include "graphreason/params.hpp"
#include "graphreason/tensor.hpp"

namespace graphreason {

// Region-class edges derived from soft-max scores. Both are constants.
struct AssignmentEdges {
  Tensor region_to_class;   // A_{c->r} = p               [R x C]
  Tensor class_from_region;  // A_{r->c} = normalized p^T  [C x R]
};

// Rows of p must sum to one within 1e-9 (ContractError otherwise). Classes
// with no mass over the regions get an all-zero row.
AssignmentEdges assignment_adjacency(const Tensor& p);

// Dense constant matrices, one per spatial edge type.
std::vector<Tensor> spatial_adjacency_tensors(const SpatialAdjacency& adj);
// Dense constant matrices, one per knowledge-graph edge type.
std::vector<Tensor> knowledge_graph_tensors(const KnowledgeGraph& kg);

// One stack of graph reasoning; every matrix is [D x D] and bias-free.
struct StackWeights {
  std::vector<Tensor> spatial;   // W_e per spatial edge type
  Tensor region_to_class;        // W_{e_{r->c}}
  Tensor class_self;             // W_c
  std::vector<Tensor> semantic;  // W_e per knowledge-graph edge type
  Tensor class_to_region;        // W_{e_{c->r}}
};

struct GraphReasoner {
  std::vector<StackWeights> stacks;

  static GraphReasoner create(std::size_t dim, std::size_t spatial_types, std::size_t semantic_types,
                              std::size_t stack_count, Rng& rng);
  void register_params(ParameterSet& params, const std::string& prefix) const;
};

// sum_e A_e M_r W_e
Tensor spatial_path(const Tensor& m_r, std::span<const Tensor> adjacency, std::span<const Tensor> weights);

// sum_e A_e relu(A_{r->c} M_r W_{r->c} + M_c W_c) W_e, shape [C x D]
Tensor semantic_path(const Tensor& m_r, const Tensor& m_c, const AssignmentEdges& assign,
                     std::span<const Tensor> kg_adjacency, const Tensor& w_region_to_class, const Tensor& w_class,
                     std::span<const Tensor> weights);

// relu(G_spatial + relu(A_{c->r} G_semantic W_{c->r}))
Tensor merge_paths(const Tensor& g_spatial, const Tensor& g_semantic, const AssignmentEdges& assign,
                   const Tensor& w_class_to_region);

struct PathToggles {
  bool spatial = true;
  bool semantic = true;
};

// Each stack k maps M to M + merge(...) computed from M, with its own weights.
Tensor reasoning_stack(const Tensor& m_r, const Tensor& m_c, std::span<const Tensor> spatial_adjacency,
                       const AssignmentEdges& assign, std::span<const Tensor> kg_adjacency,
                       const GraphReasoner& reasoner, PathToggles toggles = {});

// Per-row gated update of the global memory.
Tensor global_memory_update(const Tensor& memory, const Tensor& input, const GruCell& cell);

// Linear class and attention heads over region rows.
struct RegionHead {
  Tensor logit_w, logit_b;  // [D x C], [C]
  Tensor att_w, att_b;      // [D x 1], [1]

  static RegionHead create(std::size_t dim, std::size_t classes);
  void register_params(ParameterSet& params, const std::string& prefix) const;
};

RegionPrediction global_predict(const Tensor& memory, const RegionHead& head);

// Two linear layers (ReLU between) over [pooled features, vector]; the
// vector-level counterpart of FusionNet.
Tensor fuse_region_vectors(const Tensor& pooled, const Tensor& vec, const FusionNet& net);

}  // namespace graphreason
