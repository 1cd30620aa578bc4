#include "graphreason/rollout.hpp"

#include <algorithm>

#include "graphreason/errors.hpp"
#include "graphreason/global_reasoning.hpp"
#include "graphreason/local_reasoning.hpp"
#include "graphreason/ops.hpp"

namespace graphreason {

namespace {

PredictionRecord make_record(Source source, std::size_t iteration, const RegionPrediction& pred) {
  PredictionRecord rec;
  rec.source = source;
  rec.iteration = iteration;
  rec.logits = pred.logits;
  rec.attention = pred.attention;
  rec.probs = ops::softmax_rows(pred.logits);
  return rec;
}

RegionPrediction plain_predict(const Tensor& flat, const PlainNet& net) {
  const Tensor h1 = ops::relu(ops::add_bias(ops::matmul(flat, net.fc1_w), net.fc1_b));
  const Tensor h2 = ops::relu(ops::add_bias(ops::matmul(h1, net.fc2_w), net.fc2_b));
  RegionPrediction out;
  out.features = h2;
  out.logits = ops::add_bias(ops::matmul(h2, net.logit_w), net.logit_b);
  out.attention = ops::column(ops::add_bias(ops::matmul(h2, net.att_w), net.att_b), 0);
  return out;
}

std::vector<Scalar> uniform_weights(std::size_t r) { return std::vector<Scalar>(r, Scalar{1} / static_cast<Scalar>(r)); }

Tensor mean_nll(const Tensor& logits, std::span<const std::size_t> labels) {
  const auto w = uniform_weights(labels.size());
  return ops::weighted_pick(ops::negate(ops::log_softmax_rows(logits)), labels, w);
}

void check_labels(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("loss: logits " + shape_string(logits.shape()) + " for " + std::to_string(labels.size()) +
                         " labels");
  }
  for (auto l : labels) {
    if (l >= logits.dim(1)) {
      throw IndexError("label " + std::to_string(l) + " out of range for " + std::to_string(logits.dim(1)) +
                       " classes");
    }
  }
}

}  // namespace

std::string_view source_name(Source s) {
  switch (s) {
    case Source::kPlain: return "plain";
    case Source::kLocal: return "local";
    case Source::kGlobal: return "global";
    case Source::kFused: return "fused";
  }
  return "?";
}

SceneContext prepare_scene(const Scene& scene, const ModelConfig& config, std::span<const Tensor> kg_adjacency) {
  SceneContext ctx;
  ctx.cells = scene.boxes_in_cells();
  ctx.coverage = coverage_weights(scene.boxes, scene.grid_h(), scene.grid_w(), scene.height, scene.width);
  KernelConfig kernel;
  kernel.bandwidth = config.bandwidth_fraction * scene.width;
  ctx.spatial_adjacency = spatial_adjacency_tensors(build_spatial_adjacency(scene.boxes, kernel));
  ctx.kg_adjacency.assign(kg_adjacency.begin(), kg_adjacency.end());
  return ctx;
}

RolloutState rollout(const Model& model, const Scene& scene, const SceneContext& context, std::size_t iterations,
                     ConstantCache* cache) {
  const ModelConfig& cfg = model.config;
  const std::size_t r = scene.regions();
  if (r == 0) throw ContractError("rollout: scene " + scene.id + " has no regions");
  if (scene.feature_dim() != cfg.feature_dim) {
    throw DimensionError("rollout: scene features have depth " + std::to_string(scene.feature_dim()) +
                         ", model expects " + std::to_string(cfg.feature_dim));
  }
  const std::size_t d = cfg.memory_dim, p = cfg.pool, dh = cfg.feature_dim;
  const std::span<const Box> cells = context.cells;

  const Tensor h = ops::crop_and_resize(scene.features, cells, p, p);
  RolloutState state;
  const RegionPrediction plain = plain_predict(ops::reshape(h, {r, p * p * dh}), model.plain);
  state.records.push_back(make_record(Source::kPlain, 0, plain));

  const bool local = cfg.uses_local();
  const bool global = cfg.uses_global();
  if (cfg.variant == Variant::kBaseline) iterations = 0;

  const Tensor h_seq = ops::reshape(h, {r, p * p, dh});
  const Tensor pooled = ops::mean_middle(h_seq);
  const Tensor zero_map({scene.grid_h(), scene.grid_w(), d});
  Tensor spatial = zero_map;
  Tensor memory({r, d});
  Tensor cross_local({r, d});
  Tensor cross_global({r, d});
  Tensor logits_local = plain.logits;
  Tensor logits_global = plain.logits;
  Tensor p_global = state.records.front().probs.detach();
  const PathToggles toggles{!cfg.ablations.no_spatial_path, !cfg.ablations.no_semantic_path};

  for (std::size_t i = 1; i <= iterations; ++i) {
    RegionPrediction lp, gp;
    if (local) {
      const Tensor f_r = fuse_input_features(h_seq, ops::concat_last(logits_local, cross_local), model.local_fusion);
      if (cfg.ablations.no_spatial_memory) {
        spatial = ops::paste_back(zero_map, cells, ops::reshape(f_r, {r, p, p, d}), context.coverage);
      } else {
        const Tensor s_r = ops::reshape(ops::crop_and_resize(spatial, cells, p, p), {r * p * p, d});
        const Tensor next = gru_step(model.local_gru, s_r, ops::reshape(f_r, {r * p * p, d}));
        spatial = parallel_write(spatial, cells, ops::reshape(next, {r, p, p, d}), context.coverage);
      }
      lp = local_predict(spatial, cells, model.local_net, cfg.ablations.no_local_convs);
      state.records.push_back(make_record(Source::kLocal, i, lp));
    }
    if (global) {
      const Tensor x = fuse_region_vectors(pooled, ops::concat_last(logits_global, cross_global), model.global_fusion);
      memory = cfg.ablations.no_global_memory ? x : global_memory_update(memory, x, model.global_gru);
      Tensor g = memory;
      if (!cfg.ablations.no_graph_reasoner) {
        const std::size_t slot = i - 1;
        if (cache && cache->replay) {
          if (slot >= cache->assignments.size()) throw ContractError("constant cache has too few assignments");
          p_global = cache->assignments[slot];
        } else if (cache) {
          cache->assignments.push_back(p_global);
        }
        g = reasoning_stack(memory, model.class_embedding, context.spatial_adjacency, assignment_adjacency(p_global),
                            context.kg_adjacency, model.reasoner, toggles);
      }
      gp = global_predict(g, model.global_head);
      state.records.push_back(make_record(Source::kGlobal, i, gp));
      p_global = state.records.back().probs.detach();
    }
    if (cfg.uses_cross_feed()) {
      cross_local = cross_feed(lp.features, gp.features, model.cross_to_local);
      cross_global = cross_feed(lp.features, gp.features, model.cross_to_global);
    }
    if (local) logits_local = lp.logits;
    if (global) logits_global = gp.logits;
    state.iteration = i;
  }
  if (local) state.spatial_memory = spatial;
  if (global) state.global_memory = memory;
  state.fused = attention_fuse(state.records);
  return state;
}

Tensor fusion_weights(std::span<const PredictionRecord> records) {
  if (records.empty()) throw ContractError("attention fusion needs at least one record");
  std::vector<Tensor> att;
  for (const auto& rec : records) att.push_back(rec.attention);
  return ops::softmax_rows(ops::negate(ops::stack_columns(att)));
}

PredictionRecord attention_fuse(std::span<const PredictionRecord> records) {
  const Tensor w = fusion_weights(records);
  std::vector<Tensor> terms;
  for (std::size_t n = 0; n < records.size(); ++n) terms.push_back(ops::scale_rows(records[n].logits, ops::column(w, n)));
  PredictionRecord fused;
  fused.source = Source::kFused;
  fused.iteration = records.back().iteration;
  fused.logits = terms.size() == 1 ? terms.front() : ops::add_n(terms);
  fused.probs = ops::softmax_rows(fused.logits);
  return fused;
}

std::vector<Scalar> reweight_weights(const Tensor& p_prev, std::span<const std::size_t> labels, Scalar beta) {
  check_labels(p_prev, labels);
  if (!(beta >= 0 && beta <= 1)) throw ContractError("beta must lie in [0, 1]");
  const std::size_t r = labels.size(), c = p_prev.dim(1);
  std::vector<Scalar> w(r);
  Scalar total = 0;
  for (std::size_t i = 0; i < r; ++i) {
    w[i] = std::max(Scalar{1} - p_prev[i * c + labels[i]], beta);
    total += w[i];
  }
  if (total <= 0) return uniform_weights(r);
  for (auto& v : w) v /= total;
  return w;
}

Tensor reweighted_loss(const Tensor& p_prev, const Tensor& logits, std::span<const std::size_t> labels, Scalar beta) {
  check_labels(logits, labels);
  return weighted_nll(logits, labels, reweight_weights(p_prev, labels, beta));
}

Tensor weighted_nll(const Tensor& logits, std::span<const std::size_t> labels, std::span<const Scalar> weights) {
  check_labels(logits, labels);
  return ops::weighted_pick(ops::negate(ops::log_softmax_rows(logits)), labels, weights);
}

LossBreakdown total_loss(const RolloutState& state, std::span<const std::size_t> labels, const LossConfig& cfg,
                         ConstantCache* cache) {
  if (state.records.empty() || state.fused.logits.rank() != 2) throw ContractError("total_loss: roll-out has no fused record");
  const PredictionRecord& plain = state.records.front();
  check_labels(plain.logits, labels);
  LossBreakdown out;
  std::vector<Tensor> terms;
  const Tensor l0 = mean_nll(plain.logits, labels);
  out.plain = l0.item();
  terms.push_back(ops::scale(l0, cfg.plain_weight));
  std::size_t slot = 0;
  auto module_loss = [&](const Tensor& p_prev, const Tensor& logits) {
    std::vector<Scalar> w;
    if (cache && cache->replay) {
      if (slot >= cache->reweights.size()) throw ContractError("constant cache has too few re-weightings");
      w = cache->reweights[slot];
    } else {
      w = reweight_weights(p_prev, labels, cfg.beta);
      if (cache) cache->reweights.push_back(w);
    }
    ++slot;
    return weighted_nll(logits, labels, w);
  };
  const Tensor* prev_local = &plain.probs;
  const Tensor* prev_global = &plain.probs;
  for (const auto& rec : state.records) {
    if (rec.source == Source::kLocal) {
      const Tensor l = module_loss(*prev_local, rec.logits);
      out.local.push_back(l.item());
      terms.push_back(ops::scale(l, cfg.local_weight));
      prev_local = &rec.probs;
    } else if (rec.source == Source::kGlobal) {
      const Tensor l = module_loss(*prev_global, rec.logits);
      out.global.push_back(l.item());
      terms.push_back(ops::scale(l, cfg.global_weight));
      prev_global = &rec.probs;
    }
  }
  const Tensor lf = mean_nll(state.fused.logits, labels);
  out.fused = lf.item();
  terms.push_back(ops::scale(lf, cfg.fused_weight));
  out.total = ops::add_n(terms);
  return out;
}

}  // namespace graphreason
