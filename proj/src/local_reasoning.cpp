#include "graphreason/local_reasoning.hpp"

#include <vector>

#include "graphreason/errors.hpp"

namespace graphreason {

GruCell GruCell::create(std::size_t input_dim, std::size_t state_dim, Rng& rng, ops::Activation candidate) {
  GruCell cell;
  const std::size_t joint = input_dim + state_dim;
  const double gate_std = std::sqrt(1.0 / static_cast<double>(joint));
  cell.update_w = normal_param({joint, state_dim}, gate_std, rng);
  cell.update_b = zero_param({state_dim});
  cell.reset_w = normal_param({joint, state_dim}, gate_std, rng);
  cell.reset_b = zero_param({state_dim});
  cell.input_w = normal_param({input_dim, state_dim}, std::sqrt(1.0 / static_cast<double>(input_dim)), rng);
  cell.state_w = normal_param({state_dim, state_dim}, std::sqrt(1.0 / static_cast<double>(state_dim)), rng);
  cell.bias = zero_param({state_dim});
  cell.candidate = candidate;
  return cell;
}

void GruCell::register_params(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + ".update_w", update_w);
  params.add(prefix + ".update_b", update_b);
  params.add(prefix + ".reset_w", reset_w);
  params.add(prefix + ".reset_b", reset_b);
  params.add(prefix + ".input_w", input_w);
  params.add(prefix + ".state_w", state_w);
  params.add(prefix + ".bias", bias);
}

Tensor gru_step(const GruCell& cell, const Tensor& state, const Tensor& input) {
  if (state.rank() != 2 || input.rank() != 2 || state.dim(0) != input.dim(0)) {
    throw DimensionError("gru_step: state " + shape_string(state.shape()) + " and input " +
                         shape_string(input.shape()) + " disagree");
  }
  const Tensor joint = ops::concat_last(input, state);
  const Tensor u = ops::sigmoid(ops::add_bias(ops::matmul(joint, cell.update_w), cell.update_b));
  const Tensor z = ops::sigmoid(ops::add_bias(ops::matmul(joint, cell.reset_w), cell.reset_b));
  const Tensor pre = ops::add(ops::matmul(input, cell.input_w), ops::matmul(ops::mul(z, state), cell.state_w));
  const Tensor cand = ops::activate(ops::add_bias(pre, cell.bias), cell.candidate);
  return ops::add(ops::mul(u, state), ops::mul(ops::one_minus(u), cand));
}

FusionNet FusionNet::create(std::size_t feature_dim, std::size_t vector_dim, std::size_t out_dim, Rng& rng) {
  FusionNet net;
  net.w1 = he_param({feature_dim + vector_dim, out_dim}, feature_dim + vector_dim, rng);
  net.b1 = zero_param({out_dim});
  net.w2 = normal_param({out_dim, out_dim}, std::sqrt(1.0 / static_cast<double>(out_dim)), rng);
  net.b2 = zero_param({out_dim});
  return net;
}

void FusionNet::register_params(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + ".w1", w1);
  params.add(prefix + ".b1", b1);
  params.add(prefix + ".w2", w2);
  params.add(prefix + ".b2", b2);
}

Tensor fuse_input_features(const Tensor& h, const Tensor& f, const FusionNet& net) {
  if (h.rank() != 3 || f.rank() != 2 || h.dim(0) != f.dim(0)) {
    throw DimensionError("fuse_input_features: features " + shape_string(h.shape()) + " and vectors " +
                         shape_string(f.shape()) + " disagree");
  }
  const std::size_t r = h.dim(0), s = h.dim(1);
  const Tensor joint = ops::concat_last(h, ops::repeat_rows(f, s));
  const Tensor flat = ops::reshape(joint, {r * s, joint.dim(2)});
  const Tensor hidden = ops::relu(ops::add_bias(ops::matmul(flat, net.w1), net.b1));
  const Tensor out = ops::add_bias(ops::matmul(hidden, net.w2), net.b2);
  return ops::reshape(out, {r, s, out.dim(1)});
}

Tensor fuse_region_features(const Tensor& h, const Tensor& f, const FusionNet& net) {
  if (h.rank() != 3 || f.rank() != 1) {
    throw DimensionError("fuse_region_features: expected [k x k x Dh] and [K], got " + shape_string(h.shape()) +
                         " and " + shape_string(f.shape()));
  }
  const std::size_t kh = h.dim(0), kw = h.dim(1);
  const Tensor out = fuse_input_features(ops::reshape(h, {1, kh * kw, h.dim(2)}), ops::reshape(f, {1, f.dim(0)}), net);
  return ops::reshape(out, {kh, kw, out.dim(2)});
}

Tensor memory_read(const Tensor& memory, const Box& box, std::size_t out) {
  return ops::crop_and_resize(memory, box, out, out);
}

Tensor gru_write(const Tensor& s_r, const Tensor& f_r, const GruCell& cell) {
  if (s_r.shape() != f_r.shape() || s_r.rank() != 3) {
    throw DimensionError("gru_write: s_r " + shape_string(s_r.shape()) + " and f_r " + shape_string(f_r.shape()) +
                         " must be equal [k x k x D]");
  }
  const std::size_t n = s_r.dim(0) * s_r.dim(1);
  const Tensor next = gru_step(cell, ops::reshape(s_r, {n, s_r.dim(2)}), ops::reshape(f_r, {n, f_r.dim(2)}));
  return ops::reshape(next, s_r.shape());
}

Tensor parallel_write(const Tensor& memory, std::span<const Box> boxes, const Tensor& updates,
                      const CoverageWeights& coverage) {
  return ops::paste_back(memory, boxes, updates, coverage);
}

LocalReasoner LocalReasoner::create(std::size_t memory_dim, std::size_t fc_width, std::size_t classes,
                                    std::size_t pool, Rng& rng) {
  LocalReasoner net;
  net.pool = pool;
  for (std::size_t i = 0; i < 3; ++i) {
    net.conv_w[i] = he_param({3, 3, memory_dim, memory_dim}, 9 * memory_dim, rng);
    net.conv_b[i] = zero_param({memory_dim});
  }
  const std::size_t flat = pool * pool * memory_dim;
  net.fc1_w = he_param({flat, fc_width}, flat, rng);
  net.fc1_b = zero_param({fc_width});
  net.fc2_w = he_param({fc_width, fc_width}, fc_width, rng);
  net.fc2_b = zero_param({fc_width});
  // Zero heads: uniform predictions and equal attention at initialization.
  net.logit_w = zero_param({fc_width, classes});
  net.logit_b = zero_param({classes});
  net.att_w = zero_param({fc_width, 1});
  net.att_b = zero_param({1});
  return net;
}

void LocalReasoner::register_params(ParameterSet& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < 3; ++i) {
    params.add(prefix + ".conv" + std::to_string(i) + "_w", conv_w[i]);
    params.add(prefix + ".conv" + std::to_string(i) + "_b", conv_b[i]);
  }
  params.add(prefix + ".fc1_w", fc1_w);
  params.add(prefix + ".fc1_b", fc1_b);
  params.add(prefix + ".fc2_w", fc2_w);
  params.add(prefix + ".fc2_b", fc2_b);
  params.add(prefix + ".logit_w", logit_w);
  params.add(prefix + ".logit_b", logit_b);
  params.add(prefix + ".att_w", att_w);
  params.add(prefix + ".att_b", att_b);
}

RegionPrediction local_predict(const Tensor& memory, std::span<const Box> boxes, const LocalReasoner& net,
                               bool skip_convs) {
  Tensor x = memory;
  if (!skip_convs) {
    for (std::size_t i = 0; i < 3; ++i) x = ops::relu(ops::conv2d(x, net.conv_w[i], net.conv_b[i]));
  }
  const std::size_t r = boxes.size();
  const Tensor pooled = ops::crop_and_resize(x, boxes, net.pool, net.pool);
  const Tensor flat = ops::reshape(pooled, {r, pooled.size() / (r ? r : 1)});
  const Tensor h1 = ops::relu(ops::add_bias(ops::matmul(flat, net.fc1_w), net.fc1_b));
  const Tensor h2 = ops::relu(ops::add_bias(ops::matmul(h1, net.fc2_w), net.fc2_b));
  RegionPrediction out;
  out.features = h2;
  out.logits = ops::add_bias(ops::matmul(h2, net.logit_w), net.logit_b);
  out.attention = ops::column(ops::add_bias(ops::matmul(h2, net.att_w), net.att_b), 0);
  return out;
}

}  // namespace graphreason
