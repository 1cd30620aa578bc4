#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <span>

#include "graphreason/geometry.hpp"
#include "graphreason/ops.hpp"
#include "graphreason/params.hpp"
#include "graphreason/tensor.hpp"

namespace graphreason {

// Gated recurrent write used by both memories:
//   u = sigmoid([x, s] W_u + b_u),  z = sigmoid([x, s] W_z + b_z)
//   s' = u * s + (1 - u) * act(x W_f + (z * s) W_s + b)
// On spatial patches the matrices act as 1x1 convolutions.
struct GruCell {
  Tensor update_w, update_b;  // [(Din + D) x D], [D]
  Tensor reset_w, reset_b;    // [(Din + D) x D], [D]
  Tensor input_w;             // W_f  [Din x D]
  Tensor state_w;             // W_s  [D x D]
  Tensor bias;                // b    [D]
  ops::Activation candidate = ops::Activation::kTanh;

  static GruCell create(std::size_t input_dim, std::size_t state_dim, Rng& rng,
                        ops::Activation candidate = ops::Activation::kTanh);
  void register_params(ParameterSet& params, const std::string& prefix) const;
};

// state [N x D], input [N x Din] -> [N x D]
Tensor gru_step(const GruCell& cell, const Tensor& state, const Tensor& input);

// Two 1x1 convolutions (ReLU between) over mid-level features with a
// per-region vector appended at every location.
struct FusionNet {
  Tensor w1, b1;  // [(Dh + K) x D], [D]
  Tensor w2, b2;  // [D x D], [D]

  static FusionNet create(std::size_t feature_dim, std::size_t vector_dim, std::size_t out_dim, Rng& rng);
  void register_params(ParameterSet& params, const std::string& prefix) const;
};

// h [R x S x Dh] (S spatial samples per region), f [R x K] -> [R x S x D]
Tensor fuse_input_features(const Tensor& h, const Tensor& f, const FusionNet& net);
// Single-region form: h [k x k x Dh], f [K] -> [k x k x D]
Tensor fuse_region_features(const Tensor& h, const Tensor& f, const FusionNet& net);

// s_r: the memory under a box resampled to out x out. Box in cell units.
Tensor memory_read(const Tensor& memory, const Box& box, std::size_t out = 7);

// s_r [k x k x D], f_r [k x k x D] -> s'_r
Tensor gru_write(const Tensor& s_r, const Tensor& f_r, const GruCell& cell);

// Places every updated patch [R x k x k x D] back into memory at once,
// blending overlaps with the coverage weights.
Tensor parallel_write(const Tensor& memory, std::span<const Box> boxes, const Tensor& updates,
                      const CoverageWeights& coverage);

// The local reasoning network: three 3x3 convolutions over the memory,
// per-region pooling to pool x pool, two fully-connected layers, then a
// class-logit head and a scalar attention head.
struct LocalReasoner {
  std::array<Tensor, 3> conv_w;  // [3 x 3 x D x D]
  std::array<Tensor, 3> conv_b;  // [D]
  Tensor fc1_w, fc1_b;           // [(pool*pool*D) x F], [F]
  Tensor fc2_w, fc2_b;           // [F x F], [F]
  Tensor logit_w, logit_b;       // [F x C], [C]
  Tensor att_w, att_b;           // [F x 1], [1]
  std::size_t pool = 7;

  static LocalReasoner create(std::size_t memory_dim, std::size_t fc_width, std::size_t classes, std::size_t pool,
                              Rng& rng);
  void register_params(ParameterSet& params, const std::string& prefix) const;
};

struct RegionPrediction {
  Tensor logits;     // [R x C]
  Tensor attention;  // [R]
  Tensor features;   // [R x F], the last hidden layer
};

// Boxes in cell units. With skip_convs the memory is pooled directly.
RegionPrediction local_predict(const Tensor& memory, std::span<const Box> boxes, const LocalReasoner& net,
                               bool skip_convs = false);

}  // namespace graphreason
