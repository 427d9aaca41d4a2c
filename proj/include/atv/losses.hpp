#pragma once

#include <array>
#include <vector>

#include "atv/autograd.hpp"
#include "atv/geometry.hpp"

namespace atv::losses {

struct LossWeights {
  double beta1 = 1.0;    // feature-wise term
  double beta2 = 1.0;    // depth term
  double epsilon = 0.01; // neighbor-balance weight inside the feature loss
  std::array<double, 3> scale_weights = {2.0, 1.0, 0.5};  // indexed by scale s (0 finest)
  int block = 3;

  void validate() const;
};

/// A scalar loss plus a flag raised when the valid set was empty (the value
/// is then exactly zero).
struct LossTerm {
  Var value;
  bool empty = false;
};

/// Nearest-neighbour downsampling by 2^scale; pixel (i, j) reads
/// (i * 2^scale, j * 2^scale), so invalid (<= 0) samples stay invalid.
Tensor downsample_depth(const Tensor& depth, int scale);

/// Pixels with positive depth.
Mask valid_depth_mask(const Tensor& depth);

/// Mean over valid (pixel, source view) pairs of ||F_ref(x) - F_src(x')||_2,
/// with x' the projection of x at its ground-truth depth. A pair is valid
/// when the depth is positive and every bilinear tap of x' is in-bounds.
LossTerm position_loss(const Var& F_ref, const std::vector<Var>& F_srcs,
                       const geometry::Camera& ref_cam,
                       const std::vector<geometry::Camera>& src_cams, const Tensor& gt_depth);

/// Mean over ordered pairs (i, j), j != i inside the block centered at i,
/// of ||F(i) - F(j)||_2.
Var neighbor_balance_loss(const Var& F, int block = 3);

Var feature_loss(const Var& pos, const Var& nei, double epsilon = 0.01);

/// sum_s scale_weights[s] * mean_{x valid} |D^s(x) - D^s_GT(x)|. Scales with
/// no valid pixel contribute zero and set `empty`.
LossTerm depth_loss(const std::vector<Var>& preds, const std::vector<Tensor>& gts,
                    const std::vector<double>& scale_weights);

/// sum_s (beta1 * fea[s] + beta2 * depth[s]).
Var multi_metric_loss(const std::vector<Var>& fea, const std::vector<Var>& depth, double beta1,
                      double beta2);

}  // namespace atv::losses
