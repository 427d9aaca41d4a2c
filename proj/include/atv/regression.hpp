#pragma once

#include <random>
#include <string>

#include "atv/cost_volume.hpp"
#include "atv/geometry.hpp"
#include "atv/nn.hpp"

namespace atv::regression {

/// probs: D x H x W, non-negative, summing to one along D.
struct ProbabilityVolume {
  Tensor probs;
  int scale = 0;
};

struct DepthPrediction {
  Tensor depth;  // H x W
  Tensor sigma;  // H x W
};

/// Per-pixel closed depth interval for the next scale.
struct IntervalField {
  Tensor lo;  // H x W
  Tensor hi;  // H x W
};

/// Three-level 3D hourglass: G -> 8 -> 16 -> 32 channels with stride-2
/// downsampling on every volume axis, nearest upsampling with skip
/// additions on the way back, and a final single-channel projection.
class Regularizer {
 public:
  Regularizer() = default;
  Regularizer(nn::ParamStore& store, const std::string& prefix, int groups, int base_channels,
              std::mt19937_64& rng);

  /// cost: G x D x H x W -> logits D x H x W.
  Var logits(const Var& cost) const;
  /// Softmax of the logits along D.
  Var operator()(const Var& cost) const;

 private:
  nn::Conv3d c0_, c1_, c2_, u1_, u0_, prob_;
};

/// Softmax over axis 0 of a D x H x W tensor.
Var softmax_depth(const Var& logits);

ProbabilityVolume regularize(const Regularizer& net, const cost_volume::CostVolume& cost,
                             int scale = 0);

/// D(x) = sum_d P_d(x) L_d(x).
Var regress_depth(const Var& probs, const Tensor& hypotheses);
Tensor regress_depth(const ProbabilityVolume& P, const geometry::DepthHypothesisField& L);

/// sigma(x) = sqrt(sum_d P_d(x) (L_d(x) - D(x))^2).
Var estimate_uncertainty(const Var& probs, const Tensor& hypotheses, const Var& depth);
Tensor estimate_uncertainty(const ProbabilityVolume& P, const geometry::DepthHypothesisField& L,
                            const Tensor& depth);

/// Max over D of P, used as the confidence map.
Tensor confidence(const Tensor& probs);

/// Per-pixel hypothesis spacing (L_last - L_first) / (D - 1).
Tensor hypothesis_spacing(const geometry::DepthHypothesisField& L);

/// [D - h, D + h] with h = max(lambda * sigma, min_half_width), clamped to
/// [depth_min, depth_max].
IntervalField adaptive_range(const Tensor& depth, const Tensor& sigma, double lambda,
                             const Tensor& min_half_width, double depth_min, double depth_max);

/// Bilinear resize of an H x W map; output pixel x reads input x * (h / H).
Tensor upsample_bilinear(const Tensor& map, int height, int width);

/// Upsamples the interval field to `target` and places `count` evenly spaced
/// hypotheses per pixel including both endpoints.
geometry::DepthHypothesisField sample_adaptive_depths(const IntervalField& ranges, int count,
                                                      geometry::ImageSize target, int scale);

}  // namespace atv::regression
