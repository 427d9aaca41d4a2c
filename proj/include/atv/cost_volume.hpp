#pragma once

#include <span>
#include <vector>

#include "atv/autograd.hpp"
#include "atv/geometry.hpp"

namespace atv::cost_volume {

/// Similarity volume for one reference/source pair.
///   data  : G x D x H x W (zero where invalid)
///   valid : D x H x W warp validity
struct FeatureVolume {
  Tensor data;
  Mask valid;
};

/// Variance across source views, G x D x H x W, non-negative.
struct CostVolume {
  Tensor data;
  int view_count = 0;
};

/// out[g] = (G / C) * <f_ref[g-th block], f_src[g-th block]>, contiguous
/// channel blocks of size C / G.
std::vector<double> groupwise_correlation(std::span<const double> f_ref,
                                          std::span<const double> f_src, int groups);

FeatureVolume build_feature_volume(const Tensor& F_ref, const Tensor& F_src,
                                   const geometry::Camera& ref, const geometry::Camera& src,
                                   const geometry::DepthHypothesisField& depths, int groups);

/// Fast path for spatially constant hypotheses: one plane homography per slice.
FeatureVolume build_feature_volume_planar(const Tensor& F_ref, const Tensor& F_src,
                                          const geometry::Camera& ref,
                                          const geometry::Camera& src,
                                          const std::vector<double>& plane_depths, int groups);

CostVolume variance_aggregate(const std::vector<FeatureVolume>& volumes);

// Differentiable forms used by the network.

/// Correlation of F_ref (C x H x W) with F_src sampled through `grid`
/// (D x H x W cells). Returns G x D x H x W, zero at invalid cells.
Var correlation_volume(const Var& F_ref, const Var& F_src, const geometry::SamplingGrid& grid,
                       int groups);

/// Per-cell variance over the views valid at that cell; zero where no view
/// is valid.
Var variance_aggregate(const std::vector<Var>& volumes, const std::vector<Mask>& valid);

}  // namespace atv::cost_volume
