#include "atv/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace atv::regression {

Regularizer::Regularizer(nn::ParamStore& store, const std::string& prefix, int groups, int base,
                         std::mt19937_64& rng) {
  c0_ = nn::Conv3d(store, prefix + ".c0", groups, base, 3, 1, rng);
  c1_ = nn::Conv3d(store, prefix + ".c1", base, 2 * base, 3, 2, rng);
  c2_ = nn::Conv3d(store, prefix + ".c2", 2 * base, 4 * base, 3, 2, rng);
  u1_ = nn::Conv3d(store, prefix + ".u1", 4 * base, 2 * base, 1, 1, rng);
  u0_ = nn::Conv3d(store, prefix + ".u0", 2 * base, base, 1, 1, rng);
  // No bias: the depth softmax cancels a constant logit offset.
  prob_ = nn::Conv3d(store, prefix + ".prob", base, 1, 3, 1, rng, false);
}

Var Regularizer::logits(const Var& cost) const {
  if (cost.shape().size() != 4) throw ShapeError("regularize: expected G x D x H x W volume");
  Var x0 = nn::elu(c0_(cost));
  Var x1 = nn::elu(c1_(x0));
  Var x2 = nn::elu(c2_(x1));
  const Shape& s1 = x1.shape();
  const Shape& s0 = x0.shape();
  Var y1 = nn::elu(nn::add(u1_(nn::upsample_nearest3d(x2, s1[1], s1[2], s1[3])), x1));
  Var y0 = nn::elu(nn::add(u0_(nn::upsample_nearest3d(y1, s0[1], s0[2], s0[3])), x0));
  Var out = prob_(y0);  // 1 x D x H x W
  return make_node(out.value().reshaped({s0[1], s0[2], s0[3]}), {out}, [](Node& self) {
    self.inputs[0]->grad_buffer() += self.grad;
  });
}

Var Regularizer::operator()(const Var& cost) const { return softmax_depth(logits(cost)); }

Var softmax_depth(const Var& logits) {
  const Tensor& l = logits.value();
  if (l.rank() != 3) throw ShapeError("softmax_depth: expected D x H x W");
  const int D = l.dim(0);
  const std::size_t plane = static_cast<std::size_t>(l.dim(1)) * l.dim(2);
  Tensor p(l.shape());
  for (std::size_t x = 0; x < plane; ++x) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int d = 0; d < D; ++d) mx = std::max(mx, l[d * plane + x]);
    double z = 0.0;
    for (int d = 0; d < D; ++d) {
      const double e = std::exp(l[d * plane + x] - mx);
      p[d * plane + x] = e;
      z += e;
    }
    for (int d = 0; d < D; ++d) p[d * plane + x] /= z;
  }
  return make_node(std::move(p), {logits}, [D, plane](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t x = 0; x < plane; ++x) {
      double dot = 0.0;
      for (int d = 0; d < D; ++d) dot += self.grad[d * plane + x] * self.value[d * plane + x];
      for (int d = 0; d < D; ++d) {
        g[d * plane + x] += self.value[d * plane + x] * (self.grad[d * plane + x] - dot);
      }
    }
  });
}

ProbabilityVolume regularize(const Regularizer& net, const cost_volume::CostVolume& cost,
                             int scale) {
  for (double v : cost.data.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("regularize: cost volume is not finite");
  }
  return ProbabilityVolume{net(constant(cost.data)).value(), scale};
}

Var regress_depth(const Var& probs, const Tensor& L) {
  const Tensor& P = probs.value();
  if (!P.same_shape(L)) {
    throw ShapeError("regress_depth: probability " + shape_str(P.shape()) +
                     " vs hypotheses " + shape_str(L.shape()));
  }
  const int D = P.dim(0), H = P.dim(1), W = P.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({H, W});
  for (int d = 0; d < D; ++d)
    for (std::size_t x = 0; x < plane; ++x) out[x] += P[d * plane + x] * L[d * plane + x];
  auto hyp = std::make_shared<Tensor>(L);
  return make_node(std::move(out), {probs}, [hyp, D, plane](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int d = 0; d < D; ++d)
      for (std::size_t x = 0; x < plane; ++x) g[d * plane + x] += self.grad[x] * (*hyp)[d * plane + x];
  });
}

Tensor regress_depth(const ProbabilityVolume& P, const geometry::DepthHypothesisField& L) {
  return regress_depth(constant(P.probs), L.values).value();
}

Var estimate_uncertainty(const Var& probs, const Tensor& L, const Var& depth) {
  const Tensor& P = probs.value();
  const Tensor& Dm = depth.value();
  if (!P.same_shape(L)) throw ShapeError("estimate_uncertainty: P and L shapes differ");
  const int D = P.dim(0), H = P.dim(1), W = P.dim(2);
  if (Dm.shape() != Shape{H, W}) throw ShapeError("estimate_uncertainty: depth map shape");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor sigma({H, W});
  for (std::size_t x = 0; x < plane; ++x) {
    double u = 0.0;
    for (int d = 0; d < D; ++d) {
      const double e = L[d * plane + x] - Dm[x];
      u += P[d * plane + x] * e * e;
    }
    sigma[x] = std::sqrt(std::max(u, 0.0));
  }
  auto hyp = std::make_shared<Tensor>(L);
  return make_node(std::move(sigma), {probs, depth}, [hyp, D, plane](Node& self) {
    Node& pn = *self.inputs[0];
    Node& dn = *self.inputs[1];
    const Tensor& L = *hyp;
    for (std::size_t x = 0; x < plane; ++x) {
      const double s = self.value[x];
      if (s <= 0.0) continue;  // sqrt is not differentiable at a collapsed distribution
      const double du = self.grad[x] / (2.0 * s);
      double dd = 0.0;
      for (int d = 0; d < D; ++d) {
        const double e = L[d * plane + x] - dn.value[x];
        if (pn.requires_grad) pn.grad_buffer()[d * plane + x] += du * e * e;
        dd += -2.0 * pn.value[d * plane + x] * e;
      }
      if (dn.requires_grad) dn.grad_buffer()[x] += du * dd;
    }
  });
}

Tensor estimate_uncertainty(const ProbabilityVolume& P, const geometry::DepthHypothesisField& L,
                            const Tensor& depth) {
  return estimate_uncertainty(constant(P.probs), L.values, constant(depth)).value();
}

Tensor confidence(const Tensor& probs) {
  const int D = probs.dim(0), H = probs.dim(1), W = probs.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({H, W});
  for (std::size_t x = 0; x < plane; ++x) {
    double m = 0.0;
    for (int d = 0; d < D; ++d) m = std::max(m, probs[d * plane + x]);
    out[x] = m;
  }
  return out;
}

Tensor hypothesis_spacing(const geometry::DepthHypothesisField& L) {
  const int D = L.count(), H = L.height(), W = L.width();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({H, W});
  for (std::size_t x = 0; x < plane; ++x) {
    out[x] = (L.values[(D - 1) * plane + x] - L.values[x]) / (D - 1);
  }
  return out;
}

IntervalField adaptive_range(const Tensor& depth, const Tensor& sigma, double lambda,
                             const Tensor& min_half_width, double depth_min, double depth_max) {
  if (!(lambda > 0.0)) throw std::invalid_argument("adaptive_range: lambda must be positive");
  if (!depth.same_shape(sigma) || !depth.same_shape(min_half_width)) {
    throw ShapeError("adaptive_range: depth, sigma and minimum width maps must match");
  }
  IntervalField out{Tensor(depth.shape()), Tensor(depth.shape())};
  for (std::size_t x = 0; x < depth.size(); ++x) {
    if (sigma[x] < 0.0) throw std::invalid_argument("adaptive_range: negative sigma");
    const double half = std::max(lambda * sigma[x], min_half_width[x]);
    out.lo[x] = std::clamp(depth[x] - half, depth_min, depth_max);
    out.hi[x] = std::clamp(depth[x] + half, depth_min, depth_max);
  }
  return out;
}

Tensor upsample_bilinear(const Tensor& map, int height, int width) {
  const int h = map.dim(0), w = map.dim(1);
  Tensor out({height, width});
  const double sy = static_cast<double>(h) / height;
  const double sx = static_cast<double>(w) / width;
  for (int i = 0; i < height; ++i) {
    const double y = std::min(i * sy, static_cast<double>(h - 1));
    const int y0 = std::min(static_cast<int>(y), std::max(h - 2, 0));
    const int y1 = std::min(y0 + 1, h - 1);
    const double ay = y - y0;
    for (int j = 0; j < width; ++j) {
      const double x = std::min(j * sx, static_cast<double>(w - 1));
      const int x0 = std::min(static_cast<int>(x), std::max(w - 2, 0));
      const int x1 = std::min(x0 + 1, w - 1);
      const double ax = x - x0;
      out.at(i, j) = (1 - ay) * ((1 - ax) * map.at(y0, x0) + ax * map.at(y0, x1)) +
                     ay * ((1 - ax) * map.at(y1, x0) + ax * map.at(y1, x1));
    }
  }
  return out;
}

geometry::DepthHypothesisField sample_adaptive_depths(const IntervalField& ranges, int count,
                                                      geometry::ImageSize target, int scale) {
  if (count < 2) throw std::invalid_argument("sample_adaptive_depths: need at least 2 hypotheses");
  const Tensor lo = upsample_bilinear(ranges.lo, target.height, target.width);
  const Tensor hi = upsample_bilinear(ranges.hi, target.height, target.width);
  geometry::DepthHypothesisField field;
  field.scale = scale;
  field.values = Tensor({count, target.height, target.width});
  const std::size_t plane = static_cast<std::size_t>(target.height) * target.width;
  for (std::size_t x = 0; x < plane; ++x) {
    if (!(hi[x] > lo[x])) {
      throw std::invalid_argument("sample_adaptive_depths: degenerate depth interval");
    }
    for (int d = 0; d < count; ++d) {
      const double a = static_cast<double>(count - 1 - d) / (count - 1);
      const double b = static_cast<double>(d) / (count - 1);
      field.values[d * plane + x] = d == 0 ? lo[x] : d == count - 1 ? hi[x] : a * lo[x] + b * hi[x];
    }
  }
  return field;
}

}  // namespace atv::regression
