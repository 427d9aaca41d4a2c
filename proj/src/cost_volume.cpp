#include "atv/cost_volume.hpp"

#include <memory>
#include <stdexcept>

namespace atv::cost_volume {

namespace {

void check_groups(int channels, int groups) {
  if (groups <= 0 || channels % groups != 0) {
    throw std::invalid_argument("channel count " + std::to_string(channels) +
                                " is not divisible by group count " + std::to_string(groups));
  }
}

struct Taps {
  std::size_t i00, i01, i10, i11;
  double w00, w01, w10, w11;
};

Taps taps_at(const geometry::SamplingGrid& g, std::size_t cell) {
  const int x = g.x0[cell], y = g.y0[cell];
  const int x1 = g.src_width > 1 ? x + 1 : x;
  const int y1 = g.src_height > 1 ? y + 1 : y;
  const double ax = g.fx[cell], ay = g.fy[cell];
  const std::size_t W = g.src_width;
  return {y * W + x,
          y * W + x1,
          y1 * W + x,
          y1 * W + x1,
          (1 - ax) * (1 - ay),
          ax * (1 - ay),
          (1 - ax) * ay,
          ax * ay};
}

// C x H x W -> H x W x C.
std::vector<double> to_pixel_major(const Tensor& f) {
  const int C = f.dim(0);
  const std::size_t plane = f.size() / C;
  std::vector<double> out(f.size());
  for (int c = 0; c < C; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[p * C + c] = f[c * plane + p];
  return out;
}

void add_channel_major(const std::vector<double>& pm, int C, Tensor& dst) {
  const std::size_t plane = dst.size() / C;
  for (int c = 0; c < C; ++c)
    for (std::size_t p = 0; p < plane; ++p) dst[c * plane + p] += pm[p * C + c];
}

FeatureVolume volume_from_grid(const Tensor& F_ref, const Tensor& F_src,
                               const geometry::SamplingGrid& grid, int groups) {
  Var v = correlation_volume(constant(F_ref), constant(F_src), grid, groups);
  return FeatureVolume{v.value(), grid.valid};
}

}  // namespace

std::vector<double> groupwise_correlation(std::span<const double> f_ref,
                                          std::span<const double> f_src, int groups) {
  if (f_ref.size() != f_src.size()) throw std::invalid_argument("feature vectors differ in length");
  const int C = static_cast<int>(f_ref.size());
  check_groups(C, groups);
  const int per = C / groups;
  std::vector<double> out(groups, 0.0);
  for (int g = 0; g < groups; ++g) {
    double s = 0.0;
    for (int c = g * per; c < (g + 1) * per; ++c) s += f_ref[c] * f_src[c];
    out[g] = s / per;
  }
  return out;
}

Var correlation_volume(const Var& F_ref, const Var& F_src, const geometry::SamplingGrid& grid,
                       int groups) {
  const Tensor& fr = F_ref.value();
  const Tensor& fs = F_src.value();
  if (fr.rank() != 3 || fs.rank() != 3 || fr.dim(0) != fs.dim(0)) {
    throw ShapeError("correlation_volume: feature maps must share channel count");
  }
  if (fr.dim(1) != grid.height || fr.dim(2) != grid.width || fs.dim(1) != grid.src_height ||
      fs.dim(2) != grid.src_width) {
    throw ShapeError("correlation_volume: sampling grid does not match feature maps");
  }
  const int C = fr.dim(0);
  check_groups(C, groups);
  const int per = C / groups;
  const double norm = 1.0 / per;
  const int D = grid.depth;
  const std::size_t plane = static_cast<std::size_t>(grid.height) * grid.width;
  const std::size_t src_plane = static_cast<std::size_t>(grid.src_height) * grid.src_width;

  // Pixel-major copies keep the channel loops contiguous.
  auto ref_t = std::make_shared<std::vector<double>>(to_pixel_major(fr));
  auto src_t = std::make_shared<std::vector<double>>(to_pixel_major(fs));
  Tensor out({groups, D, grid.height, grid.width});
  std::vector<double> sampled(C);
  for (int d = 0; d < D; ++d) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t cell = d * plane + p;
      if (!grid.valid.bits[cell]) continue;
      const Taps t = taps_at(grid, cell);
      const double* s00 = src_t->data() + t.i00 * C;
      const double* s01 = src_t->data() + t.i01 * C;
      const double* s10 = src_t->data() + t.i10 * C;
      const double* s11 = src_t->data() + t.i11 * C;
      const double* r = ref_t->data() + p * C;
      for (int g = 0; g < groups; ++g) {
        double s = 0.0;
        for (int c = g * per; c < (g + 1) * per; ++c) {
          s += r[c] * (t.w00 * s00[c] + t.w01 * s01[c] + t.w10 * s10[c] + t.w11 * s11[c]);
        }
        out[(static_cast<std::size_t>(g) * D + d) * plane + p] = s * norm;
      }
    }
  }
  auto gptr = std::make_shared<geometry::SamplingGrid>(grid);
  return make_node(
      std::move(out), {F_ref, F_src},
      [gptr, ref_t, src_t, groups, per, norm, C, D, plane, src_plane](Node& self) {
        const geometry::SamplingGrid& grid = *gptr;
        Node& rn = *self.inputs[0];
        Node& sn = *self.inputs[1];
        std::vector<double> dr(rn.requires_grad ? plane * C : 0, 0.0);
        std::vector<double> ds(sn.requires_grad ? src_plane * C : 0, 0.0);
        std::vector<double> up(C);
        for (int d = 0; d < D; ++d) {
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t cell = d * plane + p;
            if (!grid.valid.bits[cell]) continue;
            bool any = false;
            for (int g = 0; g < groups; ++g) {
              const double u = self.grad[(static_cast<std::size_t>(g) * D + d) * plane + p] * norm;
              any = any || u != 0.0;
              for (int c = g * per; c < (g + 1) * per; ++c) up[c] = u;
            }
            if (!any) continue;
            const Taps t = taps_at(grid, cell);
            if (!dr.empty()) {
              const double* s00 = src_t->data() + t.i00 * C;
              const double* s01 = src_t->data() + t.i01 * C;
              const double* s10 = src_t->data() + t.i10 * C;
              const double* s11 = src_t->data() + t.i11 * C;
              double* drp = dr.data() + p * C;
              for (int c = 0; c < C; ++c) {
                drp[c] += up[c] * (t.w00 * s00[c] + t.w01 * s01[c] + t.w10 * s10[c] + t.w11 * s11[c]);
              }
            }
            if (!ds.empty()) {
              const double* r = ref_t->data() + p * C;
              double* d00 = ds.data() + t.i00 * C;
              double* d01 = ds.data() + t.i01 * C;
              double* d10 = ds.data() + t.i10 * C;
              double* d11 = ds.data() + t.i11 * C;
              for (int c = 0; c < C; ++c) {
                const double a = up[c] * r[c];
                d00[c] += a * t.w00;
                d01[c] += a * t.w01;
                d10[c] += a * t.w10;
                d11[c] += a * t.w11;
              }
            }
          }
        }
        if (!dr.empty()) add_channel_major(dr, C, rn.grad_buffer());
        if (!ds.empty()) add_channel_major(ds, C, sn.grad_buffer());
      });
}

FeatureVolume build_feature_volume(const Tensor& F_ref, const Tensor& F_src,
                                   const geometry::Camera& ref, const geometry::Camera& src,
                                   const geometry::DepthHypothesisField& depths, int groups) {
  if (F_ref.shape() != F_src.shape()) throw ShapeError("build_feature_volume: map shapes differ");
  check_groups(F_ref.dim(0), groups);
  const geometry::ImageSize size{F_src.dim(1), F_src.dim(2)};
  if (depths.height() != size.height || depths.width() != size.width) {
    throw ShapeError("build_feature_volume: depth field does not match feature resolution");
  }
  return volume_from_grid(F_ref, F_src, geometry::depth_field_grid(ref, src, depths, size), groups);
}

FeatureVolume build_feature_volume_planar(const Tensor& F_ref, const Tensor& F_src,
                                          const geometry::Camera& ref,
                                          const geometry::Camera& src,
                                          const std::vector<double>& plane_depths, int groups) {
  if (F_ref.shape() != F_src.shape()) throw ShapeError("build_feature_volume: map shapes differ");
  check_groups(F_ref.dim(0), groups);
  const geometry::ImageSize size{F_src.dim(1), F_src.dim(2)};
  std::vector<geometry::Mat3> Hs;
  Hs.reserve(plane_depths.size());
  for (double d : plane_depths) Hs.push_back(geometry::plane_homography(ref, src, d));
  return volume_from_grid(F_ref, F_src, geometry::homography_grid(Hs, size, size), groups);
}

Var variance_aggregate(const std::vector<Var>& volumes, const std::vector<Mask>& valid) {
  if (volumes.empty()) throw std::invalid_argument("variance_aggregate: no volumes");
  if (valid.size() != volumes.size()) {
    throw std::invalid_argument("variance_aggregate: one validity mask per volume required");
  }
  const Shape& shape = volumes[0].shape();
  for (const Var& v : volumes) {
    if (v.shape() != shape) throw ShapeError("variance_aggregate: volume shapes differ");
  }
  const int G = shape[0];
  const std::size_t cells = volumes[0].value().size() / G;
  for (const Mask& m : valid) {
    if (m.size() != cells) throw ShapeError("variance_aggregate: mask size mismatch");
  }
  const std::size_t N = volumes.size();
  Tensor out(shape);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    int n = 0;
    for (const Mask& m : valid) n += m.bits[cell] ? 1 : 0;
    if (n == 0) continue;
    for (int g = 0; g < G; ++g) {
      const std::size_t idx = g * cells + cell;
      double mean = 0.0;
      for (std::size_t i = 0; i < N; ++i)
        if (valid[i].bits[cell]) mean += volumes[i].value()[idx];
      mean /= n;
      double var = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        if (!valid[i].bits[cell]) continue;
        const double e = volumes[i].value()[idx] - mean;
        var += e * e;
      }
      out[idx] = var / n;
    }
  }
  auto masks = std::make_shared<std::vector<Mask>>(valid);
  return make_node(std::move(out), volumes, [masks, G, cells, N](Node& self) {
    const std::vector<Mask>& valid = *masks;
    std::vector<double*> grads(N, nullptr);
    for (std::size_t i = 0; i < N; ++i) {
      if (self.inputs[i]->requires_grad) grads[i] = self.inputs[i]->grad_buffer().data();
    }
    for (std::size_t cell = 0; cell < cells; ++cell) {
      int n = 0;
      for (const Mask& m : valid) n += m.bits[cell] ? 1 : 0;
      if (n == 0) continue;
      for (int g = 0; g < G; ++g) {
        const std::size_t idx = g * cells + cell;
        const double up = self.grad[idx];
        if (up == 0.0) continue;
        double mean = 0.0;
        for (std::size_t i = 0; i < N; ++i)
          if (valid[i].bits[cell]) mean += self.inputs[i]->value[idx];
        mean /= n;
        for (std::size_t i = 0; i < N; ++i) {
          if (!valid[i].bits[cell] || !grads[i]) continue;
          grads[i][idx] += up * 2.0 * (self.inputs[i]->value[idx] - mean) / n;
        }
      }
    }
  });
}

CostVolume variance_aggregate(const std::vector<FeatureVolume>& volumes) {
  if (volumes.empty()) throw std::invalid_argument("variance_aggregate: no volumes");
  std::vector<Var> vars;
  std::vector<Mask> masks;
  for (const FeatureVolume& v : volumes) {
    vars.push_back(constant(v.data));
    masks.push_back(v.valid);
  }
  return CostVolume{variance_aggregate(vars, masks).value(), static_cast<int>(volumes.size())};
}

}  // namespace atv::cost_volume
