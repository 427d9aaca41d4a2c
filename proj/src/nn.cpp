#include "atv/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace atv::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

int conv_out(int n, int k, int stride) { return (n + 2 * (k / 2) - k) / stride + 1; }

// Convolution geometry. 2D convolutions use depth = 1 and kd = 1.
struct ConvGeom {
  int C, D, H, W;  // input
  int O, kd, k, stride;
  int Do, Ho, Wo;

  int rows() const { return C * kd * k * k; }
  std::size_t voxels() const { return static_cast<std::size_t>(Do) * Ho * Wo; }
  bool pointwise() const { return kd == 1 && k == 1 && stride == 1; }
};

// Output lines (oz, oy) are processed in chunks so the column block stays
// cache resident.
int lines_per_chunk(const ConvGeom& g) {
  const std::size_t target = 1 << 16;
  const std::size_t per_line = static_cast<std::size_t>(g.rows()) * g.Wo;
  return static_cast<int>(std::max<std::size_t>(1, target / std::max<std::size_t>(per_line, 1)));
}

// Column block rows are (c, kz, ky, kx); columns are the output voxels of
// lines [l0, l1), line = oz * Ho + oy.
void im2col(const ConvGeom& g, const double* x, int l0, int l1, double* col) {
  const int pz = g.kd / 2, p = g.k / 2;
  const std::size_t n = static_cast<std::size_t>(l1 - l0) * g.Wo;
  double* row = col;
  for (int c = 0; c < g.C; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * g.D * g.H * g.W;
    for (int kz = 0; kz < g.kd; ++kz)
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx, row += n) {
          for (int l = l0; l < l1; ++l) {
            const int iz = (l / g.Ho) * g.stride + kz - pz;
            const int iy = (l % g.Ho) * g.stride + ky - p;
            double* dst = row + static_cast<std::size_t>(l - l0) * g.Wo;
            if (iz < 0 || iz >= g.D || iy < 0 || iy >= g.H) {
              std::fill(dst, dst + g.Wo, 0.0);
              continue;
            }
            const double* src = xc + (static_cast<std::size_t>(iz) * g.H + iy) * g.W;
            if (g.stride == 1) {
              const int lo = std::max(0, p - kx), hi = std::min(g.Wo, g.W + p - kx);
              std::fill(dst, dst + lo, 0.0);
              std::copy(src + lo + kx - p, src + hi + kx - p, dst + lo);
              std::fill(dst + std::max(lo, hi), dst + g.Wo, 0.0);
            } else {
              for (int ox = 0; ox < g.Wo; ++ox) {
                const int ix = ox * g.stride + kx - p;
                dst[ox] = (ix >= 0 && ix < g.W) ? src[ix] : 0.0;
              }
            }
          }
        }
  }
}

void col2im(const ConvGeom& g, const double* col, int l0, int l1, double* dx) {
  const int pz = g.kd / 2, p = g.k / 2;
  const std::size_t n = static_cast<std::size_t>(l1 - l0) * g.Wo;
  const double* row = col;
  for (int c = 0; c < g.C; ++c) {
    double* xc = dx + static_cast<std::size_t>(c) * g.D * g.H * g.W;
    for (int kz = 0; kz < g.kd; ++kz)
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx, row += n) {
          for (int l = l0; l < l1; ++l) {
            const int iz = (l / g.Ho) * g.stride + kz - pz;
            const int iy = (l % g.Ho) * g.stride + ky - p;
            if (iz < 0 || iz >= g.D || iy < 0 || iy >= g.H) continue;
            const double* src = row + static_cast<std::size_t>(l - l0) * g.Wo;
            double* dst = xc + (static_cast<std::size_t>(iz) * g.H + iy) * g.W;
            if (g.stride == 1) {
              const int lo = std::max(0, p - kx), hi = std::min(g.Wo, g.W + p - kx);
              for (int ox = lo; ox < hi; ++ox) dst[ox + kx - p] += src[ox];
            } else {
              for (int ox = 0; ox < g.Wo; ++ox) {
                const int ix = ox * g.stride + kx - p;
                if (ix >= 0 && ix < g.W) dst[ix] += src[ox];
              }
            }
          }
        }
  }
}

using StridedMat = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMat = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// out(O x P) = W(O x R) * col(R x P) + b, with col built chunk by chunk and
// rebuilt during the backward pass instead of being stored.
Var conv_generic(const Var& x, const Var& w, const Var& b, const ConvGeom& g, Shape out_shape) {
  const int O = g.O, R = g.rows();
  const Eigen::Index P = static_cast<Eigen::Index>(g.voxels());
  Tensor out(std::move(out_shape));
  ConstMapMat w_m(w.value().data(), O, R);
  if (g.pointwise()) {
    MapMat(out.data(), O, P).noalias() = w_m * ConstMapMat(x.value().data(), R, P);
  } else {
    const int lines = g.Do * g.Ho, step = lines_per_chunk(g);
    Buffer col(static_cast<std::size_t>(R) * step * g.Wo);
    for (int l0 = 0; l0 < lines; l0 += step) {
      const int l1 = std::min(lines, l0 + step);
      const Eigen::Index n = static_cast<Eigen::Index>(l1 - l0) * g.Wo;
      im2col(g, x.value().data(), l0, l1, col.data());
      StridedMat(out.data() + static_cast<std::size_t>(l0) * g.Wo, O, n, Eigen::OuterStride<>(P))
          .noalias() = w_m * ConstMapMat(col.data(), R, n);
    }
  }
  MapMat out_m(out.data(), O, P);
  const bool has_bias = b.defined();
  if (has_bias) {
    for (int o = 0; o < O; ++o) out_m.row(o).array() += b.value()[o];
  }
  std::vector<Var> inputs = {x, w};
  if (has_bias) inputs.push_back(b);

  return make_node(std::move(out), std::move(inputs), [g, O, R, P](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    ConstMapMat w_m(wn.value.data(), O, R);
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Node& bn = *self.inputs[2];
      ConstMapMat gm(self.grad.data(), O, P);
      double* db = bn.grad_buffer().data();
      for (int o = 0; o < O; ++o) db[o] += gm.row(o).sum();
    }
    if (g.pointwise()) {
      ConstMapMat gm(self.grad.data(), O, P);
      ConstMapMat xm(xn.value.data(), R, P);
      if (wn.requires_grad) MapMat(wn.grad_buffer().data(), O, R).noalias() += gm * xm.transpose();
      if (xn.requires_grad) MapMat(xn.grad_buffer().data(), R, P).noalias() += w_m.transpose() * gm;
      return;
    }
    if (!wn.requires_grad && !xn.requires_grad) return;
    const int lines = g.Do * g.Ho, step = lines_per_chunk(g);
    Buffer col(static_cast<std::size_t>(R) * step * g.Wo);
    RowMat dcol;
    for (int l0 = 0; l0 < lines; l0 += step) {
      const int l1 = std::min(lines, l0 + step);
      const Eigen::Index n = static_cast<Eigen::Index>(l1 - l0) * g.Wo;
      ConstStridedMat gm(self.grad.data() + static_cast<std::size_t>(l0) * g.Wo, O, n,
                         Eigen::OuterStride<>(P));
      if (wn.requires_grad) {
        im2col(g, xn.value.data(), l0, l1, col.data());
        MapMat(wn.grad_buffer().data(), O, R).noalias() +=
            gm * ConstMapMat(col.data(), R, n).transpose();
      }
      if (xn.requires_grad) {
        dcol.noalias() = w_m.transpose() * gm;
        col2im(g, dcol.data(), l0, l1, xn.grad_buffer().data());
      }
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = a.value();
  out += b.value();
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->grad_buffer() += self.grad;
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  return make_node(std::move(out), {a}, [s](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var elu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : std::expm1(v);
  return make_node(std::move(out), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const Tensor& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * (x[i] > 0.0 ? 1.0 : self.value[i] + 1.0);
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_node(Tensor({1}, s), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double up = self.grad[0];
    for (double& v : g.values()) v += up;
  });
}

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) s += weights[i] * scalars[i].item();
  return make_node(Tensor({1}, s), scalars, [weights](Node& self) {
    // inputs keep the original order; constants are filtered by requires_grad.
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (self.inputs[i]->requires_grad) self.inputs[i]->grad_buffer()[0] += weights[i] * self.grad[0];
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  int total = 0;
  for (const Var& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) throw ShapeError("concat: trailing shapes differ");
    total += p.shape()[0];
  }
  Shape out_shape = parts[0].shape();
  out_shape[0] = total;
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return make_node(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      Node& in = *self.inputs[i];
      if (!in.requires_grad) continue;
      Tensor& g = in.grad_buffer();
      const double* src = self.grad.data() + offsets[i];
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3) ||
      (b.defined() && b.value().size() != static_cast<std::size_t>(wv.dim(0)))) {
    throw ShapeError("conv2d: incompatible shapes x" + shape_str(xv.shape()) + " w" +
                     shape_str(wv.shape()));
  }
  const int k = wv.dim(2);
  ConvGeom g{xv.dim(0), 1, xv.dim(1), xv.dim(2), wv.dim(0), 1, k, stride,
             1, conv_out(xv.dim(1), k, stride), conv_out(xv.dim(2), k, stride)};
  return conv_generic(x, w, b, g, {g.O, g.Ho, g.Wo});
}

Var conv3d(const Var& x, const Var& w, const Var& b, int stride) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 5 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3) ||
      wv.dim(3) != wv.dim(4) ||
      (b.defined() && b.value().size() != static_cast<std::size_t>(wv.dim(0)))) {
    throw ShapeError("conv3d: incompatible shapes x" + shape_str(xv.shape()) + " w" +
                     shape_str(wv.shape()));
  }
  const int k = wv.dim(2);
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), k, k, stride,
             conv_out(xv.dim(1), k, stride), conv_out(xv.dim(2), k, stride),
             conv_out(xv.dim(3), k, stride)};
  return conv_generic(x, w, b, g, {g.O, g.Do, g.Ho, g.Wo});
}

Var upsample_nearest2d(const Var& x, int height, int width) {
  const Tensor& xv = x.value();
  const int C = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (height > 2 * h || width > 2 * w) throw ShapeError("upsample_nearest2d: target too large");
  Tensor out({C, height, width});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) out.at(c, i, j) = xv.at(c, i / 2, j / 2);
  return make_node(std::move(out), {x}, [C, height, width](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j) g.at(c, i / 2, j / 2) += self.grad.at(c, i, j);
  });
}

Var upsample_nearest3d(const Var& x, int depth, int height, int width) {
  const Tensor& xv = x.value();
  const int C = xv.dim(0), d = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (depth > 2 * d || height > 2 * h || width > 2 * w) {
    throw ShapeError("upsample_nearest3d: target too large");
  }
  Tensor out({C, depth, height, width});
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < depth; ++z)
      for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j) out.at(c, z, i, j) = xv.at(c, z / 2, i / 2, j / 2);
  return make_node(std::move(out), {x}, [C, depth, height, width](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int z = 0; z < depth; ++z)
        for (int i = 0; i < height; ++i)
          for (int j = 0; j < width; ++j) g.at(c, z / 2, i / 2, j / 2) += self.grad.at(c, z, i, j);
  });
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  // FNV-1a over the tag, mixed into the root with splitmix64.
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (h | 1ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Var ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Var v = parameter(std::move(value));
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

Var ParamStore::add_kaiming(const std::string& name, Shape shape, int fan_in,
                            std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return add(name, std::move(t));
}

Var ParamStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor(std::move(shape), 0.0));
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

Conv2d::Conv2d(ParamStore& store, const std::string& prefix, int in, int out, int kernel,
               int stride_, std::mt19937_64& rng)
    : stride(stride_) {
  weight = store.add_kaiming(prefix + ".weight", {out, in, kernel, kernel}, in * kernel * kernel, rng);
  bias = store.add_zeros(prefix + ".bias", {out});
}

Conv3d::Conv3d(ParamStore& store, const std::string& prefix, int in, int out, int kernel,
               int stride_, std::mt19937_64& rng, bool with_bias)
    : stride(stride_) {
  weight = store.add_kaiming(prefix + ".weight", {out, in, kernel, kernel, kernel},
                             in * kernel * kernel * kernel, rng);
  if (with_bias) bias = store.add_zeros(prefix + ".bias", {out});
}

}  // namespace atv::nn
