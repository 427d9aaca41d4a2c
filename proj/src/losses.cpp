#include "atv/losses.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "atv/nn.hpp"

namespace atv::losses {

namespace {

// sum over masked pixels of ||A(x) - B(x)||_2, A and B C x H x W.
Var masked_l2_sum(const Var& A, const Var& B, const Mask& mask) {
  const Tensor& a = A.value();
  const Tensor& b = B.value();
  if (!a.same_shape(b)) throw ShapeError("masked_l2_sum: shapes differ");
  const int C = a.dim(0);
  const std::size_t plane = a.size() / C;
  auto norms = std::make_shared<std::vector<double>>(plane, 0.0);
  double total = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    if (!mask.bits[p]) continue;
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      const double e = a[c * plane + p] - b[c * plane + p];
      s += e * e;
    }
    (*norms)[p] = std::sqrt(s);
    total += (*norms)[p];
  }
  auto m = std::make_shared<Mask>(mask);
  return make_node(Tensor({1}, total), {A, B}, [norms, m, C, plane](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    double* ga = an.requires_grad ? an.grad_buffer().data() : nullptr;
    double* gb = bn.requires_grad ? bn.grad_buffer().data() : nullptr;
    const double up = self.grad[0];
    for (std::size_t p = 0; p < plane; ++p) {
      const double n = (*norms)[p];
      if (!m->bits[p] || n <= 0.0) continue;
      for (int c = 0; c < C; ++c) {
        const double g = up * (an.value[c * plane + p] - bn.value[c * plane + p]) / n;
        if (ga) ga[c * plane + p] += g;
        if (gb) gb[c * plane + p] -= g;
      }
    }
  });
}

}  // namespace

void LossWeights::validate() const {
  if (beta1 < 0 || beta2 < 0 || epsilon < 0) throw std::invalid_argument("loss weights must be >= 0");
  for (double w : scale_weights)
    if (w < 0) throw std::invalid_argument("scale weights must be >= 0");
  if (block < 1 || block % 2 == 0) throw std::invalid_argument("loss block size must be odd");
}

Tensor downsample_depth(const Tensor& depth, int scale) {
  if (scale < 0) throw std::invalid_argument("downsample_depth: negative scale");
  const int f = 1 << scale;
  const int H = depth.dim(0) / f, W = depth.dim(1) / f;
  Tensor out({H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) out.at(i, j) = depth.at(i * f, j * f);
  return out;
}

Mask valid_depth_mask(const Tensor& depth) {
  Mask m(depth.shape());
  for (std::size_t i = 0; i < depth.size(); ++i) m.bits[i] = depth[i] > 0.0 ? 1 : 0;
  return m;
}

LossTerm position_loss(const Var& F_ref, const std::vector<Var>& F_srcs,
                       const geometry::Camera& ref_cam,
                       const std::vector<geometry::Camera>& src_cams, const Tensor& gt_depth) {
  if (F_srcs.empty()) throw std::invalid_argument("position_loss: need at least one source view");
  if (F_srcs.size() != src_cams.size()) throw std::invalid_argument("position_loss: camera count");
  const int H = F_ref.shape()[1], W = F_ref.shape()[2];
  if (gt_depth.shape() != Shape{H, W}) {
    throw ShapeError("position_loss: ground-truth depth " + shape_str(gt_depth.shape()) +
                     " does not match features " + shape_str(F_ref.shape()));
  }
  std::vector<Var> sums;
  std::size_t pairs = 0;
  for (std::size_t v = 0; v < F_srcs.size(); ++v) {
    const geometry::ImageSize src_size{F_srcs[v].shape()[1], F_srcs[v].shape()[2]};
    std::vector<double> xs(H * W, std::nan("")), ys(H * W, std::nan(""));
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const double z = gt_depth.at(i, j);
        if (!(z > 0.0)) continue;
        const auto proj = geometry::project_pixel(ref_cam, src_cams[v], geometry::Vec2(j, i), z,
                                                  src_size);
        if (!proj.in_front) continue;
        xs[i * W + j] = proj.uv.x();
        ys[i * W + j] = proj.uv.y();
      }
    }
    auto grid = geometry::SamplingGrid::from_coordinates(1, H, W, xs, ys, src_size);
    Mask mask({H, W});
    mask.bits = grid.valid.bits;
    pairs += mask.count();
    sums.push_back(masked_l2_sum(F_ref, geometry::sample_map(F_srcs[v], grid), mask));
  }
  if (pairs == 0) {
    return LossTerm{nn::weighted_sum(sums, std::vector<double>(sums.size(), 0.0)), true};
  }
  return LossTerm{nn::weighted_sum(sums, std::vector<double>(sums.size(), 1.0 / pairs)), false};
}

Var neighbor_balance_loss(const Var& F, int block) {
  if (block < 1 || block % 2 == 0) {
    throw std::invalid_argument("neighbor_balance_loss: block size must be odd");
  }
  const Tensor& f = F.value();
  const int C = f.dim(0), H = f.dim(1), W = f.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const int half = block / 2;
  double total = 0.0;
  std::size_t pairs = 0;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int a = std::max(0, i - half); a <= std::min(H - 1, i + half); ++a)
        for (int b = std::max(0, j - half); b <= std::min(W - 1, j + half); ++b) {
          if (a == i && b == j) continue;
          double s = 0.0;
          for (int c = 0; c < C; ++c) {
            const double e = f[c * plane + i * W + j] - f[c * plane + a * W + b];
            s += e * e;
          }
          total += std::sqrt(s);
          ++pairs;
        }
  const double norm = pairs ? 1.0 / pairs : 0.0;
  return make_node(Tensor({1}, total * norm), {F}, [C, H, W, plane, half, norm](Node& self) {
    const Tensor& f = self.inputs[0]->value;
    Tensor& g = self.inputs[0]->grad_buffer();
    const double up = self.grad[0] * norm;
    std::vector<double> diff(C);
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        for (int a = std::max(0, i - half); a <= std::min(H - 1, i + half); ++a)
          for (int b = std::max(0, j - half); b <= std::min(W - 1, j + half); ++b) {
            if (a == i && b == j) continue;
            double s = 0.0;
            for (int c = 0; c < C; ++c) {
              diff[c] = f[c * plane + i * W + j] - f[c * plane + a * W + b];
              s += diff[c] * diff[c];
            }
            const double n = std::sqrt(s);
            if (n <= 0.0) continue;
            for (int c = 0; c < C; ++c) {
              g[c * plane + i * W + j] += up * diff[c] / n;
              g[c * plane + a * W + b] -= up * diff[c] / n;
            }
          }
  });
}

Var feature_loss(const Var& pos, const Var& nei, double epsilon) {
  if (epsilon < 0.0) throw std::invalid_argument("feature_loss: epsilon must be >= 0");
  return nn::weighted_sum({pos, nei}, {1.0, epsilon});
}

LossTerm depth_loss(const std::vector<Var>& preds, const std::vector<Tensor>& gts,
                    const std::vector<double>& scale_weights) {
  if (preds.size() != gts.size() || preds.size() != scale_weights.size()) {
    throw std::invalid_argument("depth_loss: per-scale inputs differ in length");
  }
  std::vector<Var> terms;
  std::vector<double> weights;
  bool any_empty = false;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const Tensor& pred = preds[s].value();
    const Tensor& gt = gts[s];
    if (!pred.same_shape(gt)) {
      throw ShapeError("depth_loss: prediction " + shape_str(pred.shape()) + " vs ground truth " +
                       shape_str(gt.shape()));
    }
    std::size_t n = 0;
    double total = 0.0;
    for (std::size_t x = 0; x < gt.size(); ++x) {
      if (gt[x] > 0.0) {
        total += std::abs(pred[x] - gt[x]);
        ++n;
      }
    }
    if (n == 0) any_empty = true;
    const double norm = n ? 1.0 / n : 0.0;
    auto g = std::make_shared<Tensor>(gt);
    terms.push_back(make_node(Tensor({1}, total * norm), {preds[s]}, [g, norm](Node& self) {
      Tensor& grad = self.inputs[0]->grad_buffer();
      const Tensor& pred = self.inputs[0]->value;
      for (std::size_t x = 0; x < pred.size(); ++x) {
        if (!((*g)[x] > 0.0)) continue;
        const double e = pred[x] - (*g)[x];
        grad[x] += self.grad[0] * norm * (e > 0.0 ? 1.0 : e < 0.0 ? -1.0 : 0.0);
      }
    }));
    weights.push_back(scale_weights[s]);
  }
  return LossTerm{nn::weighted_sum(terms, weights), any_empty};
}

Var multi_metric_loss(const std::vector<Var>& fea, const std::vector<Var>& depth, double beta1,
                      double beta2) {
  if (beta1 < 0.0 || beta2 < 0.0) throw std::invalid_argument("multi_metric_loss: negative beta");
  if (fea.size() != depth.size()) {
    throw std::invalid_argument("multi_metric_loss: per-scale term counts differ");
  }
  std::vector<Var> all = fea;
  all.insert(all.end(), depth.begin(), depth.end());
  std::vector<double> w(fea.size(), beta1);
  w.insert(w.end(), depth.size(), beta2);
  return nn::weighted_sum(all, w);
}

}  // namespace atv::losses
