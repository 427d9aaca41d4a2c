#include "atv/features.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace atv::features {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapMat = Eigen::Map<RowMat>;

struct AttentionCache {
  int H = 0, W = 0, k = 0, d = 0;
  RowMat q, key, v;         // P x d, pixel-major
  std::vector<double> wts;  // P x k*k softmax weights, zero where masked
};

// Computes projections and softmax weights; writes y (d x P) if requested.
void attention_forward(const Tensor& x, const AttentionBlockParams& prm, AttentionCache& c,
                       Tensor* y) {
  prm.validate();
  if (x.rank() != 3 || x.dim(0) != prm.d_in()) {
    throw ShapeError("local_self_attention: input " + shape_str(x.shape()) +
                     " does not match d_in=" + std::to_string(prm.d_in()));
  }
  c.H = x.dim(1);
  c.W = x.dim(2);
  c.k = prm.window;
  c.d = prm.d_out();
  const int P = c.H * c.W;
  const int din = prm.d_in();
  ConstMapMat X(x.data(), din, P);
  ConstMapMat Wq(prm.wq.value().data(), c.d, din);
  ConstMapMat Wk(prm.wk.value().data(), c.d, din);
  ConstMapMat Wv(prm.wv.value().data(), c.d, din);
  c.q = (Wq * X).transpose();
  c.key = (Wk * X).transpose();
  c.v = (Wv * X).transpose();

  const int k = c.k, half = k / 2, tw = 2 * k - 1;
  const double* rel = prm.rel.value().data();
  c.wts.assign(static_cast<std::size_t>(P) * k * k, 0.0);
  RowMat yt;
  if (y) yt = RowMat::Zero(P, c.d);
  std::vector<double> logits(k * k);
  for (int i = 0; i < c.H; ++i) {
    for (int j = 0; j < c.W; ++j) {
      const int p = i * c.W + j;
      const double* qp = c.q.row(p).data();
      double mx = -std::numeric_limits<double>::infinity();
      for (int da = -half; da <= half; ++da) {
        for (int db = -half; db <= half; ++db) {
          const int o = (da + half) * k + (db + half);
          const int a = i + da, b = j + db;
          if (a < 0 || a >= c.H || b < 0 || b >= c.W) {
            logits[o] = -std::numeric_limits<double>::infinity();
            continue;
          }
          const double* kn = c.key.row(a * c.W + b).data();
          const double* ro = rel + ((da + k - 1) * tw + (db + k - 1)) * c.d;
          double s = 0.0;
          for (int ch = 0; ch < c.d; ++ch) s += qp[ch] * (kn[ch] + ro[ch]);
          logits[o] = s;
          mx = std::max(mx, s);
        }
      }
      double z = 0.0;
      double* w = c.wts.data() + static_cast<std::size_t>(p) * k * k;
      for (int o = 0; o < k * k; ++o) {
        w[o] = std::isinf(logits[o]) ? 0.0 : std::exp(logits[o] - mx);
        z += w[o];
      }
      for (int o = 0; o < k * k; ++o) w[o] /= z;
      if (y) {
        double* yp = yt.row(p).data();
        for (int da = -half; da <= half; ++da) {
          for (int db = -half; db <= half; ++db) {
            const int o = (da + half) * k + (db + half);
            if (w[o] == 0.0 && std::isinf(logits[o])) continue;
            const double* vn = c.v.row((i + da) * c.W + (j + db)).data();
            for (int ch = 0; ch < c.d; ++ch) yp[ch] += w[o] * vn[ch];
          }
        }
      }
    }
  }
  if (y) {
    *y = Tensor({c.d, c.H, c.W});
    MapMat(y->data(), c.d, P) = yt.transpose();
  }
}

}  // namespace

void AttentionBlockParams::validate() const {
  if (window < 1 || window % 2 == 0) {
    throw std::invalid_argument("local_self_attention: window size must be odd, got " +
                                std::to_string(window));
  }
  const int d = wq.value().dim(0), din = wq.value().dim(1);
  const int tw = 2 * window - 1;
  if (wk.shape() != Shape{d, din} || wv.shape() != Shape{d, din} ||
      rel.shape() != Shape{tw, tw, d}) {
    throw ShapeError("attention parameters have inconsistent shapes");
  }
}

AttentionBlockParams AttentionBlockParams::create(nn::ParamStore& store, const std::string& prefix,
                                                  int d_in, int d_out, int window,
                                                  std::mt19937_64& rng) {
  AttentionBlockParams p;
  p.window = window;
  p.wq = store.add_kaiming(prefix + ".wq", {d_out, d_in}, d_in, rng);
  p.wk = store.add_kaiming(prefix + ".wk", {d_out, d_in}, d_in, rng);
  p.wv = store.add_kaiming(prefix + ".wv", {d_out, d_in}, d_in, rng);
  p.rel = store.add_zeros(prefix + ".rel", {2 * window - 1, 2 * window - 1, d_out});
  p.validate();
  return p;
}

Tensor local_self_attention(const Tensor& x, const AttentionBlockParams& params) {
  AttentionCache cache;
  Tensor y;
  attention_forward(x, params, cache, &y);
  return y;
}

std::vector<double> attention_weights(const Tensor& x, const AttentionBlockParams& params, int i,
                                      int j) {
  AttentionCache cache;
  attention_forward(x, params, cache, nullptr);
  const int kk = params.window * params.window;
  const auto* w = cache.wts.data() + static_cast<std::size_t>(i * cache.W + j) * kk;
  return std::vector<double>(w, w + kk);
}

Var local_self_attention(const Var& x, const AttentionBlockParams& params) {
  auto cache = std::make_shared<AttentionCache>();
  Tensor y;
  attention_forward(x.value(), params, *cache, &y);
  return make_node(
      std::move(y), {x, params.wq, params.wk, params.wv, params.rel}, [cache](Node& self) {
        const AttentionCache& c = *cache;
        const int P = c.H * c.W, k = c.k, half = k / 2, tw = 2 * k - 1, d = c.d;
        Node& xn = *self.inputs[0];
        Node& wqn = *self.inputs[1];
        Node& wkn = *self.inputs[2];
        Node& wvn = *self.inputs[3];
        Node& reln = *self.inputs[4];
        const double* rel = reln.value.data();
        const RowMat dy = ConstMapMat(self.grad.data(), d, P).transpose();
        RowMat dq = RowMat::Zero(P, d), dk = RowMat::Zero(P, d), dv = RowMat::Zero(P, d);
        std::vector<double> drel(static_cast<std::size_t>(tw) * tw * d, 0.0);
        std::vector<double> dw(k * k), dl(k * k);
        for (int i = 0; i < c.H; ++i) {
          for (int j = 0; j < c.W; ++j) {
            const int p = i * c.W + j;
            const double* w = c.wts.data() + static_cast<std::size_t>(p) * k * k;
            const double* gp = dy.row(p).data();
            const double* qp = c.q.row(p).data();
            double wdot = 0.0;
            for (int da = -half; da <= half; ++da) {
              for (int db = -half; db <= half; ++db) {
                const int o = (da + half) * k + (db + half);
                const int a = i + da, b = j + db;
                dw[o] = 0.0;
                if (a < 0 || a >= c.H || b < 0 || b >= c.W) continue;
                const int n = a * c.W + b;
                const double* vn = c.v.row(n).data();
                double* dvn = dv.row(n).data();
                double s = 0.0;
                for (int ch = 0; ch < d; ++ch) {
                  s += gp[ch] * vn[ch];
                  dvn[ch] += w[o] * gp[ch];
                }
                dw[o] = s;
                wdot += w[o] * s;
              }
            }
            double* dqp = dq.row(p).data();
            for (int da = -half; da <= half; ++da) {
              for (int db = -half; db <= half; ++db) {
                const int o = (da + half) * k + (db + half);
                const int a = i + da, b = j + db;
                if (a < 0 || a >= c.H || b < 0 || b >= c.W) continue;
                const int n = a * c.W + b;
                const double g = w[o] * (dw[o] - wdot);
                const double* kn = c.key.row(n).data();
                const std::size_t roff = ((da + k - 1) * tw + (db + k - 1)) * d;
                const double* ro = rel + roff;
                double* dkn = dk.row(n).data();
                double* dro = drel.data() + roff;
                for (int ch = 0; ch < d; ++ch) {
                  dqp[ch] += g * (kn[ch] + ro[ch]);
                  dkn[ch] += g * qp[ch];
                  dro[ch] += g * qp[ch];
                }
              }
            }
          }
        }
        const int din = xn.value.dim(0);
        ConstMapMat X(xn.value.data(), din, P);
        if (wqn.requires_grad) MapMat(wqn.grad_buffer().data(), d, din).noalias() += dq.transpose() * X.transpose();
        if (wkn.requires_grad) MapMat(wkn.grad_buffer().data(), d, din).noalias() += dk.transpose() * X.transpose();
        if (wvn.requires_grad) MapMat(wvn.grad_buffer().data(), d, din).noalias() += dv.transpose() * X.transpose();
        if (reln.requires_grad) {
          Tensor& g = reln.grad_buffer();
          for (std::size_t t = 0; t < drel.size(); ++t) g[t] += drel[t];
        }
        if (xn.requires_grad) {
          ConstMapMat Wq(wqn.value.data(), d, din);
          ConstMapMat Wk(wkn.value.data(), d, din);
          ConstMapMat Wv(wvn.value.data(), d, din);
          MapMat dx(xn.grad_buffer().data(), din, P);
          dx.noalias() += Wq.transpose() * dq.transpose();
          dx.noalias() += Wk.transpose() * dk.transpose();
          dx.noalias() += Wv.transpose() * dv.transpose();
        }
      });
}

FeatureExtractor::FeatureExtractor(nn::ParamStore& store, const std::string& prefix,
                                   const ExtractorConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  const int b = cfg.base_channels, C = cfg.channels;
  enc0_ = nn::Conv2d(store, prefix + ".enc0", 3, b, 3, 1, rng);
  enc1_ = nn::Conv2d(store, prefix + ".enc1", b, 2 * b, 3, 2, rng);
  enc2_ = nn::Conv2d(store, prefix + ".enc2", 2 * b, 4 * b, 3, 2, rng);
  att1_ = AttentionBlockParams::create(store, prefix + ".att1", 2 * b, 2 * b, cfg.window, rng);
  att0_ = AttentionBlockParams::create(store, prefix + ".att0", b, b, cfg.window, rng);
  out2_ = nn::Conv2d(store, prefix + ".out2", 4 * b, C, 1, 1, rng);
  up1_ = nn::Conv2d(store, prefix + ".up1", 4 * b, 2 * b, 1, 1, rng);
  dec1_ = nn::Conv2d(store, prefix + ".dec1", 4 * b, 2 * b, 3, 1, rng);
  out1_ = nn::Conv2d(store, prefix + ".out1", 2 * b, C, 1, 1, rng);
  up0_ = nn::Conv2d(store, prefix + ".up0", 2 * b, b, 1, 1, rng);
  dec0_ = nn::Conv2d(store, prefix + ".dec0", 2 * b, b, 3, 1, rng);
  out0_ = nn::Conv2d(store, prefix + ".out0", b, C, 1, 1, rng);
}

FeaturePyramidVar FeatureExtractor::operator()(const Var& image) const {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3) throw ShapeError("extract_features: expected 3 x H x W image");
  if (s[1] % 4 != 0 || s[2] % 4 != 0) {
    throw ShapeError("extract_features: image size " + shape_str(s) + " not divisible by 4");
  }
  const int H = s[1], W = s[2];
  Var e0 = nn::elu(enc0_(image));
  Var e1 = nn::elu(enc1_(e0));
  Var e2 = nn::elu(enc2_(e1));

  FeaturePyramidVar out;
  out.maps[2] = out2_(e2);

  Var u1 = nn::elu(up1_(nn::upsample_nearest2d(e2, H / 2, W / 2)));
  Var d1 = nn::elu(dec1_(nn::concat({u1, local_self_attention(e1, att1_)})));
  out.maps[1] = out1_(d1);

  Var u0 = nn::elu(up0_(nn::upsample_nearest2d(d1, H, W)));
  Var d0 = nn::elu(dec0_(nn::concat({u0, local_self_attention(e0, att0_)})));
  out.maps[0] = out0_(d0);
  return out;
}

FeaturePyramid FeatureExtractor::extract(const Tensor& image) const {
  FeaturePyramidVar v = (*this)(constant(image));
  FeaturePyramid out;
  for (int s = 0; s < 3; ++s) out.maps[s] = v.maps[s].value();
  return out;
}

}  // namespace atv::features
