#include "atv/verify.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "atv/cost_volume.hpp"
#include "atv/evalmetrics.hpp"
#include "atv/features.hpp"
#include "atv/fusion.hpp"
#include "atv/losses.hpp"
#include "atv/nn.hpp"
#include "atv/regression.hpp"
#include "atv/synthetic.hpp"

namespace atv::verify {

using geometry::Camera;
using geometry::Mat3;
using geometry::Vec2;
using geometry::Vec3;

namespace {

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), f, a, b);
  return buf;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::uint64_t trial_seed(std::uint64_t root, const std::string& tag, int trial) {
  return nn::derive_seed(root, tag + "/" + std::to_string(trial));
}

// Bilinear sample of an H x W plane at (x, y); false when outside [0, W-1] x [0, H-1].
bool bilinear(const double* plane, int H, int W, double x, double y, double& out) {
  if (!(x >= 0.0 && y >= 0.0 && x <= W - 1 && y <= H - 1)) return false;
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  if (x0 > W - 2) x0 = W - 2;
  if (y0 > H - 2) y0 = H - 2;
  const double ax = x - x0, ay = y - y0;
  out = (1 - ay) * ((1 - ax) * plane[y0 * W + x0] + ax * plane[y0 * W + x0 + 1]) +
        ay * ((1 - ax) * plane[(y0 + 1) * W + x0] + ax * plane[(y0 + 1) * W + x0 + 1]);
  return true;
}

// Sum of w (constant, same shape) times v.
Var dot_with(const Var& v, const Tensor& w) {
  Tensor out({1});
  for (std::size_t i = 0; i < w.size(); ++i) out[0] += w[i] * v.value()[i];
  return make_node(std::move(out), {v}, [w](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
  });
}

Var scalar_param(double v) { return parameter(Tensor({1}, std::vector<double>{v})); }

// ---------------------------------------------------------------- attention

SuiteReport attention_suite(std::uint64_t seed) {
  SuiteReport r{"attention", {}, 0.0};
  constexpr int kTrials = 100;
  double worst = 0.0, worst_sum = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < kTrials; ++trial) {
    std::mt19937_64 rng(trial_seed(seed, "attention", trial));
    const int d_in = 3, d_out = 3, k = 3;
    features::AttentionBlockParams p;
    p.window = k;
    p.wq = parameter(random_tensor(rng, {d_out, d_in}));
    p.wk = parameter(random_tensor(rng, {d_out, d_in}));
    p.wv = parameter(random_tensor(rng, {d_out, d_in}));
    p.rel = parameter(random_tensor(rng, {2 * k - 1, 2 * k - 1, d_out}));
    const Tensor x = random_tensor(rng, {d_in, 5, 5});
    const Tensor y = features::local_self_attention(x, p);
    const Tensor ref = attention_oracle(x, p.wq.value(), p.wk.value(), p.wv.value(), p.rel.value(), k);
    worst = std::max(worst, max_abs_diff(y, ref));
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        double s = 0.0;
        for (double w : features::attention_weights(x, p, i, j)) {
          if (w < 0.0) s = std::numeric_limits<double>::infinity();
          s += w;
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.checks.push_back({"oracle_5x5x3_k3", worst <= 1e-6,
                      fmt("max |diff| %.3g over 100 trials (tol 1e-6)", worst)});
  r.checks.push_back({"weights_sum_to_one", worst_sum <= 1e-12,
                      fmt("max |sum - 1| %.3g", worst_sum)});
  r.checks.push_back({"runtime", secs < 10.0, fmt("%.3f s (limit 10 s)", secs)});
  return r;
}

// -------------------------------------------------------------- cost volume

SuiteReport cost_volume_suite(std::uint64_t seed) {
  SuiteReport r{"cost_volume", {}, 0.0};
  constexpr int kTrials = 20;
  const int C = 4, G = 2, D = 4, H = 8, W = 8;
  double planar = 0.0, field = 0.0, var = 0.0;
  std::size_t mask_mismatch = 0, valid_cells = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    std::mt19937_64 rng(trial_seed(seed, "cost_volume", trial));
    const Camera ref = random_camera(rng, H, W, 0.0, 0.0);
    std::vector<Camera> srcs = {random_camera(rng, H, W, 0.05, 0.3),
                                random_camera(rng, H, W, 0.05, 0.3)};
    const Tensor F_ref = random_tensor(rng, {C, H, W});
    const std::vector<Tensor> F_src = {random_tensor(rng, {C, H, W}), random_tensor(rng, {C, H, W})};
    std::vector<double> planes(D);
    for (int d = 0; d < D; ++d) planes[d] = 6.0 + d * 1.0;

    Tensor constant_depths({D, H, W});
    for (int d = 0; d < D; ++d)
      for (int p = 0; p < H * W; ++p) constant_depths[d * H * W + p] = planes[d];
    geometry::DepthHypothesisField constant_field{constant_depths, 0};

    // Per-pixel hypotheses, increasing along D.
    Tensor varying({D, H, W});
    std::uniform_real_distribution<double> jitter(-0.4, 0.4);
    for (int d = 0; d < D; ++d)
      for (int p = 0; p < H * W; ++p) varying[d * H * W + p] = planes[d] + jitter(rng);
    geometry::DepthHypothesisField varying_field{varying, 0};

    std::vector<Tensor> oracle_vols;
    std::vector<Mask> oracle_valid;
    std::vector<Var> lib_vols;
    std::vector<Mask> lib_valid;
    for (int s = 0; s < 2; ++s) {
      Mask m0;
      const Tensor o_planar = cost_volume_oracle(F_ref, F_src[s], ref, srcs[s], constant_depths, G, &m0);
      const auto lib_planar =
          cost_volume::build_feature_volume_planar(F_ref, F_src[s], ref, srcs[s], planes, G);
      const auto lib_const =
          cost_volume::build_feature_volume(F_ref, F_src[s], ref, srcs[s], constant_field, G);
      planar = std::max({planar, max_abs_diff(o_planar, lib_planar.data),
                         max_abs_diff(o_planar, lib_const.data)});
      for (std::size_t i = 0; i < m0.size(); ++i) {
        mask_mismatch += (m0.bits[i] != lib_planar.valid.bits[i]) + (m0.bits[i] != lib_const.valid.bits[i]);
        valid_cells += m0.bits[i];
      }

      Mask mv;
      const Tensor o_field = cost_volume_oracle(F_ref, F_src[s], ref, srcs[s], varying, G, &mv);
      const auto grid = geometry::depth_field_grid(ref, srcs[s], varying_field, {H, W});
      const Var lib = cost_volume::correlation_volume(constant(F_ref), constant(F_src[s]), grid, G);
      field = std::max(field, max_abs_diff(o_field, lib.value()));
      for (std::size_t i = 0; i < mv.size(); ++i) mask_mismatch += mv.bits[i] != grid.valid.bits[i];
      oracle_vols.push_back(o_field);
      oracle_valid.push_back(mv);
      lib_vols.push_back(lib);
      lib_valid.push_back(grid.valid);
    }
    const Tensor o_var = variance_oracle(oracle_vols, oracle_valid);
    var = std::max(var, max_abs_diff(o_var, cost_volume::variance_aggregate(lib_vols, lib_valid).value()));
  }
  r.checks.push_back({"planar_volume_8x8_D4_G2", planar <= 1e-5,
                      fmt("max |diff| %.3g (tol 1e-5)", planar)});
  r.checks.push_back({"depth_field_volume", field <= 1e-5, fmt("max |diff| %.3g (tol 1e-5)", field)});
  r.checks.push_back({"variance_aggregate", var <= 1e-5, fmt("max |diff| %.3g (tol 1e-5)", var)});
  r.checks.push_back({"validity_masks", mask_mismatch == 0 && valid_cells > 0,
                      fmt("%.0f mismatched cells, %.0f valid", static_cast<double>(mask_mismatch),
                          static_cast<double>(valid_cells))});
  return r;
}

// ---------------------------------------------------------------- gradients

struct GradCase {
  std::string name;
  // Builds one random instance and returns its worst check.
  std::function<GradCheck(std::mt19937_64&)> run;
};

GradCheck attention_grad(std::mt19937_64& rng) {
  const int d_in = 3, d_out = 4, k = 3;
  features::AttentionBlockParams p;
  p.window = k;
  p.wq = parameter(random_tensor(rng, {d_out, d_in}));
  p.wk = parameter(random_tensor(rng, {d_out, d_in}));
  p.wv = parameter(random_tensor(rng, {d_out, d_in}));
  p.rel = parameter(random_tensor(rng, {2 * k - 1, 2 * k - 1, d_out}));
  Var x = parameter(random_tensor(rng, {d_in, 4, 4}));
  const Tensor w = random_tensor(rng, {d_out, 4, 4});
  return check_gradients([&] { return dot_with(features::local_self_attention(x, p), w); },
                         {x, p.wq, p.wk, p.wv, p.rel}, rng);
}

GradCheck correlation_variance_grad(std::mt19937_64& rng) {
  const int C = 4, G = 2, D = 3, H = 6, W = 6;
  const Camera ref = random_camera(rng, H, W, 0.0, 0.0);
  const std::vector<Camera> srcs = {random_camera(rng, H, W, 0.05, 0.3),
                                    random_camera(rng, H, W, 0.05, 0.3)};
  Tensor hyp({D, H, W});
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  for (int d = 0; d < D; ++d)
    for (int p = 0; p < H * W; ++p) hyp[d * H * W + p] = 6.0 + 1.2 * d + jitter(rng);
  const geometry::DepthHypothesisField field{hyp, 0};
  std::vector<geometry::SamplingGrid> grids;
  for (const Camera& s : srcs) grids.push_back(geometry::depth_field_grid(ref, s, field, {H, W}));
  Var f_ref = parameter(random_tensor(rng, {C, H, W}));
  Var f_s0 = parameter(random_tensor(rng, {C, H, W}));
  Var f_s1 = parameter(random_tensor(rng, {C, H, W}));
  const Tensor w = random_tensor(rng, {G, D, H, W});
  auto f = [&] {
    std::vector<Var> vols = {cost_volume::correlation_volume(f_ref, f_s0, grids[0], G),
                             cost_volume::correlation_volume(f_ref, f_s1, grids[1], G)};
    return dot_with(cost_volume::variance_aggregate(vols, {grids[0].valid, grids[1].valid}), w);
  };
  return check_gradients(f, {f_ref, f_s0, f_s1}, rng);
}

GradCheck regress_regularize_grad(std::mt19937_64& rng) {
  const int G = 2, D = 4, H = 6, W = 6;
  nn::ParamStore store;
  const regression::Regularizer reg(store, "reg", G, 8, rng);
  // Perturb biases away from zero so every path carries gradient.
  for (auto& [name, v] : store.entries()) {
    if (v.value().rank() == 1) v.mutable_value() = random_tensor(rng, v.shape(), -0.1, 0.1);
  }
  Var cost = parameter(random_tensor(rng, {G, D, H, W}, 0.0, 2.0));
  Tensor hyp({D, H, W});
  std::uniform_real_distribution<double> jitter(-5.0, 5.0);
  for (int d = 0; d < D; ++d)
    for (int p = 0; p < H * W; ++p) hyp[d * H * W + p] = 425.0 + 170.0 * d + jitter(rng);
  const Tensor w_depth = random_tensor(rng, {H, W});
  const Tensor w_sigma = random_tensor(rng, {H, W});
  auto f = [&] {
    const Var probs = reg(cost);
    const Var depth = regression::regress_depth(probs, hyp);
    const Var sigma = regression::estimate_uncertainty(probs, hyp, depth);
    return nn::add(dot_with(depth, w_depth), dot_with(sigma, w_sigma));
  };
  std::vector<Var> inputs = {cost};
  for (auto& [name, v] : store.entries()) inputs.push_back(v);
  return check_gradients(f, inputs, rng, 24);
}

GradCheck position_loss_grad(std::mt19937_64& rng) {
  const int C = 4, H = 6, W = 6;
  const Camera ref = random_camera(rng, H, W, 0.0, 0.0);
  const std::vector<Camera> srcs = {random_camera(rng, H, W, 0.05, 0.3),
                                    random_camera(rng, H, W, 0.05, 0.3)};
  Tensor gt = random_tensor(rng, {H, W}, 6.0, 9.0);
  gt[0] = 0.0;  // one invalid pixel
  Var f_ref = parameter(random_tensor(rng, {C, H, W}));
  Var f_s0 = parameter(random_tensor(rng, {C, H, W}));
  Var f_s1 = parameter(random_tensor(rng, {C, H, W}));
  return check_gradients(
      [&] { return losses::position_loss(f_ref, {f_s0, f_s1}, ref, srcs, gt).value; },
      {f_ref, f_s0, f_s1}, rng);
}

GradCheck neighbor_loss_grad(std::mt19937_64& rng) {
  Var F = parameter(random_tensor(rng, {4, 5, 6}));
  return check_gradients([&] { return losses::neighbor_balance_loss(F, 3); }, {F}, rng);
}

GradCheck feature_loss_grad(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 2.0);
  Var pos = scalar_param(u(rng)), nei = scalar_param(u(rng));
  const double eps = std::uniform_real_distribution<double>(0.001, 0.1)(rng);
  return check_gradients([&] { return losses::feature_loss(pos, nei, eps); }, {pos, nei}, rng);
}

GradCheck depth_loss_grad(std::mt19937_64& rng) {
  std::vector<Var> preds;
  std::vector<Tensor> gts;
  std::uniform_real_distribution<double> offset(0.5, 20.0);
  std::bernoulli_distribution sign(0.5), invalid(0.15);
  for (int s = 0; s < 3; ++s) {
    const int H = 8 >> s, W = 10 >> s;
    Tensor gt = random_tensor(rng, {H, W}, 425.0, 935.0);
    Tensor pred(gt.shape());
    for (std::size_t i = 0; i < gt.size(); ++i) {
      pred[i] = gt[i] + (sign(rng) ? 1.0 : -1.0) * offset(rng);  // keeps |e| away from the kink
      if (invalid(rng)) gt[i] = 0.0;
    }
    preds.push_back(parameter(pred));
    gts.push_back(gt);
  }
  return check_gradients([&] { return losses::depth_loss(preds, gts, {2.0, 1.0, 0.5}).value; },
                         preds, rng);
}

GradCheck multi_metric_grad(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<Var> fea, dep, all;
  for (int s = 0; s < 3; ++s) {
    fea.push_back(scalar_param(u(rng)));
    dep.push_back(scalar_param(u(rng)));
  }
  all = fea;
  all.insert(all.end(), dep.begin(), dep.end());
  const double b1 = u(rng), b2 = u(rng);
  return check_gradients([&] { return losses::multi_metric_loss(fea, dep, b1, b2); }, all, rng);
}

SuiteReport gradients_suite(std::uint64_t seed) {
  SuiteReport r{"gradients", {}, 0.0};
  const std::vector<GradCase> cases = {
      {"local_self_attention", attention_grad},
      {"correlation_variance", correlation_variance_grad},
      {"regress_regularize", regress_regularize_grad},
      {"position_loss", position_loss_grad},
      {"neighbor_balance_loss", neighbor_loss_grad},
      {"feature_loss", feature_loss_grad},
      {"depth_loss", depth_loss_grad},
      {"multi_metric_loss", multi_metric_grad},
  };
  constexpr int kSeeds = 20;
  for (const GradCase& c : cases) {
    double worst = 0.0;
    std::size_t checked = 0;
    std::string where;
    for (int trial = 0; trial < kSeeds; ++trial) {
      std::mt19937_64 rng(trial_seed(seed, "gradients/" + c.name, trial));
      const GradCheck g = c.run(rng);
      checked += g.checked;
      if (g.max_rel_error >= worst) {
        worst = g.max_rel_error;
        where = "seed " + std::to_string(trial) + " " + g.worst;
      }
    }
    char buf[256];
    std::snprintf(buf, sizeof(buf), "max rel err %.3g over %zu entries, %d seeds (tol 1e-4); worst %s",
                  worst, checked, kSeeds, where.c_str());
    r.checks.push_back({c.name, worst <= 1e-4, buf});
  }
  return r;
}

// -------------------------------------------------------------- spot values

SuiteReport spot_values_suite(std::uint64_t) {
  SuiteReport r{"spot_values", {}, 0.0};
  const Tensor P({2, 1, 1}, {0.5, 0.5});
  const Tensor L({2, 1, 1}, {400.0, 600.0});
  const Var depth = regression::regress_depth(constant(P), L);
  const double d = depth.value()[0];
  const double s = regression::estimate_uncertainty(constant(P), L, depth).value()[0];
  r.checks.push_back({"regress_depth_uniform_400_600", std::abs(d - 500.0) <= 1e-9, fmt("%.12g", d)});
  r.checks.push_back({"estimate_uncertainty_uniform_400_600", std::abs(s - 100.0) <= 1e-9,
                      fmt("%.12g", s)});
  const auto range = regression::adaptive_range(Tensor({1, 1}, {500.0}), Tensor({1, 1}, {100.0}), 1.5,
                                                Tensor({1, 1}, {0.0}), 1.0, 1e6);
  const double lo = range.lo[0], hi = range.hi[0];
  r.checks.push_back({"adaptive_range_lambda_1.5",
                      std::abs(lo - 350.0) <= 1e-9 && std::abs(hi - 650.0) <= 1e-9,
                      fmt("[%.12g, %.12g]", lo, hi)});
  return r;
}

// ----------------------------------------------------------------- geometry

Camera translation_camera(const Vec3& t) {
  Camera c;
  c.K = Eigen::Vector3d(100.0, 100.0, 1.0).asDiagonal();
  c.t = t;
  c.depth_min = 1.0;
  c.depth_max = 100.0;
  return c;
}

SuiteReport geometry_suite(std::uint64_t seed) {
  SuiteReport r{"geometry", {}, 0.0};
  std::mt19937_64 rng(nn::derive_seed(seed, "geometry"));

  double ident = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Camera c = random_camera(rng, 64, 80, 0.5, 100.0);
    const double d = std::uniform_real_distribution<double>(1e-2, 1e4)(rng);
    ident = std::max(ident, (geometry::plane_homography(c, c, d) - Mat3::Identity()).cwiseAbs().maxCoeff());
  }
  r.checks.push_back({"homography_identity", ident <= 1e-9, fmt("max |H - I| %.3g (tol 1e-9)", ident)});

  // Source translated by t = (0.5, 0, 0) under X_cam = R X + t, and the
  // same source described by its camera center instead.
  const Camera ref = translation_camera(Vec3::Zero());
  const Camera by_t = translation_camera(Vec3(0.5, 0.0, 0.0));
  const Camera by_center = translation_camera(Vec3(-0.5, 0.0, 0.0));
  double shift_t = 0.0, shift_c = 0.0;
  for (const Vec2& uv : {Vec2(0, 0), Vec2(10, -4), Vec2(-7.5, 3.25)}) {
    const Vec3 a = geometry::plane_homography(ref, by_t, 50.0) * uv.homogeneous();
    const Vec3 b = geometry::plane_homography(ref, by_center, 50.0) * uv.homogeneous();
    shift_t = std::max(shift_t, (a.hnormalized() - (uv + Vec2(1.0, 0.0))).cwiseAbs().maxCoeff());
    shift_c = std::max(shift_c, (b.hnormalized() - (uv + Vec2(-1.0, 0.0))).cwiseAbs().maxCoeff());
  }
  r.checks.push_back({"homography_translation_t", shift_t <= 1e-9,
                      fmt("t=(0.5,0,0), f=100, d=50 -> u+1; max err %.3g", shift_t)});
  r.checks.push_back({"homography_translation_center", shift_c <= 1e-9,
                      fmt("center=(0.5,0,0), f=100, d=50 -> u-1; max err %.3g", shift_c)});

  double rot = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Camera a = random_camera(rng, 64, 80, 0.3, 1.0);
    const Camera b = random_camera(rng, 64, 80, 0.3, 1.0);
    const Mat3 R_rel = b.R * a.R.transpose();
    const Mat3 pure = b.K * R_rel * a.K.inverse();
    rot = std::max(rot, (geometry::plane_homography(a, b, 1e9) - pure).cwiseAbs().maxCoeff());
  }
  r.checks.push_back({"homography_rotation_limit", rot <= 1e-6,
                      fmt("max |H(1e9) - K R K^-1| %.3g (tol 1e-6)", rot)});

  double trip = 0.0;
  constexpr int kConfigs = 10000;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < kConfigs; ++i) {
    const Camera a = random_camera(rng, 64, 80, 0.6, 200.0);
    const Camera b = random_camera(rng, 64, 80, 0.6, 200.0);
    const Vec2 x(u01(rng) * 79.0, u01(rng) * 63.0);
    const double depth = 100.0 + 900.0 * u01(rng);
    const auto p = geometry::project_pixel(a, b, x, depth, {64, 80});
    if (!p.in_front) continue;
    const Vec3 X = a.back_project(x, depth);
    const Vec3 Y = b.back_project(p.uv, p.src_depth);
    trip = std::max(trip, (X - Y).norm());
  }
  r.checks.push_back({"project_back_project", trip < 1e-6,
                      fmt("max 3D error %.3g over 10000 configurations (tol 1e-6)", trip)});
  return r;
}

// -------------------------------------------------------------- fusion/eval

SuiteReport fusion_eval_suite(std::uint64_t seed) {
  SuiteReport r{"fusion_eval", {}, 0.0};
  synthetic::SceneSpec spec;
  spec.views = 5;
  synthetic::Primitive plane;
  plane.center = Vec3(0, 0, 700);
  plane.normal = Vec3(0.1, -0.05, -1).normalized();
  spec.primitives = {plane};
  const auto scene = synthetic::generate_synthetic_scene(spec, nn::derive_seed(seed, "fusion_eval"));

  fusion::FusionThresholds th;
  std::vector<Mask> photo;
  for (const Tensor& d : scene.depths) {
    photo.push_back(fusion::photometric_filter(d, Tensor(d.shape(), 1.0), th.prob_min));
  }
  const auto masks = fusion::geometric_filter(scene.depths, scene.cameras, th, &photo);
  const PointCloud fused = fusion::fuse(scene.depths, scene.images, scene.cameras, masks, th);

  // Ground truth: every pixel whose surface point projects inside at least
  // min_views - 1 other views (the plane is unbounded, so nothing occludes).
  PointCloud gt;
  const int H = spec.height, W = spec.width;
  for (int v = 0; v < scene.view_count(); ++v) {
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const double z = scene.depths[v].at(i, j);
        if (!(z > 0.0)) continue;
        const Vec3 X = scene.cameras[v].back_project(Vec2(j, i), z);
        int seen = 1;
        for (int w = 0; w < scene.view_count(); ++w) {
          if (w == v) continue;
          const Vec3 p = scene.cameras[w].K * scene.cameras[w].to_camera(X);
          const double x = p.x() / p.z(), y = p.y() / p.z();
          if (p.z() > 0 && x >= 0 && y >= 0 && x <= W - 1 && y <= H - 1) ++seen;
        }
        if (seen >= th.min_views) gt.points.push_back(X);
      }
    }
  }
  const double range = spec.depth_max - spec.depth_min;
  const double tau = 0.01 * range;
  if (fused.empty() || gt.empty()) {
    r.checks.push_back({"plane_round_trip", false, "empty cloud"});
  } else {
    const auto rep = evalmetrics::evaluate(fused, gt, 20.0, tau);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "acc %.3g comp %.3g F %.6g at tau %.3g (%zu fused, %zu gt points)",
                  rep.accuracy_mm, rep.completeness_mm, rep.f_score_pct, tau, fused.size(), gt.size());
    r.checks.push_back({"plane_round_trip",
                        rep.accuracy_mm < 1e-3 && rep.completeness_mm < 1e-3 && rep.f_score_pct == 100.0,
                        buf});
  }

  std::mt19937_64 rng(nn::derive_seed(seed, "kdtree"));
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vec3> A(100), B(100);
    for (auto& p : A) p = Vec3(u(rng), u(rng), u(rng));
    for (auto& p : B) p = Vec3(u(rng), u(rng), u(rng));
    const auto tree = evalmetrics::nearest_neighbor_distances(A, B);
    const auto brute = brute_force_nn(A, B);
    for (std::size_t i = 0; i < A.size(); ++i) mismatches += tree[i] != brute[i];
  }
  r.checks.push_back({"kdtree_equals_brute_force", mismatches == 0,
                      fmt("%.0f mismatches over 100 pairs of 100-point clouds",
                          static_cast<double>(mismatches))});
  return r;
}

}  // namespace

bool SuiteReport::passed() const {
  return !checks.empty() &&
         std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

std::string SuiteReport::text() const {
  std::string out;
  for (const Check& c : checks) {
    out += (c.pass ? "PASS " : "FAIL ") + suite + "/" + c.name + ": " + c.detail + "\n";
  }
  return out;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"attention", "cost_volume", "gradients",
                                                 "spot_values", "geometry", "fusion_eval"};
  return names;
}

SuiteReport run_suite(const std::string& name, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteReport r;
  if (name == "attention") r = attention_suite(seed);
  else if (name == "cost_volume") r = cost_volume_suite(seed);
  else if (name == "gradients") r = gradients_suite(seed);
  else if (name == "spot_values") r = spot_values_suite(seed);
  else if (name == "geometry") r = geometry_suite(seed);
  else if (name == "fusion_eval") r = fusion_eval_suite(seed);
  else throw std::invalid_argument("unknown verification suite '" + name + "'");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Tensor attention_oracle(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                        const Tensor& rel, int k) {
  const int d_in = x.dim(0), H = x.dim(1), W = x.dim(2), d_out = wq.dim(0);
  const int half = k / 2;
  Tensor y({d_out, H, W});
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      // Step 1: the block B around (i, j) and the offsets inside it.
      std::vector<int> as, bs;
      for (int a = i - half; a <= i + half; ++a) {
        for (int b = j - half; b <= j + half; ++b) {
          if (a < 0 || a >= H || b < 0 || b >= W) continue;
          as.push_back(a);
          bs.push_back(b);
        }
      }
      // Step 2: query of (i, j), keys and values of the block.
      std::vector<double> q(d_out, 0.0);
      for (int o = 0; o < d_out; ++o)
        for (int c = 0; c < d_in; ++c) q[o] += wq.at(o, c) * x.at(c, i, j);
      const std::size_t n = as.size();
      std::vector<std::vector<double>> keys(n, std::vector<double>(d_out, 0.0)), vals = keys;
      for (std::size_t m = 0; m < n; ++m) {
        for (int o = 0; o < d_out; ++o) {
          for (int c = 0; c < d_in; ++c) {
            keys[m][o] += wk.at(o, c) * x.at(c, as[m], bs[m]);
            vals[m][o] += wv.at(o, c) * x.at(c, as[m], bs[m]);
          }
        }
      }
      // Step 3: query-key and query-offset inner products, then softmax.
      std::vector<double> logit(n, 0.0);
      for (std::size_t m = 0; m < n; ++m) {
        for (int o = 0; o < d_out; ++o) {
          const double r = rel.at(as[m] - i + k - 1, bs[m] - j + k - 1, o);
          logit[m] += q[o] * keys[m][o] + q[o] * r;
        }
      }
      const double top = *std::max_element(logit.begin(), logit.end());
      double z = 0.0;
      for (double& l : logit) z += (l = std::exp(l - top));
      // Step 4: weighted sum of the values.
      for (std::size_t m = 0; m < n; ++m)
        for (int o = 0; o < d_out; ++o) y.at(o, i, j) += logit[m] / z * vals[m][o];
    }
  }
  return y;
}

Tensor cost_volume_oracle(const Tensor& F_ref, const Tensor& F_src, const Camera& ref,
                          const Camera& src, const Tensor& depths, int groups, Mask* valid) {
  const int C = F_ref.dim(0), H = F_ref.dim(1), W = F_ref.dim(2);
  const int Hs = F_src.dim(1), Ws = F_src.dim(2);
  const int D = depths.dim(0);
  const int per = C / groups;
  Tensor out({groups, D, H, W});
  Mask m({D, H, W});
  const Mat3 Kinv = ref.K.inverse();
  for (int d = 0; d < D; ++d) {
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const double z = depths.at(d, i, j);
        const Vec3 X_ref = z * (Kinv * Vec3(j, i, 1.0));
        const Vec3 X_world = ref.R.transpose() * (X_ref - ref.t);
        const Vec3 p = src.K * (src.R * X_world + src.t);
        if (!(p.z() > 0.0)) continue;
        const double u = p.x() / p.z(), v = p.y() / p.z();
        std::vector<double> sampled(C);
        bool ok = true;
        for (int c = 0; c < C && ok; ++c) {
          ok = bilinear(F_src.data() + static_cast<std::size_t>(c) * Hs * Ws, Hs, Ws, u, v, sampled[c]);
        }
        if (!ok) continue;
        m.bits[(static_cast<std::size_t>(d) * H + i) * W + j] = 1;
        for (int g = 0; g < groups; ++g) {
          double s = 0.0;
          for (int c = g * per; c < (g + 1) * per; ++c) s += F_ref.at(c, i, j) * sampled[c];
          out.at(g, d, i, j) = s / per;
        }
      }
    }
  }
  if (valid) *valid = std::move(m);
  return out;
}

Tensor variance_oracle(const std::vector<Tensor>& volumes, const std::vector<Mask>& valid) {
  Tensor out(volumes.at(0).shape());
  const int G = out.dim(0);
  const std::size_t cells = out.size() / G;
  for (int g = 0; g < G; ++g) {
    for (std::size_t cell = 0; cell < cells; ++cell) {
      std::vector<double> vals;
      for (std::size_t n = 0; n < volumes.size(); ++n)
        if (valid[n].bits[cell]) vals.push_back(volumes[n][g * cells + cell]);
      if (vals.empty()) continue;
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= vals.size();
      double s = 0.0;
      for (double v : vals) s += (v - mean) * (v - mean);
      out[g * cells + cell] = s / vals.size();
    }
  }
  return out;
}

std::vector<double> brute_force_nn(const std::vector<Vec3>& A, const std::vector<Vec3>& B) {
  std::vector<double> out;
  out.reserve(A.size());
  for (const Vec3& a : A) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& b : B) {
      const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

Mat3 random_rotation(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 axis(n(rng), n(rng), n(rng));
  if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
  const double angle = std::uniform_real_distribution<double>(-max_angle, max_angle)(rng);
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Camera random_camera(std::mt19937_64& rng, int height, int width, double max_angle,
                     double max_offset) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Camera c;
  const double f = width * (1.0 + 0.2 * u(rng));
  c.K << f, 0.0, (width - 1) / 2.0 + 0.05 * width * u(rng), 0.0, f * (1.0 + 0.05 * u(rng)),
      (height - 1) / 2.0 + 0.05 * height * u(rng), 0.0, 0.0, 1.0;
  c.R = random_rotation(rng, max_angle);
  c.t = max_offset * Vec3(u(rng), u(rng), u(rng));
  c.depth_min = 1.0;
  c.depth_max = 2000.0;
  return c;
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheck check_gradients(const std::function<Var()>& f, const std::vector<Var>& inputs,
                          std::mt19937_64& rng, std::size_t max_entries, double h) {
  for (Var v : inputs) v.zero_grad();
  backward(f());
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Var v = inputs[k];
    const std::size_t n = v.value().size();
    std::vector<std::size_t> entries(n);
    for (std::size_t e = 0; e < n; ++e) entries[e] = e;
    if (max_entries > 0 && n > max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries);
    }
    for (std::size_t e : entries) {
      const double analytic = v.has_grad() ? v.grad()[e] : 0.0;
      const double saved = v.value()[e];
      double fp, fm;
      {
        NoGradGuard guard;
        v.mutable_value()[e] = saved + h;
        fp = f().item();
        v.mutable_value()[e] = saved - h;
        fm = f().item();
        v.mutable_value()[e] = saved;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = relative_error(analytic, numeric);
      ++out.checked;
      if (err >= out.max_rel_error) {
        out.max_rel_error = err;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "input[%zu][%zu]: %.9g vs %.9g", k, e, analytic, numeric);
        out.worst = buf;
      }
    }
  }
  for (Var v : inputs) v.zero_grad();
  return out;
}

}  // namespace atv::verify
