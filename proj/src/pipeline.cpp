#include "atv/pipeline.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "atv/cost_volume.hpp"

namespace atv::pipeline {

void NetworkConfig::validate() const {
  for (int d : depth_counts) {
    if (d < 2) throw std::invalid_argument("network config: every depth count must be >= 2");
  }
  if (!(lambda > 0.0)) throw std::invalid_argument("network config: lambda must be positive");
  if (groups < 1 || channels < 1 || channels % groups != 0) {
    throw std::invalid_argument("network config: channels (" + std::to_string(channels) +
                                ") must be divisible by groups (" + std::to_string(groups) + ")");
  }
  if (base_channels < 1 || regularizer_channels < 1) {
    throw std::invalid_argument("network config: channel counts must be positive");
  }
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("network config: window must be odd");
  if (learning_rate < 0.0) throw std::invalid_argument("network config: learning rate must be >= 0");
  if (source_views < 1) throw std::invalid_argument("network config: need at least one source view");
  loss.validate();
}

Network::Network(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(nn::derive_seed(cfg_.seed, "init"));
  features::ExtractorConfig ec;
  ec.channels = cfg_.channels;
  ec.base_channels = cfg_.base_channels;
  ec.window = cfg_.window;
  extractor_ = features::FeatureExtractor(store_, "features", ec, rng);
  for (int s = 0; s < 3; ++s) {
    regularizers_[s] = regression::Regularizer(store_, "reg" + std::to_string(s), cfg_.groups,
                                               cfg_.regularizer_channels, rng);
  }
}

ForwardOutput Network::forward(const ViewSet& views) const {
  const auto& imgs = views.images;
  const auto& cams = views.cameras;
  if (imgs.size() < 2) throw std::invalid_argument("forward: need a reference and a source view");
  if (cams.size() != imgs.size()) throw std::invalid_argument("forward: one camera per image required");
  if (imgs[0].rank() != 3 || imgs[0].dim(0) != 3) {
    throw ShapeError("forward: images must be 3 x H x W, got " + shape_str(imgs[0].shape()));
  }
  const int H = imgs[0].dim(1), W = imgs[0].dim(2);
  for (const Tensor& img : imgs) {
    if (img.shape() != imgs[0].shape()) throw ShapeError("forward: all images must share one size");
  }
  if (H % 4 != 0 || W % 4 != 0) {
    throw ShapeError("forward: image size " + std::to_string(H) + "x" + std::to_string(W) +
                     " is not divisible by 4");
  }
  for (const geometry::Camera& c : cams) c.validate();

  const std::size_t V = imgs.size();
  ForwardOutput out;
  for (const Tensor& img : imgs) out.features.push_back(extractor_(constant(img)));
  for (int s = 0; s < 3; ++s)
    for (const geometry::Camera& c : cams) out.cameras[s].push_back(geometry::scale_camera(c, s));

  const geometry::Camera& ref = cams[0];
  for (int s = 2; s >= 0; --s) {
    const geometry::ImageSize size{H >> s, W >> s};
    const int D = cfg_.depth_counts[s];
    geometry::DepthHypothesisField hyp;
    if (s == 2) {
      hyp = geometry::sample_uniform_depths(ref.depth_min, ref.depth_max, D, size, s);
    } else {
      const Tensor spacing = regression::hypothesis_spacing(out.hypotheses[s + 1]);
      out.ranges[s] = regression::adaptive_range(out.depth[s + 1].value(), out.sigma[s + 1],
                                                 cfg_.lambda, spacing, ref.depth_min, ref.depth_max);
      hyp = regression::sample_adaptive_depths(out.ranges[s], D, size, s);
    }

    const geometry::Camera& ref_s = out.cameras[s][0];
    const Var& F_ref = out.features[0].maps[s];
    std::vector<Var> volumes;
    std::vector<Mask> masks;
    for (std::size_t v = 1; v < V; ++v) {
      const geometry::Camera& src_s = out.cameras[s][v];
      geometry::SamplingGrid grid;
      if (s == 2) {
        // Spatially constant hypotheses: one homography per plane.
        std::vector<geometry::Mat3> Hs;
        const std::size_t plane = static_cast<std::size_t>(size.height) * size.width;
        for (int d = 0; d < D; ++d) {
          Hs.push_back(geometry::plane_homography(ref_s, src_s, hyp.values[d * plane]));
        }
        grid = geometry::homography_grid(Hs, size, size);
      } else {
        grid = geometry::depth_field_grid(ref_s, src_s, hyp, size);
      }
      volumes.push_back(
          cost_volume::correlation_volume(F_ref, out.features[v].maps[s], grid, cfg_.groups));
      masks.push_back(grid.valid);
    }
    const Var cost = cost_volume::variance_aggregate(volumes, masks);
    out.probs[s] = regularizers_[s](cost);
    out.depth[s] = regression::regress_depth(out.probs[s], hyp.values);
    // Hypotheses of the next scale do not carry gradients.
    out.sigma[s] = regression::estimate_uncertainty(constant(out.probs[s].value()), hyp.values,
                                                    constant(out.depth[s].value()))
                       .value();
    for (std::size_t x = 0; x < out.sigma[s].size(); ++x) {
      if (!std::isfinite(out.depth[s].value()[x]) || !std::isfinite(out.sigma[s][x])) {
        throw NumericalError("non-finite depth at scale " + std::to_string(s));
      }
    }
    out.hypotheses[s] = std::move(hyp);
  }
  return out;
}

io::NamedTensors Network::state() const {
  io::NamedTensors out;
  for (const auto& [name, var] : store_.entries()) out.emplace_back(name, var.value());
  return out;
}

void Network::load_state(const io::NamedTensors& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) {
    if (name.rfind("adam.", 0) == 0) continue;
    if (!store_.contains(name)) throw io::DataError("checkpoint has unknown parameter " + name);
    by_name[name] = &t;
  }
  for (auto& [name, var] : store_.entries()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw io::DataError("checkpoint is missing parameter " + name);
    if (it->second->shape() != var.shape()) {
      throw io::DataError("checkpoint parameter " + name + " has shape " +
                          shape_str(it->second->shape()) + ", expected " + shape_str(var.shape()));
    }
    var.mutable_value() = *it->second;
  }
}

io::NamedTensors AdamState::state(const nn::ParamStore& params) const {
  io::NamedTensors out;
  out.emplace_back("adam.step", Tensor({1}, static_cast<double>(step)));
  if (m.size() != params.entries().size()) return out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    out.emplace_back("adam.m." + params.entries()[i].first, m[i]);
    out.emplace_back("adam.v." + params.entries()[i].first, v[i]);
  }
  return out;
}

void AdamState::load_state(const nn::ParamStore& params, const io::NamedTensors& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  step = 0;
  m.clear();
  v.clear();
  auto it = by_name.find("adam.step");
  if (it == by_name.end()) return;
  step = static_cast<std::int64_t>((*it->second)[0]);
  for (const auto& [name, var] : params.entries()) {
    auto mi = by_name.find("adam.m." + name);
    auto vi = by_name.find("adam.v." + name);
    if (mi == by_name.end() || vi == by_name.end()) {
      throw io::DataError("checkpoint optimizer state is missing moments for " + name);
    }
    if (mi->second->shape() != var.shape() || vi->second->shape() != var.shape()) {
      throw io::DataError("checkpoint optimizer moments for " + name + " have the wrong shape");
    }
    m.push_back(*mi->second);
    v.push_back(*vi->second);
  }
}

void adam_update(nn::ParamStore& params, AdamState& st, double lr) {
  auto& entries = params.entries();
  if (st.m.size() != entries.size()) {
    st.m.clear();
    st.v.clear();
    for (const auto& [name, var] : entries) {
      st.m.emplace_back(var.shape(), 0.0);
      st.v.emplace_back(var.shape(), 0.0);
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Var& p = entries[i].second;
    Tensor& m = st.m[i];
    Tensor& v = st.v[i];
    Tensor& value = p.mutable_value();
    const bool has = p.has_grad();
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = has ? p.grad()[k] : 0.0;
      m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g;
      v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g * g;
      value[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
    }
  }
}

Var training_loss(const ForwardOutput& out, const Tensor& gt_depth, const NetworkConfig& cfg,
                  LossBreakdown* bd) {
  const losses::LossWeights& lw = cfg.loss;
  std::vector<Var> fea, dep;
  bool empty = false;
  for (int s = 0; s < 3; ++s) {
    const Tensor gt = losses::downsample_depth(gt_depth, s);
    const Var& F_ref = out.features[0].maps[s];
    if (lw.beta1 > 0.0) {
      std::vector<Var> srcs;
      std::vector<geometry::Camera> src_cams;
      for (std::size_t v = 1; v < out.features.size(); ++v) {
        srcs.push_back(out.features[v].maps[s]);
        src_cams.push_back(out.cameras[s][v]);
      }
      const losses::LossTerm pos =
          losses::position_loss(F_ref, srcs, out.cameras[s][0], src_cams, gt);
      const Var nei = losses::neighbor_balance_loss(F_ref, lw.block);
      fea.push_back(losses::feature_loss(pos.value, nei, lw.epsilon));
      empty = empty || pos.empty;
      if (bd) {
        bd->position[s] = pos.value.item();
        bd->neighbor[s] = nei.item();
        bd->feature[s] = fea.back().item();
      }
    } else {
      // Feature-wise term disabled: skip its graph entirely.
      fea.push_back(constant(Tensor({1}, 0.0)));
    }
    const losses::LossTerm d = losses::depth_loss({out.depth[s]}, {gt}, {lw.scale_weights[s]});
    empty = empty || d.empty;
    dep.push_back(d.value);
    if (bd) bd->depth[s] = d.value.item();
  }
  Var total = losses::multi_metric_loss(fea, dep, lw.beta1, lw.beta2);
  if (bd) {
    bd->total = total.item();
    bd->empty = empty;
  }
  return total;
}

namespace {

bool gradients_finite(const nn::ParamStore& params) {
  for (const auto& [name, var] : params.entries()) {
    if (!var.has_grad()) continue;
    for (double g : var.grad().values())
      if (!std::isfinite(g)) return false;
  }
  return true;
}

}  // namespace

LossBreakdown train_step(Network& net, AdamState& opt, const std::vector<TrainSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const NetworkConfig& cfg = net.config();
  net.params().zero_grad();
  LossBreakdown acc;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const TrainSample& sample : batch) {
    LossBreakdown bd;
    const Var loss = training_loss(net.forward(sample.views), sample.gt_depth, cfg, &bd);
    if (!std::isfinite(bd.total)) {
      net.params().zero_grad();
      throw NumericalError("non-finite training loss; step aborted without update");
    }
    backward(nn::scale(loss, w));
    for (int s = 0; s < 3; ++s) {
      acc.position[s] += w * bd.position[s];
      acc.neighbor[s] += w * bd.neighbor[s];
      acc.feature[s] += w * bd.feature[s];
      acc.depth[s] += w * bd.depth[s];
    }
    acc.total += w * bd.total;
    acc.empty = acc.empty || bd.empty;
  }
  if (!gradients_finite(net.params())) {
    net.params().zero_grad();
    throw NumericalError("non-finite gradient; step aborted without update");
  }
  adam_update(net.params(), opt, cfg.learning_rate);
  net.params().zero_grad();
  return acc;
}

std::vector<std::string> dead_parameters(Network& net, const TrainSample& sample) {
  net.params().zero_grad();
  backward(training_loss(net.forward(sample.views), sample.gt_depth, net.config()));
  std::vector<std::string> dead;
  for (const auto& [name, var] : net.params().entries()) {
    bool any = false;
    if (var.has_grad())
      for (double g : var.grad().values()) any = any || g != 0.0;
    if (!any) dead.push_back(name);
  }
  net.params().zero_grad();
  return dead;
}

DepthEstimate infer(const Network& net, const ViewSet& views) {
  NoGradGuard guard;
  const ForwardOutput out = net.forward(views);
  return DepthEstimate{out.depth[0].value(), regression::confidence(out.probs[0].value())};
}

double mean_abs_error(const Tensor& depth, const Tensor& gt) {
  if (!depth.same_shape(gt)) throw ShapeError("mean_abs_error: shapes differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] > 0.0) {
      sum += std::abs(depth[i] - gt[i]);
      ++n;
    }
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace atv::pipeline
