#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "atv/features.hpp"
#include "atv/io.hpp"
#include "atv/losses.hpp"
#include "atv/regression.hpp"

namespace atv::pipeline {

/// Non-finite loss or gradient. The CLI maps it to exit status 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetworkConfig {
  std::array<int, 3> depth_counts = {8, 16, 32};  // hypotheses per scale s (0 finest)
  double lambda = 1.5;
  int groups = 8;
  int channels = 32;
  int base_channels = 16;
  int window = 3;
  int regularizer_channels = 8;
  losses::LossWeights loss;
  double learning_rate = 0.0016;
  int source_views = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One multi-view input: view 0 is the reference.
struct ViewSet {
  std::vector<Tensor> images;  // 3 x H x W each
  std::vector<geometry::Camera> cameras;
};

struct ForwardOutput {
  std::array<Var, 3> depth;   // H_s x W_s, index s (0 finest)
  std::array<Var, 3> probs;   // D_s x H_s x W_s
  std::array<Tensor, 3> sigma;
  std::array<geometry::DepthHypothesisField, 3> hypotheses;
  /// Interval fields (at the coarser resolution) the scale-s hypotheses were
  /// sampled from; empty for the coarsest scale.
  std::array<regression::IntervalField, 3> ranges;
  std::vector<features::FeaturePyramidVar> features;  // per view
  std::array<std::vector<geometry::Camera>, 3> cameras;  // per scale, per view
};

class Network {
 public:
  explicit Network(const NetworkConfig& cfg);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  ForwardOutput forward(const ViewSet& views) const;

  const NetworkConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  io::NamedTensors state() const;
  /// Copies values for every parameter; throws io::DataError on missing
  /// names or shape mismatches. Entries prefixed "adam." are ignored.
  void load_state(const io::NamedTensors& tensors);

 private:
  NetworkConfig cfg_;
  nn::ParamStore store_;
  features::FeatureExtractor extractor_;
  std::array<regression::Regularizer, 3> regularizers_;
};

/// First-order adaptive-moment optimizer state.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor> m, v;

  /// Entries "adam.step", "adam.m.<param>", "adam.v.<param>".
  io::NamedTensors state(const nn::ParamStore& params) const;
  /// Missing moment entries leave the state freshly initialized.
  void load_state(const nn::ParamStore& params, const io::NamedTensors& tensors);
};

void adam_update(nn::ParamStore& params, AdamState& state, double learning_rate);

struct TrainSample {
  ViewSet views;
  Tensor gt_depth;  // reference view, full resolution
};

struct LossBreakdown {
  std::array<double, 3> position{}, neighbor{}, feature{}, depth{};  // per scale, unweighted by beta
  double total = 0.0;
  bool empty = false;  // some term had an empty valid set
};

/// Multi-metric loss of one forward pass.
Var training_loss(const ForwardOutput& out, const Tensor& gt_depth, const NetworkConfig& cfg,
                  LossBreakdown* breakdown = nullptr);

/// Forward, loss averaged over the batch, backward, optimizer step. Throws
/// NumericalError (parameters untouched) on a non-finite loss or gradient.
LossBreakdown train_step(Network& net, AdamState& opt, const std::vector<TrainSample>& batch);

/// Names of parameters whose gradient is identically zero after one
/// backward pass of the training loss on `sample`.
std::vector<std::string> dead_parameters(Network& net, const TrainSample& sample);

struct DepthEstimate {
  Tensor depth;       // finest scale
  Tensor confidence;  // max probability at the finest scale
};

DepthEstimate infer(const Network& net, const ViewSet& views);

/// Finest-scale mean absolute error over pixels with positive ground truth.
double mean_abs_error(const Tensor& depth, const Tensor& gt);

}  // namespace atv::pipeline
