#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "atv/autograd.hpp"

namespace atv::nn {

// Elementwise / structural ops. All maps are channel-major.
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var elu(const Var& a);
Var sum(const Var& a);
/// Sum_i weights[i] * scalars[i].
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights);
/// Concatenates along axis 0.
Var concat(const std::vector<Var>& parts);

/// 2D convolution, x: C x H x W, w: O x C x k x k, b: O. Zero padding k/2.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1);
/// 3D convolution, x: C x D x H x W, w: O x C x k x k x k, b: O or undefined
/// for no bias. Zero padding k/2.
Var conv3d(const Var& x, const Var& w, const Var& b, int stride = 1);

/// Nearest upsampling to an explicit size; output pixel i reads input i/2.
Var upsample_nearest2d(const Var& x, int height, int width);
Var upsample_nearest3d(const Var& x, int depth, int height, int width);

/// Splittable seed source: every component derives its stream from the root
/// seed and a fixed tag.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

/// Ordered, named parameter collection.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor value);
  /// Uniform(-b, b) with b = sqrt(6 / fan_in).
  Var add_kaiming(const std::string& name, Shape shape, int fan_in, std::mt19937_64& rng);
  Var add_zeros(const std::string& name, Shape shape);

  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Conv2d layer parameters registered under `prefix`.
struct Conv2d {
  Var weight, bias;
  int stride = 1;
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& prefix, int in, int out, int kernel, int stride,
         std::mt19937_64& rng);
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride); }
};

struct Conv3d {
  Var weight, bias;
  int stride = 1;
  Conv3d() = default;
  Conv3d(ParamStore& store, const std::string& prefix, int in, int out, int kernel, int stride,
         std::mt19937_64& rng, bool with_bias = true);
  Var operator()(const Var& x) const { return conv3d(x, weight, bias, stride); }
};

}  // namespace atv::nn
