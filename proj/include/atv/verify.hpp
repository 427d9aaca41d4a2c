#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "atv/autograd.hpp"
#include "atv/geometry.hpp"

// Reference implementations written independently of the library code they
// check, plus the fast verification suites run by `atv verify` and the
// acceptance binary.
namespace atv::verify {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;
  double seconds = 0.0;
  bool passed() const;
  /// One "PASS|FAIL suite/check: detail" line per check.
  std::string text() const;
};

/// attention, cost_volume, gradients, spot_values, geometry, fusion_eval.
const std::vector<std::string>& suite_names();
/// Throws std::invalid_argument for an unknown suite.
SuiteReport run_suite(const std::string& name, std::uint64_t seed);

// Oracles

/// Direct evaluation of the windowed attention formula with plain loops.
/// x: d_in x H x W, wq/wk/wv: d_out x d_in, rel: (2k-1) x (2k-1) x d_out.
Tensor attention_oracle(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                        const Tensor& rel, int k);

/// Per-pixel loop: back-project each reference pixel to each plane depth,
/// project into the source, sample bilinearly, correlate groupwise.
/// Returns G x D x H x W (zero where the sample falls outside the map) and
/// fills `valid` (D x H x W).
Tensor cost_volume_oracle(const Tensor& F_ref, const Tensor& F_src, const geometry::Camera& ref,
                          const geometry::Camera& src, const Tensor& depths, int groups,
                          Mask* valid);

/// Per-cell variance over the views valid at that cell.
Tensor variance_oracle(const std::vector<Tensor>& volumes, const std::vector<Mask>& valid);

/// Exhaustive nearest-neighbour distances from every point of A to B.
std::vector<double> brute_force_nn(const std::vector<geometry::Vec3>& A,
                                   const std::vector<geometry::Vec3>& B);

// Random fixtures

geometry::Mat3 random_rotation(std::mt19937_64& rng, double max_angle);
/// Camera looking down +z near the world origin; f in [0.8, 1.2] * width.
geometry::Camera random_camera(std::mt19937_64& rng, int height, int width, double max_angle,
                               double max_offset);
Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0);

// Gradient checking

/// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "input[i][entry]: analytic vs numeric"
};

/// Compares backward() of the scalar f() against central differences with
/// step h for every entry of each input (or `max_entries` of them, drawn
/// from rng). Inputs are perturbed in place and restored.
GradCheck check_gradients(const std::function<Var()>& f, const std::vector<Var>& inputs,
                          std::mt19937_64& rng, std::size_t max_entries = 0, double h = 1e-5);

}  // namespace atv::verify
