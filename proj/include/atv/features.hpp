#pragma once

#include <array>
#include <random>
#include <string>

#include "atv/nn.hpp"

namespace atv::features {

/// Parameters of one masked local self-attention block.
///   wq, wk, wv : d_out x d_in (1x1 projections, no bias)
///   rel        : (2k-1) x (2k-1) x d_out relative-position table, indexed
///                by (row offset + k - 1, col offset + k - 1)
struct AttentionBlockParams {
  Var wq, wk, wv, rel;
  int window = 3;

  int d_in() const { return wq.value().dim(1); }
  int d_out() const { return wq.value().dim(0); }
  void validate() const;

  /// Registers Kaiming-uniform projections and a zero table.
  static AttentionBlockParams create(nn::ParamStore& store, const std::string& prefix, int d_in,
                                     int d_out, int window, std::mt19937_64& rng);
};

/// y_ij = sum_{ab in B(ij)} softmax_ab(q_ij . k_ab + q_ij . r_{a-i,b-j}) v_ab
/// over the window centered at (i, j). Out-of-image keys are dropped from
/// the softmax. x: d_in x H x W -> d_out x H x W.
Var local_self_attention(const Var& x, const AttentionBlockParams& params);
Tensor local_self_attention(const Tensor& x, const AttentionBlockParams& params);

/// Softmax weights at pixel (i, j), k*k entries in row-major window order,
/// zero for masked positions. Exposed for invariant checks.
std::vector<double> attention_weights(const Tensor& x, const AttentionBlockParams& params, int i,
                                      int j);

struct FeaturePyramidVar {
  std::array<Var, 3> maps;  // index = scale s (0 finest, 2 coarsest)
};

struct FeaturePyramid {
  std::array<Tensor, 3> maps;
};

struct ExtractorConfig {
  int channels = 32;       // C at every output scale
  int base_channels = 16;  // doubles per encoder level
  int window = 3;          // attention window k
};

/// U-Net style encoder/decoder. Skip connections pass through an attention
/// block before being concatenated with the upsampled decoder path.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(nn::ParamStore& store, const std::string& prefix, const ExtractorConfig& cfg,
                   std::mt19937_64& rng);

  /// image: 3 x H x W with H, W divisible by 4.
  FeaturePyramidVar operator()(const Var& image) const;
  FeaturePyramid extract(const Tensor& image) const;
  const ExtractorConfig& config() const { return cfg_; }

 private:
  ExtractorConfig cfg_;
  nn::Conv2d enc0_, enc1_, enc2_;
  nn::Conv2d out2_, up1_, dec1_, out1_, up0_, dec0_, out0_;
  AttentionBlockParams att0_, att1_;
};

}  // namespace atv::features
