#pragma once

#include <string>
#include <vector>

#include "specalign/core/random.hpp"
#include "specalign/core/tensor.hpp"

namespace specalign {

/// A learnable tensor. `grad` is allocated only while the tensor is trainable.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = false;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {}

  void set_trainable(bool on);
  void zero_grad() {
    if (trainable) grad.setZero();
  }
  long long size() const { return static_cast<long long>(value.size()); }
};

double gelu(double x);
double gelu_grad(double x);
Mat gelu(const Mat& x);
/// Elementwise dy * gelu'(x).
Mat gelu_backward(const Mat& x, const Mat& dy);

/// y = x W^T + b. Weight is (out x in), bias is (1 x out).
struct Linear {
  Param weight;
  Param bias;

  Linear() = default;
  Linear(const std::string& name, int in, int out);

  Mat forward(const Mat& x) const;
  /// Accumulates parameter grads (when trainable) and returns dL/dx if `want_dx`.
  Mat backward(const Mat& x, const Mat& dy, bool want_dx);

  void init_xavier(Rng& rng);
  void init_normal(Rng& rng, double stddev);
  void set_trainable(bool on) {
    weight.set_trainable(on);
    bias.set_trainable(on);
  }
};

struct RowNormCache {
  Mat xhat;
  Vec rstd;
};

/// Per-row standardisation: (x - mean) / sqrt(var + eps), var biased.
Mat normalize_rows(const Mat& x, double eps, RowNormCache* cache);
Mat normalize_rows_backward(const RowNormCache& cache, const Mat& dxhat);

struct LayerNorm {
  static constexpr double kEps = 1e-6;
  Param gamma;
  Param beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Mat forward(const Mat& x, RowNormCache* cache) const;
  Mat backward(const RowNormCache& cache, const Mat& dy);
  void set_trainable(bool on) {
    gamma.set_trainable(on);
    beta.set_trainable(on);
  }
};

struct AttentionCache {
  Mat input;
  Mat qkv;
  std::vector<Mat> probs;  // one T x T matrix per head
  Mat merged;
};

struct Attention {
  int num_heads = 1;
  Linear qkv;
  Linear proj;

  Attention() = default;
  Attention(const std::string& name, int dim, int heads);

  Mat forward(const Mat& x, AttentionCache* cache) const;
  Mat backward(const AttentionCache& cache, const Mat& dy);
};

struct BlockCache {
  RowNormCache norm1;
  AttentionCache attn;
  RowNormCache norm2;
  Mat mlp_in;
  Mat mlp_pre;
  Mat mlp_act;
};

/// Pre-norm transformer block: h = x + Attn(LN(x)); out = h + MLP(LN(h)).
struct TransformerBlock {
  LayerNorm norm1;
  Attention attn;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int dim, int heads, int hidden);

  Mat forward(const Mat& x, BlockCache* cache) const;
  Mat backward(const BlockCache& cache, const Mat& dy);
  void set_trainable(bool on);
  template <class F>
  void for_each_param(F&& f) {
    for (Param* p : {&norm1.gamma, &norm1.beta, &attn.qkv.weight, &attn.qkv.bias, &attn.proj.weight,
                     &attn.proj.bias, &norm2.gamma, &norm2.beta, &fc1.weight, &fc1.bias, &fc2.weight,
                     &fc2.bias}) {
      f(*p);
    }
  }
};

struct AdapterCache {
  Mat input;
  Mat pre;
};

/// Bottleneck residual MLP: delta = W_up GELU(W_down h + b_down) + b_up.
struct Adapter {
  Linear down;
  Linear up;

  Adapter() = default;
  Adapter(const std::string& name, int dim, int bottleneck);

  /// Returns only the delta; the caller adds it to h.
  Mat delta(const Mat& h, AdapterCache* cache) const;
  /// Gradient of the delta w.r.t. h (excluding the residual identity path).
  Mat backward(const AdapterCache& cache, const Mat& d_delta);
  void set_trainable(bool on) {
    down.set_trainable(on);
    up.set_trainable(on);
  }
  long long weight_count() const { return down.weight.size() + up.weight.size(); }
  long long param_count() const { return weight_count() + down.bias.size() + up.bias.size(); }
};

/// 1x1 convolution 3 -> 3 over a (3 x HW) image matrix.
struct RgbStem {
  Param weight;  // 3 x 3
  Param bias;    // 3 x 1

  RgbStem();
  Mat forward(const Mat& x) const;
  Mat backward(const Mat& x, const Mat& dy, bool want_dx);
  void set_trainable(bool on) {
    weight.set_trainable(on);
    bias.set_trainable(on);
  }
};

/// 3x3, stride 1 convolution over a (C x HW) image matrix. Borders replicate the edge pixel.
struct Conv3x3 {
  int in_channels = 0;
  int out_channels = 0;
  Param weight;  // out x (in * 9), column index = c * 9 + ky * 3 + kx
  Param bias;    // out x 1

  Conv3x3() = default;
  Conv3x3(const std::string& name, int in, int out);

  Mat forward(const Mat& x, int height, int width) const;
  Mat backward(const Mat& x, int height, int width, const Mat& dy, bool want_dx);
  void init_xavier(Rng& rng);
  void set_trainable(bool on) {
    weight.set_trainable(on);
    bias.set_trainable(on);
  }
};

struct SpatialStemCache {
  Mat input;
  Mat pre;
  Mat act;
  RowNormCache norm;
  int height = 0;
  int width = 0;
};

/// IN(Conv3x3[16->3](GELU(Conv3x3[1->16](x)))), instance norm without affine.
struct SpatialStem {
  static constexpr int kHidden = 16;
  static constexpr double kNormEps = 1e-5;
  Conv3x3 conv1;
  Conv3x3 conv2;

  SpatialStem() = default;
  explicit SpatialStem(const std::string& name);

  Mat forward(const Mat& x, int height, int width, SpatialStemCache* cache) const;
  Mat backward(const SpatialStemCache& cache, const Mat& dy);
  void set_trainable(bool on) {
    conv1.set_trainable(on);
    conv2.set_trainable(on);
  }
};

/// Non-overlapping patch extraction: (3 x HW) -> (N x 3 p^2), row-major over the grid.
Mat extract_patches(const Mat& image, int height, int width, int patch);
Mat scatter_patches(const Mat& patches, int height, int width, int patch);

}  // namespace specalign
