#include "specalign/model/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "specalign/core/errors.hpp"

namespace specalign {

void Param::set_trainable(bool on) {
  trainable = on;
  if (on) {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Mat::Zero(value.rows(), value.cols());
  } else {
    grad.resize(0, 0);
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Mat gelu(const Mat& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

Mat gelu_backward(const Mat& x, const Mat& dy) {
  return dy.cwiseProduct(x.unaryExpr([](double v) { return gelu_grad(v); }));
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, int in, int out)
    : weight(name + ".weight", Mat::Zero(out, in)), bias(name + ".bias", Mat::Zero(1, out)) {}

Mat Linear::forward(const Mat& x) const {
  Mat y(x.rows(), weight.value.rows());
  y.noalias() = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy, bool want_dx) {
  if (weight.trainable) weight.grad.noalias() += dy.transpose() * x;
  if (bias.trainable) bias.grad.row(0) += dy.colwise().sum();
  if (!want_dx) return {};
  Mat dx(dy.rows(), weight.value.cols());
  dx.noalias() = dy * weight.value;
  return dx;
}

void Linear::init_xavier(Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(weight.value.rows() + weight.value.cols()));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = rng.uniform(-bound, bound);
  bias.value.setZero();
}

void Linear::init_normal(Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = rng.normal(0.0, stddev);
  bias.value.setZero();
}

// ---------------------------------------------------------------- normalisation

Mat normalize_rows(const Mat& x, double eps, RowNormCache* cache) {
  const Eigen::Index n = x.cols();
  Vec mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Vec var = centered.cwiseAbs2().rowwise().sum() / static_cast<double>(n);
  Vec rstd = (var.array() + eps).rsqrt();
  Mat xhat = rstd.asDiagonal() * centered;
  if (cache) {
    cache->xhat = xhat;
    cache->rstd = std::move(rstd);
  }
  return xhat;
}

Mat normalize_rows_backward(const RowNormCache& cache, const Mat& dxhat) {
  const double n = static_cast<double>(dxhat.cols());
  Vec mean_d = dxhat.rowwise().sum() / n;
  Vec mean_dx = dxhat.cwiseProduct(cache.xhat).rowwise().sum() / n;
  Mat dx = dxhat.colwise() - mean_d;
  dx -= mean_dx.asDiagonal() * cache.xhat;
  return cache.rstd.asDiagonal() * dx;
}

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gamma(name + ".gamma", Mat::Ones(1, dim)), beta(name + ".beta", Mat::Zero(1, dim)) {}

Mat LayerNorm::forward(const Mat& x, RowNormCache* cache) const {
  RowNormCache local;
  Mat xhat = normalize_rows(x, kEps, cache ? cache : &local);
  Mat y = xhat.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  return y;
}

Mat LayerNorm::backward(const RowNormCache& cache, const Mat& dy) {
  if (gamma.trainable) gamma.grad.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
  if (beta.trainable) beta.grad.row(0) += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  return normalize_rows_backward(cache, dxhat);
}

// ---------------------------------------------------------------- attention

Attention::Attention(const std::string& name, int dim, int heads)
    : num_heads(heads), qkv(name + ".qkv", dim, 3 * dim), proj(name + ".proj", dim, dim) {}

namespace {

void softmax_rows_inplace(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

}  // namespace

Mat Attention::forward(const Mat& x, AttentionCache* cache) const {
  const Eigen::Index tokens = x.rows();
  const Eigen::Index dim = x.cols();
  const Eigen::Index dh = dim / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat qkv_out = qkv.forward(x);
  Mat merged(tokens, dim);
  if (cache) cache->probs.resize(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    auto q = qkv_out.middleCols(h * dh, dh);
    auto k = qkv_out.middleCols(dim + h * dh, dh);
    auto v = qkv_out.middleCols(2 * dim + h * dh, dh);
    Mat s(tokens, tokens);
    s.noalias() = q * k.transpose();
    s *= scale;
    softmax_rows_inplace(s);
    merged.middleCols(h * dh, dh).noalias() = s * v;
    if (cache) cache->probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  Mat out = proj.forward(merged);
  if (cache) {
    cache->input = x;
    cache->qkv = std::move(qkv_out);
    cache->merged = std::move(merged);
  }
  return out;
}

Mat Attention::backward(const AttentionCache& cache, const Mat& dy) {
  const Eigen::Index tokens = cache.input.rows();
  const Eigen::Index dim = cache.input.cols();
  const Eigen::Index dh = dim / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dmerged = proj.backward(cache.merged, dy, true);
  Mat dqkv(tokens, 3 * dim);
  for (int h = 0; h < num_heads; ++h) {
    const Mat& p = cache.probs[static_cast<std::size_t>(h)];
    auto q = cache.qkv.middleCols(h * dh, dh);
    auto k = cache.qkv.middleCols(dim + h * dh, dh);
    auto v = cache.qkv.middleCols(2 * dim + h * dh, dh);
    auto dout = dmerged.middleCols(h * dh, dh);
    Mat dp(tokens, tokens);
    dp.noalias() = dout * v.transpose();
    dqkv.middleCols(2 * dim + h * dh, dh).noalias() = p.transpose() * dout;
    Vec rowdot = dp.cwiseProduct(p).rowwise().sum();
    Mat ds = p.cwiseProduct(dp.colwise() - rowdot);
    ds *= scale;
    dqkv.middleCols(h * dh, dh).noalias() = ds * k;
    dqkv.middleCols(dim + h * dh, dh).noalias() = ds.transpose() * q;
  }
  return qkv.backward(cache.input, dqkv, true);
}

// ---------------------------------------------------------------- block

TransformerBlock::TransformerBlock(const std::string& name, int dim, int heads, int hidden)
    : norm1(name + ".norm1", dim),
      attn(name + ".attn", dim, heads),
      norm2(name + ".norm2", dim),
      fc1(name + ".mlp.fc1", dim, hidden),
      fc2(name + ".mlp.fc2", hidden, dim) {}

Mat TransformerBlock::forward(const Mat& x, BlockCache* cache) const {
  if (!cache) {
    Mat h = x + attn.forward(norm1.forward(x, nullptr), nullptr);
    Mat pre = fc1.forward(norm2.forward(h, nullptr));
    return h + fc2.forward(gelu(pre));
  }
  Mat n1 = norm1.forward(x, &cache->norm1);
  Mat h = x + attn.forward(n1, &cache->attn);
  cache->mlp_in = norm2.forward(h, &cache->norm2);
  cache->mlp_pre = fc1.forward(cache->mlp_in);
  cache->mlp_act = gelu(cache->mlp_pre);
  return h + fc2.forward(cache->mlp_act);
}

Mat TransformerBlock::backward(const BlockCache& cache, const Mat& dy) {
  Mat dact = fc2.backward(cache.mlp_act, dy, true);
  Mat dpre = gelu_backward(cache.mlp_pre, dact);
  Mat dn2 = fc1.backward(cache.mlp_in, dpre, true);
  Mat dh = dy + norm2.backward(cache.norm2, dn2);
  Mat dn1 = attn.backward(cache.attn, dh);
  return dh + norm1.backward(cache.norm1, dn1);
}

void TransformerBlock::set_trainable(bool on) {
  for_each_param([on](Param& p) { p.set_trainable(on); });
}

// ---------------------------------------------------------------- adapter

Adapter::Adapter(const std::string& name, int dim, int bottleneck)
    : down(name + ".down", dim, bottleneck), up(name + ".up", bottleneck, dim) {}

Mat Adapter::delta(const Mat& h, AdapterCache* cache) const {
  Mat pre = down.forward(h);
  Mat out = up.forward(gelu(pre));
  if (cache) {
    cache->input = h;
    cache->pre = std::move(pre);
  }
  return out;
}

Mat Adapter::backward(const AdapterCache& cache, const Mat& d_delta) {
  Mat dact = up.backward(gelu(cache.pre), d_delta, true);
  Mat dpre = gelu_backward(cache.pre, dact);
  return down.backward(cache.input, dpre, true);
}

// ---------------------------------------------------------------- stems

RgbStem::RgbStem() : weight("stem.rgb.weight", Mat::Identity(3, 3)), bias("stem.rgb.bias", Mat::Zero(3, 1)) {}

Mat RgbStem::forward(const Mat& x) const {
  if (x.rows() != 3) {
    throw ShapeError("rgb stem expects 3 channels, got " + std::to_string(x.rows()));
  }
  Mat y(3, x.cols());
  y.noalias() = weight.value * x;
  y.colwise() += bias.value.col(0);
  return y;
}

Mat RgbStem::backward(const Mat& x, const Mat& dy, bool want_dx) {
  if (weight.trainable) weight.grad.noalias() += dy * x.transpose();
  if (bias.trainable) bias.grad.col(0) += dy.rowwise().sum();
  if (!want_dx) return {};
  Mat dx(3, dy.cols());
  dx.noalias() = weight.value.transpose() * dy;
  return dx;
}

namespace {

// Replicate (edge) padding: a constant map stays constant through the convolution.
// Column offset kx - 1 shifts a row left or right; only the first or last pixel clamps.
Mat im2col3x3(const Mat& x, int height, int width) {
  const Eigen::Index channels = x.rows();
  Mat cols(channels * 9, static_cast<Eigen::Index>(height) * width);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const double* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(c * 9 + ky * 3 + kx).data();
        for (int y = 0; y < height; ++y) {
          const double* in = src + std::clamp(y + ky - 1, 0, height - 1) * width;
          double* out = dst + y * width;
          if (kx == 0) {
            out[0] = in[0];
            for (int i = 1; i < width; ++i) out[i] = in[i - 1];
          } else if (kx == 1) {
            for (int i = 0; i < width; ++i) out[i] = in[i];
          } else {
            for (int i = 0; i + 1 < width; ++i) out[i] = in[i + 1];
            out[width - 1] = in[width - 1];
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col3x3; per target pixel the contributions arrive in the same order as a
// plain scan over (ky, kx, y, x).
Mat col2im3x3(const Mat& cols, Eigen::Index channels, int height, int width) {
  Mat x = Mat::Zero(channels, static_cast<Eigen::Index>(height) * width);
  for (Eigen::Index c = 0; c < channels; ++c) {
    double* dst = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(c * 9 + ky * 3 + kx).data();
        for (int y = 0; y < height; ++y) {
          double* out = dst + std::clamp(y + ky - 1, 0, height - 1) * width;
          const double* in = src + y * width;
          if (kx == 0) {
            out[0] += in[0];
            for (int i = 1; i < width; ++i) out[i - 1] += in[i];
          } else if (kx == 1) {
            for (int i = 0; i < width; ++i) out[i] += in[i];
          } else {
            for (int i = 0; i + 1 < width; ++i) out[i + 1] += in[i];
            out[width - 1] += in[width - 1];
          }
        }
      }
    }
  }
  return x;
}

}  // namespace

Conv3x3::Conv3x3(const std::string& name, int in, int out)
    : in_channels(in),
      out_channels(out),
      weight(name + ".weight", Mat::Zero(out, in * 9)),
      bias(name + ".bias", Mat::Zero(out, 1)) {}

Mat Conv3x3::forward(const Mat& x, int height, int width) const {
  if (x.rows() != in_channels) {
    throw ShapeError("conv3x3 expects " + std::to_string(in_channels) + " channels, got " +
                     std::to_string(x.rows()));
  }
  Mat cols = im2col3x3(x, height, width);
  Mat y(out_channels, cols.cols());
  y.noalias() = weight.value * cols;
  y.colwise() += bias.value.col(0);
  return y;
}

Mat Conv3x3::backward(const Mat& x, int height, int width, const Mat& dy, bool want_dx) {
  Mat cols = im2col3x3(x, height, width);
  if (weight.trainable) weight.grad.noalias() += dy * cols.transpose();
  if (bias.trainable) bias.grad.col(0) += dy.rowwise().sum();
  if (!want_dx) return {};
  Mat dcols(cols.rows(), cols.cols());
  dcols.noalias() = weight.value.transpose() * dy;
  return col2im3x3(dcols, in_channels, height, width);
}

void Conv3x3::init_xavier(Rng& rng) {
  const double fan_in = in_channels * 9.0;
  const double fan_out = out_channels * 9.0;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = rng.uniform(-bound, bound);
  bias.value.setZero();
}

SpatialStem::SpatialStem(const std::string& name)
    : conv1(name + ".conv1", 1, kHidden), conv2(name + ".conv2", kHidden, 3) {}

Mat SpatialStem::forward(const Mat& x, int height, int width, SpatialStemCache* cache) const {
  if (x.rows() != 1) {
    throw ShapeError("spatial stem expects 1 channel, got " + std::to_string(x.rows()));
  }
  if (height < 3 || width < 3) {
    throw ShapeError("spatial stem needs H, W >= 3, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  Mat pre = conv1.forward(x, height, width);
  Mat act = gelu(pre);
  Mat out = conv2.forward(act, height, width);
  if (!cache) return normalize_rows(out, kNormEps, nullptr);
  Mat y = normalize_rows(out, kNormEps, &cache->norm);
  cache->input = x;
  cache->pre = std::move(pre);
  cache->act = std::move(act);
  cache->height = height;
  cache->width = width;
  return y;
}

Mat SpatialStem::backward(const SpatialStemCache& cache, const Mat& dy) {
  Mat dout = normalize_rows_backward(cache.norm, dy);
  Mat dact = conv2.backward(cache.act, cache.height, cache.width, dout, true);
  Mat dpre = gelu_backward(cache.pre, dact);
  return conv1.backward(cache.input, cache.height, cache.width, dpre, false);
}

// ---------------------------------------------------------------- patches

Mat extract_patches(const Mat& image, int height, int width, int patch) {
  const int gh = height / patch;
  const int gw = width / patch;
  const Eigen::Index channels = image.rows();
  Mat out(static_cast<Eigen::Index>(gh) * gw, channels * patch * patch);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      auto row = out.row(gy * gw + gx);
      Eigen::Index col = 0;
      for (Eigen::Index c = 0; c < channels; ++c) {
        for (int py = 0; py < patch; ++py) {
          const Eigen::Index base = static_cast<Eigen::Index>(gy * patch + py) * width + gx * patch;
          for (int px = 0; px < patch; ++px) row(col++) = image(c, base + px);
        }
      }
    }
  }
  return out;
}

Mat scatter_patches(const Mat& patches, int height, int width, int patch) {
  const int gw = width / patch;
  const Eigen::Index channels = patches.cols() / (patch * patch);
  Mat image = Mat::Zero(channels, static_cast<Eigen::Index>(height) * width);
  for (Eigen::Index r = 0; r < patches.rows(); ++r) {
    const int gy = static_cast<int>(r) / gw;
    const int gx = static_cast<int>(r) % gw;
    Eigen::Index col = 0;
    for (Eigen::Index c = 0; c < channels; ++c) {
      for (int py = 0; py < patch; ++py) {
        const Eigen::Index base = static_cast<Eigen::Index>(gy * patch + py) * width + gx * patch;
        for (int px = 0; px < patch; ++px) image(c, base + px) = patches(r, col++);
      }
    }
  }
  return image;
}

}  // namespace specalign
