#include "specalign/eval/fusion.hpp"

#include "specalign/core/errors.hpp"

namespace specalign {

ConcatFusion::ConcatFusion(int dim, FusionOptions opts)
    : proj("fusion.proj", 2 * dim, dim), norm("fusion.norm", dim), options(opts) {}

Mat ConcatFusion::forward(const Mat& rgb_tokens, const Mat& ms_tokens) const {
  const int d = dim();
  if (rgb_tokens.rows() != ms_tokens.rows() || rgb_tokens.cols() != d || ms_tokens.cols() != d) {
    throw ShapeError("concat_fuse: expected two tokens x " + std::to_string(d) + " inputs, got " +
                     std::to_string(rgb_tokens.rows()) + "x" + std::to_string(rgb_tokens.cols()) + " and " +
                     std::to_string(ms_tokens.rows()) + "x" + std::to_string(ms_tokens.cols()));
  }
  Mat joined(rgb_tokens.rows(), 2 * d);
  joined << rgb_tokens, ms_tokens;
  Mat y = proj.forward(joined);
  if (options.layer_norm) y = norm.forward(y, nullptr);
  if (options.activation) y = gelu(y);
  return y;
}

ConcatFusion make_concat_fusion(int dim, std::uint64_t seed, FusionOptions opts) {
  if (dim <= 0) throw ConfigError("concat fusion needs a positive width");
  ConcatFusion f(dim, opts);
  Rng rng(seed);
  f.proj.init_xavier(rng);
  return f;
}

Mat concat_fuse(const EmbeddingBundle& rgb, const EmbeddingBundle& ms, const ConcatFusion& fusion) {
  if (rgb.patches.rows() != ms.patches.rows()) throw ShapeError("concat_fuse: bundles have different token counts");
  auto tokens = [](const EmbeddingBundle& b) {
    Mat t(b.patches.rows() + 1, b.patches.cols());
    if (b.cls.size() != b.patches.cols()) throw ShapeError("concat_fuse: cls and patch widths differ");
    t.row(0) = b.cls;
    t.bottomRows(b.patches.rows()) = b.patches;
    return t;
  };
  return fusion.forward(tokens(rgb), tokens(ms));
}

}  // namespace specalign
