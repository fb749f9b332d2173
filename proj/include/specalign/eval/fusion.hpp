#pragma once

#include <cstdint>

#include "specalign/model/layers.hpp"
#include "specalign/model/model.hpp"

namespace specalign {

struct FusionOptions {
  bool layer_norm = true;
  bool activation = true;
};

/// Per token: [rgb | ms] (2D) -> Linear -> LayerNorm -> GELU (D).
struct ConcatFusion {
  Linear proj;
  LayerNorm norm;
  FusionOptions options;

  ConcatFusion() = default;
  ConcatFusion(int dim, FusionOptions opts);

  int dim() const { return static_cast<int>(norm.gamma.value.cols()); }
  /// Both inputs are tokens x D. Throws ShapeError when the shapes differ or D is wrong.
  Mat forward(const Mat& rgb_tokens, const Mat& ms_tokens) const;
};

/// Xavier-initialized projection, unit LayerNorm.
ConcatFusion make_concat_fusion(int dim, std::uint64_t seed, FusionOptions opts = {});

/// Fuses [cls; patches] of both bundles into (N + 1) x D tokens.
Mat concat_fuse(const EmbeddingBundle& rgb, const EmbeddingBundle& ms, const ConcatFusion& fusion);

}  // namespace specalign
