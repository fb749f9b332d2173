#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "specalign/core/random.hpp"
#include "specalign/core/tensor.hpp"
#include "specalign/queue/memory_queue.hpp"

namespace specalign {

enum class LossTerm { distill = 0, contrast = 1, patch = 2, neighborhood = 3 };
inline constexpr std::array<LossTerm, 4> kAllLossTerms{LossTerm::distill, LossTerm::contrast, LossTerm::patch,
                                                       LossTerm::neighborhood};
std::string_view to_string(LossTerm t);
/// "distill", "contrast", "patch" or "neighborhood".
LossTerm parse_loss_term(std::string_view name);

inline constexpr double kDefaultTemperature = 0.07;
inline constexpr int kDefaultTopK = 128;

/// Stage-dependent weights of the four alignment terms and their hyperparameters.
/// An absent neighborhood weight means the term is disabled for the stage.
struct LossWeights {
  double distill = 0.0;
  double contrast = 0.0;
  double patch = 0.0;
  std::optional<double> neighborhood;
  double tau = kDefaultTemperature;
  double patch_sample_ratio = 0.25;
  int top_k = kDefaultTopK;

  /// Weight of a term, or nullopt when the term is disabled.
  std::optional<double> weight(LossTerm t) const;
  void validate() const;

  static LossWeights stage_one();
  static LossWeights stage_two();
  static LossWeights stage_three();

  bool operator==(const LossWeights&) const = default;
};

using TermValues = std::array<std::optional<double>, 4>;
using TermMask = std::array<bool, 4>;

struct LossReport {
  double total = 0.0;
  TermValues terms{};            // absent for inactive terms
  std::array<double, 4> weights{};  // the weight applied to each active term
  TermMask active{};

  std::optional<double> term(LossTerm t) const { return terms[static_cast<std::size_t>(t)]; }
  bool is_active(LossTerm t) const { return active[static_cast<std::size_t>(t)]; }
};

/// 1 - mean_i cos(z_ms_i, z_teacher_i). The teacher side is a constant.
double distill_loss(const Mat& z_ms, const Mat& z_teacher, Mat* grad_ms = nullptr);

/// Symmetric InfoNCE over in-batch pairs with L2-normalised rows.
double contrastive_loss(const Mat& z_rgb, const Mat& z_ms, double tau, Mat* grad_rgb = nullptr,
                        Mat* grad_ms = nullptr);

/// max(1, floor(ratio * n)) distinct indices drawn uniformly, in draw order.
std::vector<int> sample_patch_indices(int n, double ratio, Rng& rng);

/// 1 - mean cosine over the B*S selected token pairs; one index set is shared by the
/// whole batch and both pathways. Each span element is one sample's N x D patch tokens.
double patch_loss(std::span<const Mat> p_rgb, std::span<const Mat> p_ms, double ratio, Rng& rng,
                  std::vector<Mat>* grad_rgb = nullptr, std::vector<Mat>* grad_ms = nullptr);
/// Same loss for an explicit index set.
double patch_loss_at(std::span<const Mat> p_rgb, std::span<const Mat> p_ms, std::span<const int> indices,
                     std::vector<Mat>* grad_rgb = nullptr, std::vector<Mat>* grad_ms = nullptr);

/// Mean KL(p_teacher || p_student) over each sample's top-k queue neighbours, where
/// neighbours are chosen by teacher similarity. Gradients reach z_ms only.
double neighborhood_kl(const Mat& z_teacher, const Mat& z_ms, const MemoryQueue& queue, int k, double tau,
                       Mat* grad_ms = nullptr);

/// Weighted sum of the active terms. Throws ConfigError when an active term has no
/// value or no weight.
LossReport total_loss(const TermValues& values, const LossWeights& weights, const TermMask& active);

}  // namespace specalign
