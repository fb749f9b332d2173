#include "specalign/losses/losses.hpp"

#include <cmath>
#include <numeric>

#include "specalign/core/errors.hpp"

namespace specalign {

namespace {

constexpr double kMinNorm = 1e-12;

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  if (a.rows() == 0) throw ShapeError(std::string(what) + ": empty batch");
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
}

Vec row_norms(const Mat& z, const char* what) {
  Vec n = z.rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    if (!(n(i) >= kMinNorm)) {
      throw DegenerateEmbeddingError(std::string(what) + ": row " + std::to_string(i) + " has norm " +
                                     std::to_string(n(i)));
    }
  }
  return n;
}

// Pulls a gradient w.r.t. normalised rows back to the raw rows: (g - u (u.g)) / |z|.
Mat normalize_backward(const Mat& unit, const Vec& norms, const Mat& d_unit) {
  Vec dots = unit.cwiseProduct(d_unit).rowwise().sum();
  Mat g = d_unit - dots.asDiagonal() * unit;
  return norms.cwiseInverse().asDiagonal() * g;
}

// Row-wise log-softmax.
Mat log_softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

}  // namespace

std::string_view to_string(LossTerm t) {
  switch (t) {
    case LossTerm::distill:
      return "distill";
    case LossTerm::contrast:
      return "contrast";
    case LossTerm::patch:
      return "patch";
    case LossTerm::neighborhood:
      return "neighborhood";
  }
  return "?";
}

LossTerm parse_loss_term(std::string_view name) {
  for (LossTerm t : kAllLossTerms) {
    if (name == to_string(t)) return t;
  }
  throw ConfigError("unknown loss term '" + std::string(name) + "' (expected distill, contrast, patch, neighborhood)");
}

std::optional<double> LossWeights::weight(LossTerm t) const {
  switch (t) {
    case LossTerm::distill:
      return distill;
    case LossTerm::contrast:
      return contrast;
    case LossTerm::patch:
      return patch;
    case LossTerm::neighborhood:
      return neighborhood;
  }
  return std::nullopt;
}

void LossWeights::validate() const {
  auto non_negative = [](double v, const char* what) {
    if (!(v >= 0.0)) throw ConfigError(std::string(what) + " must be non-negative");
  };
  non_negative(distill, "lambda_distill");
  non_negative(contrast, "lambda_contrast");
  non_negative(patch, "lambda_patch");
  if (neighborhood) non_negative(*neighborhood, "lambda_neighborhood");
  check_tau(tau);
  if (!(patch_sample_ratio > 0.0 && patch_sample_ratio <= 1.0)) {
    throw ConfigError("patch_sample_ratio must lie in (0, 1]");
  }
  if (top_k <= 0) throw ConfigError("top_k must be positive");
}

LossWeights LossWeights::stage_one() { return LossWeights{2.0, 1.0, 0.1, std::nullopt, 0.07, 0.25, 128}; }
LossWeights LossWeights::stage_two() { return LossWeights{2.0, 1.0, 0.1, 0.5, 0.07, 0.25, 128}; }
LossWeights LossWeights::stage_three() { return LossWeights{0.5, 1.5, 0.25, 1.0, 0.07, 0.5, 128}; }

// ---------------------------------------------------------------- distill

double distill_loss(const Mat& z_ms, const Mat& z_teacher, Mat* grad_ms) {
  require_same_shape(z_ms, z_teacher, "distill_loss");
  const Vec ns = row_norms(z_ms, "distill_loss student");
  const Vec nt = row_norms(z_teacher, "distill_loss teacher");
  const Mat us = ns.cwiseInverse().asDiagonal() * z_ms;
  const Mat ut = nt.cwiseInverse().asDiagonal() * z_teacher;
  const Vec cos = us.cwiseProduct(ut).rowwise().sum();
  const double b = static_cast<double>(z_ms.rows());
  if (grad_ms) *grad_ms = normalize_backward(us, ns, ut * (-1.0 / b));
  return 1.0 - cos.mean();
}

// ---------------------------------------------------------------- contrastive

double contrastive_loss(const Mat& z_rgb, const Mat& z_ms, double tau, Mat* grad_rgb, Mat* grad_ms) {
  require_same_shape(z_rgb, z_ms, "contrastive_loss");
  check_tau(tau);
  const Vec nr = row_norms(z_rgb, "contrastive_loss rgb");
  const Vec nm = row_norms(z_ms, "contrastive_loss ms");
  const Mat ur = nr.cwiseInverse().asDiagonal() * z_rgb;
  const Mat um = nm.cwiseInverse().asDiagonal() * z_ms;
  const Eigen::Index b = z_rgb.rows();

  Mat logits(b, b);
  logits.noalias() = ur * um.transpose();
  logits /= tau;
  const Mat lsm_rm = log_softmax_rows(logits);
  const Mat lsm_mr = log_softmax_rows(logits.transpose());
  const double loss_rm = -lsm_rm.diagonal().mean();
  const double loss_mr = -lsm_mr.diagonal().mean();

  if (grad_rgb || grad_ms) {
    const Mat eye = Mat::Identity(b, b);
    Mat dlogits = (lsm_rm.array().exp().matrix() - eye) + (lsm_mr.array().exp().matrix() - eye).transpose();
    dlogits /= 2.0 * static_cast<double>(b);
    dlogits /= tau;
    if (grad_rgb) *grad_rgb = normalize_backward(ur, nr, dlogits * um);
    if (grad_ms) *grad_ms = normalize_backward(um, nm, dlogits.transpose() * ur);
  }
  return 0.5 * (loss_rm + loss_mr);
}

// ---------------------------------------------------------------- patch

std::vector<int> sample_patch_indices(int n, double ratio, Rng& rng) {
  if (n <= 0) throw ShapeError("patch sampling needs at least one patch");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("patch sample ratio must lie in (0, 1]");
  const int s = std::max(1, static_cast<int>(std::floor(ratio * n)));
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates: the first s slots end up a uniform sample without replacement.
  for (int i = 0; i < s; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.index(static_cast<std::uint64_t>(n - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(s));
  return pool;
}

double patch_loss_at(std::span<const Mat> p_rgb, std::span<const Mat> p_ms, std::span<const int> indices,
                     std::vector<Mat>* grad_rgb, std::vector<Mat>* grad_ms) {
  if (p_rgb.size() != p_ms.size() || p_rgb.empty()) throw ShapeError("patch_loss: batch sizes differ or are empty");
  if (indices.empty()) throw ShapeError("patch_loss: empty index set");
  const double denom = static_cast<double>(p_rgb.size() * indices.size());
  if (grad_rgb) grad_rgb->assign(p_rgb.size(), Mat());
  if (grad_ms) grad_ms->assign(p_ms.size(), Mat());
  double sum = 0.0;
  for (std::size_t i = 0; i < p_rgb.size(); ++i) {
    const Mat& a = p_rgb[i];
    const Mat& m = p_ms[i];
    if (a.rows() != m.rows() || a.cols() != m.cols()) throw ShapeError("patch_loss: token shapes differ");
    if (grad_rgb) (*grad_rgb)[i] = Mat::Zero(a.rows(), a.cols());
    if (grad_ms) (*grad_ms)[i] = Mat::Zero(m.rows(), m.cols());
    for (int j : indices) {
      if (j < 0 || j >= a.rows()) throw ShapeError("patch_loss: index " + std::to_string(j) + " out of range");
      const double na = a.row(j).norm();
      const double nm = m.row(j).norm();
      if (!(na >= kMinNorm) || !(nm >= kMinNorm)) {
        throw DegenerateEmbeddingError("patch_loss: token " + std::to_string(j) + " of sample " +
                                       std::to_string(i) + " has zero norm");
      }
      const double c = a.row(j).dot(m.row(j)) / (na * nm);
      sum += c;
      // d(-c/denom)/da = -(m/(|a||m|) - c a/|a|^2) / denom
      if (grad_rgb) (*grad_rgb)[i].row(j) += -(m.row(j) / (na * nm) - c * a.row(j) / (na * na)) / denom;
      if (grad_ms) (*grad_ms)[i].row(j) += -(a.row(j) / (na * nm) - c * m.row(j) / (nm * nm)) / denom;
    }
  }
  return 1.0 - sum / denom;
}

double patch_loss(std::span<const Mat> p_rgb, std::span<const Mat> p_ms, double ratio, Rng& rng,
                  std::vector<Mat>* grad_rgb, std::vector<Mat>* grad_ms) {
  if (p_rgb.empty() || p_rgb.size() != p_ms.size()) throw ShapeError("patch_loss: batch sizes differ or are empty");
  const auto indices = sample_patch_indices(static_cast<int>(p_rgb.front().rows()), ratio, rng);
  return patch_loss_at(p_rgb, p_ms, indices, grad_rgb, grad_ms);
}

// ---------------------------------------------------------------- neighbourhood

double neighborhood_kl(const Mat& z_teacher, const Mat& z_ms, const MemoryQueue& queue, int k, double tau,
                       Mat* grad_ms) {
  require_same_shape(z_teacher, z_ms, "neighborhood_kl");
  check_tau(tau);
  if (queue.empty()) throw QueueEmptyError("neighborhood_kl: the teacher queue is empty");
  const Vec nt = row_norms(z_teacher, "neighborhood_kl teacher");
  const Vec ns = row_norms(z_ms, "neighborhood_kl student");
  const Mat ut = nt.cwiseInverse().asDiagonal() * z_teacher;
  const Mat us = ns.cwiseInverse().asDiagonal() * z_ms;
  const TopK nn = queue.top_k(ut, k);
  const Eigen::Index b = z_ms.rows();
  const Mat& bank = queue.buffer();

  Mat d_unit = Mat::Zero(b, z_ms.cols());
  double total = 0.0;
  Mat neighbours(nn.k_eff, z_ms.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    for (int j = 0; j < nn.k_eff; ++j) neighbours.row(j) = bank.row(static_cast<Eigen::Index>(nn.index(i, j)));
    RowVec lt = (ut.row(i) * neighbours.transpose()) / tau;
    RowVec lm = (us.row(i) * neighbours.transpose()) / tau;
    const Mat log_pt = log_softmax_rows(lt);
    const Mat log_pm = log_softmax_rows(lm);
    double kl = 0.0;
    for (int j = 0; j < nn.k_eff; ++j) {
      const double pt = std::exp(log_pt(0, j));
      if (pt > 0.0) kl += pt * (log_pt(0, j) - log_pm(0, j));
    }
    total += kl;
    if (grad_ms) {
      // dKL/dlogit_m = p_m - p_t
      RowVec dl = log_pm.row(0).array().exp() - log_pt.row(0).array().exp();
      d_unit.row(i) = (dl * neighbours) / tau;
    }
  }
  if (grad_ms) *grad_ms = normalize_backward(us, ns, d_unit / static_cast<double>(b));
  return total / static_cast<double>(b);
}

// ---------------------------------------------------------------- total

LossReport total_loss(const TermValues& values, const LossWeights& weights, const TermMask& active) {
  LossReport report;
  report.active = active;
  for (LossTerm t : kAllLossTerms) {
    const auto i = static_cast<std::size_t>(t);
    if (!active[i]) continue;
    const auto w = weights.weight(t);
    if (!w) throw ConfigError("loss term '" + std::string(to_string(t)) + "' is active but disabled for this stage");
    if (!values[i]) throw ConfigError("loss term '" + std::string(to_string(t)) + "' is active but has no value");
    report.terms[i] = values[i];
    report.weights[i] = *w;
    report.total += *w * *values[i];
  }
  return report;
}

}  // namespace specalign
