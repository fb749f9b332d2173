#include "specalign/eval/alignment.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "specalign/core/errors.hpp"
#include "specalign/core/random.hpp"
#include "specalign/queue/memory_queue.hpp"

namespace specalign {

RetrievalResult retrieval(const Mat& queries, const Mat& gallery) {
  if (queries.rows() != gallery.rows() || queries.cols() != gallery.cols()) {
    throw ShapeError("retrieval: query and gallery shapes differ");
  }
  const Mat q = l2_normalize_rows(queries, "retrieval query");
  const Mat g = l2_normalize_rows(gallery, "retrieval gallery");
  const Mat sims = q * g.transpose();
  RetrievalResult out;
  const Eigen::Index n = q.rows();
  out.ranks.resize(static_cast<std::size_t>(n));
  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double target = sims(i, i);
    std::size_t rank = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (sims(i, j) > target || (sims(i, j) == target && j < i)) ++rank;
    }
    out.ranks[static_cast<std::size_t>(i)] = rank;
    hit1 += rank < 1;
    hit5 += rank < 5;
  }
  if (n > 0) {
    out.top1 = static_cast<double>(hit1) / static_cast<double>(n);
    out.top5 = static_cast<double>(hit5) / static_cast<double>(n);
  }
  return out;
}

double AlignmentReport::mean_top1() const {
  if (modalities.empty()) return 0.0;
  double s = 0.0;
  for (const auto& m : modalities) s += m.top1;
  return s / static_cast<double>(modalities.size());
}

std::optional<ModalityAlignment> AlignmentReport::find(Modality m) const {
  for (const auto& a : modalities) {
    if (a.modality == m) return a;
  }
  return std::nullopt;
}

nlohmann::json AlignmentReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& a : modalities) {
    per[std::string(to_string(a.modality))] = {
        {"pairs", a.pairs}, {"mean_cosine", a.mean_cosine}, {"top1", a.top1}, {"top5", a.top5}};
  }
  return {{"stage", stage}, {"modalities", per}, {"mean_top1", mean_top1()}};
}

SplitEmbeddings embed_split(const Model& model, const PairedDataset& data) {
  SplitEmbeddings out;
  const int d = model.config().embed_dim;
  // RGB views are shared between modalities of the same scene; embed each once.
  std::unordered_map<std::uint64_t, RowVec> rgb_cache;
  for (Modality m : kSpectralModalities) {
    const auto& samples = data.of(m);
    if (samples.empty()) continue;
    SplitEmbeddings::PerModality pm;
    pm.modality = m;
    pm.rgb.resize(static_cast<Eigen::Index>(samples.size()), d);
    pm.ms.resize(static_cast<Eigen::Index>(samples.size()), d);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const PairedSample& s = samples[i];
      auto it = rgb_cache.find(s.scene_id);
      if (it == rgb_cache.end()) {
        it = rgb_cache.emplace(s.scene_id, student_forward(model, *s.rgb, Modality::rgb).cls).first;
      }
      pm.rgb.row(static_cast<Eigen::Index>(i)) = it->second;
      pm.ms.row(static_cast<Eigen::Index>(i)) = student_forward(model, *s.ms, m).cls;
      pm.scene_ids.push_back(s.scene_id);
    }
    out.modalities.push_back(std::move(pm));
  }
  return out;
}

AlignmentReport alignment_report(const SplitEmbeddings& emb, const std::string& stage) {
  AlignmentReport report;
  report.stage = stage;
  for (const auto& pm : emb.modalities) {
    const auto n = static_cast<std::size_t>(pm.ms.rows());
    if (n < kMinRetrievalScenes) {
      throw DataError("split has " + std::to_string(n) + " " + std::string(to_string(pm.modality)) +
                      " pairs; retrieval needs at least " + std::to_string(kMinRetrievalScenes));
    }
    const Mat a = l2_normalize_rows(pm.rgb, "rgb embedding");
    const Mat b = l2_normalize_rows(pm.ms, "ms embedding");
    ModalityAlignment ma;
    ma.modality = pm.modality;
    ma.pairs = n;
    ma.mean_cosine = (a.array() * b.array()).rowwise().sum().mean();
    const RetrievalResult r = retrieval(pm.ms, pm.rgb);
    ma.top1 = r.top1;
    ma.top5 = r.top5;
    report.modalities.push_back(ma);
  }
  return report;
}

std::string export_embeddings_csv(const SplitEmbeddings& emb, const ExportOptions& opts) {
  std::string out = "scene_id,modality,pair";
  const Eigen::Index d = emb.modalities.empty() ? 0 : emb.modalities.front().rgb.cols();
  for (Eigen::Index j = 0; j < d; ++j) out += ",e" + std::to_string(j);
  out += '\n';
  char buf[40];
  auto row = [&](std::uint64_t id, Modality m, std::size_t pair, const auto& v) {
    out += std::to_string(id) + "," + std::string(to_string(m)) + "," + std::to_string(pair);
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", v(j));
      out += buf;
    }
    out += '\n';
  };
  std::size_t pair = 0;
  for (const auto& pm : emb.modalities) {
    const auto n = static_cast<std::size_t>(pm.ms.rows());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(opts.seed, static_cast<std::uint64_t>(index_of(pm.modality))));
    const std::size_t take = std::min(opts.count, n);
    for (std::size_t i = 0; i < take; ++i) std::swap(order[i], order[i + rng.index(n - i)]);
    for (std::size_t i = 0; i < take; ++i) {
      const auto k = static_cast<Eigen::Index>(order[i]);
      row(pm.scene_ids[order[i]], Modality::rgb, pair, pm.rgb.row(k));
      row(pm.scene_ids[order[i]], pm.modality, pair, pm.ms.row(k));
      ++pair;
    }
  }
  return out;
}

}  // namespace specalign
