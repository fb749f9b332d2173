#include "specalign/eval/probe.hpp"

#include <numeric>

#include "specalign/core/errors.hpp"
#include "specalign/data/scene.hpp"
#include "specalign/eval/fusion.hpp"
#include "specalign/train/optimizer.hpp"

namespace specalign {

namespace {

struct Features {
  Mat x;  // samples x D
  std::vector<int> y;
};

Features fused_features(const Model& model, const ConcatFusion& fusion, const std::vector<PairedSample>& samples) {
  Features f;
  f.x.resize(static_cast<Eigen::Index>(samples.size()), model.config().embed_dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PairedSample& s = samples[i];
    if (s.label < 0 || s.label >= kNumShapeClasses) {
      throw DataError("probe: scene " + std::to_string(s.scene_id) + " has no valid class label");
    }
    const EmbeddingBundle rgb = student_forward(model, *s.rgb, Modality::rgb);
    const EmbeddingBundle ms = student_forward(model, *s.ms, s.modality);
    f.x.row(static_cast<Eigen::Index>(i)) = fusion.forward(rgb.cls, ms.cls).row(0);
    f.y.push_back(s.label);
  }
  return f;
}

Mat softmax_rows(const Mat& logits) {
  Mat p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double accuracy(const Linear& head, const Features& f) {
  if (f.y.empty()) return 0.0;
  const Mat logits = head.forward(f.x);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    hits += static_cast<int>(arg) == f.y[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hits) / static_cast<double>(f.y.size());
}

}  // namespace

nlohmann::json ProbeReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& r : modalities) {
    per["rgb+" + std::string(to_string(r.modality))] = {{"train_pairs", r.train_pairs},
                                                          {"test_pairs", r.test_pairs},
                                                          {"train_accuracy", r.train_accuracy},
                                                          {"test_accuracy", r.test_accuracy},
                                                          {"chance", r.chance}};
  }
  return {{"probe", per}};
}

ProbeReport run_probe(const Model& model, const PairedDataset& train, const PairedDataset& test,
                      const ProbeOptions& opts) {
  if (opts.epochs < 0 || opts.batch_size <= 0 || !(opts.lr > 0.0)) throw ConfigError("probe: invalid options");
  const int d = model.config().embed_dim;
  ProbeReport report;
  for (Modality m : kSpectralModalities) {
    if (train.of(m).empty()) continue;
    const ConcatFusion fusion = make_concat_fusion(d, mix_seed(opts.seed, 0xf0510000ULL));
    const Features tr = fused_features(model, fusion, train.of(m));
    const Features te = fused_features(model, fusion, test.of(m));

    Linear head("probe.head", d, kNumShapeClasses);
    Rng rng(mix_seed(opts.seed, 0x9b0be000ULL + static_cast<std::uint64_t>(index_of(m))));
    head.init_xavier(rng);
    head.set_trainable(true);
    AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, opts.weight_decay});

    const auto n = static_cast<std::size_t>(tr.x.rows());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
      for (std::size_t j = n; j > 1; --j) std::swap(order[j - 1], order[rng.index(j)]);
      for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(opts.batch_size)) {
        const std::size_t end = std::min(n, begin + static_cast<std::size_t>(opts.batch_size));
        Mat xb(static_cast<Eigen::Index>(end - begin), d);
        for (std::size_t k = begin; k < end; ++k) xb.row(static_cast<Eigen::Index>(k - begin)) = tr.x.row(static_cast<Eigen::Index>(order[k]));
        Mat grad = softmax_rows(head.forward(xb));
        for (std::size_t k = begin; k < end; ++k) grad(static_cast<Eigen::Index>(k - begin), tr.y[order[k]]) -= 1.0;
        grad /= static_cast<double>(end - begin);
        head.weight.zero_grad();
        head.bias.zero_grad();
        head.backward(xb, grad, false);
        opt.begin_step();
        opt.update(head.weight, opts.lr);
        opt.update(head.bias, opts.lr);
      }
    }
    ProbeResult r;
    r.modality = m;
    r.train_pairs = n;
    r.test_pairs = te.y.size();
    r.train_accuracy = accuracy(head, tr);
    r.test_accuracy = accuracy(head, te);
    r.chance = 1.0 / kNumShapeClasses;
    report.modalities.push_back(r);
  }
  return report;
}

}  // namespace specalign
