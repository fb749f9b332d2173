#include "specalign/model/model.hpp"

#include <algorithm>

#include "specalign/core/bytes.hpp"
#include "specalign/core/errors.hpp"

namespace specalign {

namespace {

constexpr double kEmbedInitStd = 0.02;
constexpr double kAdapterInitStd = 0.01;

std::string block_group(int i) { return "block." + std::to_string(i); }

std::string adapter_group(int block, Modality m) {
  return "adapter." + std::to_string(block) + "." + std::string(to_string(m));
}

void fill_normal(Mat& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
}

template <class BackboneT, class Visit>
void visit_backbone(BackboneT& b, Visit&& visit) {
  visit("patch_embed", b.patch_embed.weight);
  visit("patch_embed", b.patch_embed.bias);
  visit("cls_token", b.cls_token);
  visit("pos_embed", b.pos_embed);
  for (std::size_t i = 0; i < b.blocks.size(); ++i) {
    const std::string g = block_group(static_cast<int>(i));
    auto& blk = b.blocks[i];
    for (auto* p : {&blk.norm1.gamma, &blk.norm1.beta, &blk.attn.qkv.weight, &blk.attn.qkv.bias,
                    &blk.attn.proj.weight, &blk.attn.proj.bias, &blk.norm2.gamma, &blk.norm2.beta,
                    &blk.fc1.weight, &blk.fc1.bias, &blk.fc2.weight, &blk.fc2.bias}) {
      visit(g, *p);
    }
  }
  visit("final_norm", b.final_norm.gamma);
  visit("final_norm", b.final_norm.beta);
}

void check_image(const ModelVariantConfig& cfg, const Image& image, int channels, const char* who) {
  if (image.channels != channels) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) + " channel(s), got " +
                     std::to_string(image.channels));
  }
  if (image.height != cfg.image_size || image.width != cfg.image_size) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + " image, got " + std::to_string(image.height) + "x" +
                     std::to_string(image.width));
  }
}

// Patch tokens with CLS prepended and positional embeddings added.
Mat embed_tokens(const Backbone& b, const Mat& patches) {
  const Eigen::Index n = patches.rows();
  Mat tokens(n + 1, b.config.embed_dim);
  tokens.row(0) = b.cls_token.value.row(0);
  tokens.bottomRows(n) = b.patch_embed.forward(patches);
  tokens += b.pos_embed.value;
  return tokens;
}

int spatial_index(Modality m) {
  if (m == Modality::rgb) throw RoutingError("spatial stems serve NIR, SWIR and LWIR only; got rgb");
  return index_of(m) - 1;
}

}  // namespace

// ---------------------------------------------------------------- Model

SpatialStem& Model::spatial_stem(Modality m) { return spatial_stems_[static_cast<std::size_t>(spatial_index(m))]; }
const SpatialStem& Model::spatial_stem(Modality m) const {
  return spatial_stems_[static_cast<std::size_t>(spatial_index(m))];
}

Adapter& Model::adapter(int block, Modality m) {
  return const_cast<Adapter&>(static_cast<const Model&>(*this).adapter(block, m));
}

const Adapter& Model::adapter(int block, Modality m) const {
  const int mi = index_of(m);
  if (block < 0 || block >= config().depth || mi < 0 || mi >= kNumModalities) {
    throw LookupError("no adapter for block " + std::to_string(block) + ", modality " + std::to_string(mi));
  }
  return adapters_[static_cast<std::size_t>(block * kNumModalities + mi)];
}

void Model::for_each_param(const ParamVisitor& visit) {
  visit_backbone(backbone_, visit);
  visit("stem.rgb", rgb_stem_.weight);
  visit("stem.rgb", rgb_stem_.bias);
  for (Modality m : kSpectralModalities) {
    const std::string g = "stem." + std::string(to_string(m));
    auto& s = spatial_stem(m);
    for (auto* p : {&s.conv1.weight, &s.conv1.bias, &s.conv2.weight, &s.conv2.bias}) visit(g, *p);
  }
  for (int b = 0; b < config().depth; ++b) {
    for (Modality m : kAllModalities) {
      auto& a = adapter(b, m);
      const std::string g = adapter_group(b, m);
      for (auto* p : {&a.down.weight, &a.down.bias, &a.up.weight, &a.up.bias}) visit(g, *p);
    }
  }
  visit("modality_embed", modality_embed_);
}

void Model::for_each_param(const ConstParamVisitor& visit) const {
  const_cast<Model*>(this)->for_each_param(
      ParamVisitor([&visit](const std::string& g, Param& p) { visit(g, p); }));
}

void Model::zero_grad() {
  for_each_param(ParamVisitor([](const std::string&, Param& p) { p.zero_grad(); }));
}

std::map<std::string, std::uint64_t> Model::group_checksums() const {
  std::map<std::string, std::uint64_t> sums;
  for_each_param(ConstParamVisitor([&sums](const std::string& g, const Param& p) {
    auto it = sums.find(g);
    const std::uint64_t seed = it == sums.end() ? 0xcbf29ce484222325ULL : it->second;
    sums[g] = specalign::checksum(p.value, seed);
  }));
  return sums;
}

std::uint64_t Model::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_param(ConstParamVisitor([&h](const std::string&, const Param& p) { h = specalign::checksum(p.value, h); }));
  return h;
}

long long Model::parameter_count() const {
  long long n = 0;
  for_each_param(ConstParamVisitor([&n](const std::string&, const Param& p) { n += p.size(); }));
  return n;
}

Teacher::Teacher(Backbone backbone) : backbone_(std::move(backbone)) {
  visit_backbone(backbone_, [](const std::string&, Param& p) { p.set_trainable(false); });
}

std::uint64_t Teacher::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_param(ConstParamVisitor([&h](const std::string&, const Param& p) { h = specalign::checksum(p.value, h); }));
  return h;
}

void Teacher::for_each_param(const ConstParamVisitor& visit) const {
  visit_backbone(backbone_, [&visit](const std::string& g, const Param& p) { visit(g, p); });
}

void Teacher::for_each_param(const ParamVisitor& visit) { visit_backbone(backbone_, visit); }

// ---------------------------------------------------------------- construction

Model build_model(const ModelVariantConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Model model;
  Backbone& b = model.backbone_;
  const int d = cfg.embed_dim;
  const int patch_dim = 3 * cfg.patch_size * cfg.patch_size;

  b.config = cfg;
  b.patch_embed = Linear("patch_embed", patch_dim, d);
  b.patch_embed.init_xavier(rng);
  b.cls_token = Param("cls_token", Mat(1, d));
  fill_normal(b.cls_token.value, rng, kEmbedInitStd);
  b.pos_embed = Param("pos_embed", Mat(cfg.num_tokens(), d));
  fill_normal(b.pos_embed.value, rng, kEmbedInitStd);
  b.blocks.reserve(static_cast<std::size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i) {
    TransformerBlock blk(block_group(i), d, cfg.num_heads, cfg.mlp_hidden());
    blk.attn.qkv.init_xavier(rng);
    blk.attn.proj.init_xavier(rng);
    blk.fc1.init_xavier(rng);
    blk.fc2.init_xavier(rng);
    b.blocks.push_back(std::move(blk));
  }
  b.final_norm = LayerNorm("final_norm", d);

  // The RGB stem starts as the exact identity.
  model.rgb_stem_ = RgbStem();
  for (Modality m : kSpectralModalities) {
    SpatialStem stem("stem." + std::string(to_string(m)));
    stem.conv1.init_xavier(rng);
    stem.conv2.init_xavier(rng);
    model.spatial_stems_[static_cast<std::size_t>(index_of(m) - 1)] = std::move(stem);
  }
  model.adapters_.reserve(static_cast<std::size_t>(adapter_instance_count(cfg)));
  for (int blk = 0; blk < cfg.depth; ++blk) {
    for (Modality m : kAllModalities) {
      Adapter a(adapter_group(blk, m), d, cfg.adapter_bottleneck);
      a.down.init_normal(rng, kAdapterInitStd);
      a.up.init_normal(rng, kAdapterInitStd);
      model.adapters_.push_back(std::move(a));
    }
  }
  model.modality_embed_ = Param("modality_embed", Mat(kNumModalities, d));
  fill_normal(model.modality_embed_.value, rng, kEmbedInitStd);
  return model;
}

Teacher make_teacher(const Model& model) { return Teacher(model.backbone()); }

// ---------------------------------------------------------------- forward

Mat rgb_stem_forward(const Model& model, const Image& image) {
  if (image.channels != 3) {
    throw ShapeError("rgb stem expects 3 channels, got " + std::to_string(image.channels));
  }
  return model.rgb_stem().forward(image.to_matrix());
}

Mat spatial_stem_forward(const Model& model, const Image& image, Modality m) {
  const SpatialStem& stem = model.spatial_stem(m);
  return stem.forward(image.to_matrix(), image.height, image.width, nullptr);
}

Mat adapter_forward(const Model& model, const Mat& h, int block, Modality m) {
  const Adapter& a = model.adapter(block, m);
  if (h.cols() != model.config().embed_dim) {
    throw ShapeError("adapter input width " + std::to_string(h.cols()) + " != embed_dim " +
                     std::to_string(model.config().embed_dim));
  }
  return a.delta(h, nullptr);
}

EmbeddingBundle student_forward(const Model& model, const Image& image, Modality m, StudentTrace* trace) {
  const ModelVariantConfig& cfg = model.config();
  check_image(cfg, image, channels_for(m), "student_forward");
  const Backbone& b = model.backbone();

  Mat input = image.to_matrix();
  Mat stemmed;
  if (m == Modality::rgb) {
    stemmed = model.rgb_stem().forward(input);
  } else {
    stemmed = model.spatial_stem(m).forward(input, image.height, image.width, trace ? &trace->spatial : nullptr);
  }
  Mat patches = extract_patches(stemmed, image.height, image.width, cfg.patch_size);
  Mat x = embed_tokens(b, patches);
  x.rowwise() += model.modality_embed().value.row(index_of(m));

  if (trace) {
    trace->modality = m;
    trace->height = image.height;
    trace->width = image.width;
    trace->stem_input = std::move(input);
    trace->patches = std::move(patches);
    trace->blocks.resize(b.blocks.size());
    trace->adapters.resize(b.blocks.size());
  }
  for (std::size_t l = 0; l < b.blocks.size(); ++l) {
    x = b.blocks[l].forward(x, trace ? &trace->blocks[l] : nullptr);
    x += model.adapter(static_cast<int>(l), m).delta(x, trace ? &trace->adapters[l] : nullptr);
  }
  Mat y = b.final_norm.forward(x, trace ? &trace->final_norm : nullptr);

  EmbeddingBundle out;
  out.cls = y.row(0);
  out.patches = y.bottomRows(y.rows() - 1);
  out.modality = m;
  return out;
}

std::vector<EmbeddingBundle> student_forward_batch(const Model& model, std::span<const RoutedImage> inputs) {
  std::vector<EmbeddingBundle> out(inputs.size());
  for (Modality m : kAllModalities) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].modality != m) continue;
      if (!inputs[i].image) throw ShapeError("student_forward_batch: null image at position " + std::to_string(i));
      out[i] = student_forward(model, *inputs[i].image, m);
    }
  }
  return out;
}

EmbeddingBundle teacher_forward(const Teacher& teacher, const Image& image) {
  const Backbone& b = teacher.backbone();
  check_image(b.config, image, 3, "teacher_forward");
  Mat x = embed_tokens(b, extract_patches(image.to_matrix(), image.height, image.width, b.config.patch_size));
  for (const auto& blk : b.blocks) x = blk.forward(x, nullptr);
  Mat y = b.final_norm.forward(x, nullptr);
  EmbeddingBundle out;
  out.cls = y.row(0);
  out.patches = y.bottomRows(y.rows() - 1);
  out.modality = Modality::rgb;
  return out;
}

// ---------------------------------------------------------------- backward

void student_backward(Model& model, const StudentTrace& trace, const RowVec& d_cls, const Mat& d_patches) {
  Backbone& b = model.backbone();
  const int n = b.config.num_patches();
  const Modality m = trace.modality;

  Mat dy = Mat::Zero(n + 1, b.config.embed_dim);
  if (d_cls.size() > 0) dy.row(0) = d_cls;
  if (d_patches.rows() > 0) {
    if (d_patches.rows() != n || d_patches.cols() != b.config.embed_dim) {
      throw ShapeError("student_backward: patch gradient has the wrong shape");
    }
    dy.bottomRows(n) = d_patches;
  }

  Mat dx = b.final_norm.backward(trace.final_norm, dy);
  for (int l = static_cast<int>(b.blocks.size()) - 1; l >= 0; --l) {
    dx += model.adapter(l, m).backward(trace.adapters[static_cast<std::size_t>(l)], dx);
    dx = b.blocks[static_cast<std::size_t>(l)].backward(trace.blocks[static_cast<std::size_t>(l)], dx);
  }

  Param& table = model.modality_embed();
  if (table.trainable) table.grad.row(index_of(m)) += dx.colwise().sum();
  if (b.pos_embed.trainable) b.pos_embed.grad += dx;
  if (b.cls_token.trainable) b.cls_token.grad.row(0) += dx.row(0);

  const bool stem_trainable = m == Modality::rgb ? model.rgb_stem().weight.trainable
                                                 : model.spatial_stem(m).conv1.weight.trainable ||
                                                       model.spatial_stem(m).conv2.weight.trainable;
  if (!stem_trainable && !b.patch_embed.weight.trainable && !b.patch_embed.bias.trainable) return;

  Mat dpatches = b.patch_embed.backward(trace.patches, dx.bottomRows(n), stem_trainable);
  if (!stem_trainable) return;
  Mat dstem = scatter_patches(dpatches, trace.height, trace.width, b.config.patch_size);
  if (m == Modality::rgb) {
    model.rgb_stem().backward(trace.stem_input, dstem, false);
  } else {
    model.spatial_stem(m).backward(trace.spatial, dstem);
  }
}

// ---------------------------------------------------------------- freezing

TrainableReport set_trainable(Model& model, const FreezeSpec& spec) {
  const int depth = model.config().depth;
  if (spec.unfrozen_blocks < 0 || spec.unfrozen_blocks > depth) {
    throw ConfigError("unfrozen_blocks=" + std::to_string(spec.unfrozen_blocks) + " outside [0, " +
                      std::to_string(depth) + "]");
  }
  const int first_unfrozen = depth - spec.unfrozen_blocks;

  auto group_trainable = [&](const std::string& g) -> bool {
    if (g.rfind("block.", 0) == 0) return std::stoi(g.substr(6)) >= first_unfrozen;
    if (g == "final_norm") return spec.final_norm;
    if (g == "modality_embed") return spec.modality_table;
    if (g.rfind("adapter.", 0) == 0) return spec.adapters;
    if (g.rfind("stem.", 0) == 0) return spec.stems[static_cast<std::size_t>(index_of(parse_modality(g.substr(5))))];
    return false;  // patch_embed, cls_token, pos_embed
  };
  auto report_group = [](const std::string& g) -> std::string {
    return g.rfind("adapter.", 0) == 0 ? std::string("adapters") : g;
  };

  TrainableReport report;
  std::map<std::string, std::size_t> index;
  model.for_each_param(ParamVisitor([&](const std::string& g, Param& p) {
    const bool on = group_trainable(g);
    p.set_trainable(on);
    const std::string rg = report_group(g);
    auto it = index.find(rg);
    if (it == index.end()) {
      it = index.emplace(rg, report.groups.size()).first;
      report.groups.push_back(GroupCount{rg, on, 0, 0});
    }
    GroupCount& gc = report.groups[it->second];
    const bool is_bias = p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
    gc.parameters += p.size();
    if (!is_bias) gc.weights += p.size();
    (on ? report.trainable_parameters : report.frozen_parameters) += p.size();
  }));
  for (int i = first_unfrozen; i < depth; ++i) report.trainable_blocks.push_back(i);
  return report;
}

}  // namespace specalign
