#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "specalign/core/errors.hpp"
#include "specalign/model/model.hpp"
#include "test_support.hpp"

using namespace specalign;
using oracle::Rows;
using specalign::testing::max_relative_error;
using specalign::testing::random_image;
using specalign::testing::random_matrix;

namespace {

ModelVariantConfig tiny_config() {
  ModelVariantConfig c;
  c.name = "tiny";
  c.embed_dim = 8;
  c.depth = 2;
  c.num_heads = 2;
  c.patch_size = 2;
  c.image_size = 6;
  c.adapter_bottleneck = 2;
  return c;
}

// ---- loop oracle for the student forward pass -------------------------------------

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Rows linear(const Rows& x, const Linear& l) {
  const Rows w = oracle::to_rows(l.weight.value);
  Rows y(x.size(), std::vector<double>(w.size()));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t o = 0; o < w.size(); ++o) {
      double s = l.bias.value(0, static_cast<Eigen::Index>(o));
      for (std::size_t i = 0; i < x[r].size(); ++i) s += x[r][i] * w[o][i];
      y[r][o] = s;
    }
  }
  return y;
}

Rows layer_norm(const Rows& x, const LayerNorm& ln) {
  Rows y = x;
  for (auto& row : y) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      row[i] = (row[i] - mean) / std::sqrt(var + 1e-6) * ln.gamma.value(0, c) + ln.beta.value(0, c);
    }
  }
  return y;
}

Rows apply_gelu(Rows x) {
  for (auto& row : x) {
    for (double& v : row) v = gelu(v);
  }
  return x;
}

Rows add(Rows a, const Rows& b) {
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t c = 0; c < a[r].size(); ++c) a[r][c] += b[r][c];
  }
  return a;
}

Rows attention(const Rows& x, const Attention& attn) {
  const Rows qkv = linear(x, attn.qkv);
  const std::size_t t = x.size();
  const std::size_t d = x[0].size();
  const std::size_t dh = d / static_cast<std::size_t>(attn.num_heads);
  Rows merged(t, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < static_cast<std::size_t>(attn.num_heads); ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> w(t);
      double mx = -1e300;
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += qkv[i][h * dh + e] * qkv[j][d + h * dh + e];
        w[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, w[j]);
      }
      double z = 0.0;
      for (double& v : w) z += (v = std::exp(v - mx));
      for (std::size_t j = 0; j < t; ++j) {
        for (std::size_t e = 0; e < dh; ++e) merged[i][h * dh + e] += w[j] / z * qkv[j][2 * d + h * dh + e];
      }
    }
  }
  return linear(merged, attn.proj);
}

Rows block(const Rows& x, const TransformerBlock& b) {
  const Rows h = add(x, attention(layer_norm(x, b.norm1), b.attn));
  return add(h, linear(apply_gelu(linear(layer_norm(h, b.norm2), b.fc1)), b.fc2));
}

// planes[c][y * w + x]
Rows conv3x3(const Rows& planes, int h, int w, const Conv3x3& conv) {
  Rows out(static_cast<std::size_t>(conv.out_channels), std::vector<double>(static_cast<std::size_t>(h * w)));
  for (int o = 0; o < conv.out_channels; ++o) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = conv.bias.value(o, 0);
        for (int c = 0; c < conv.in_channels; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = std::clamp(y + ky - 1, 0, h - 1);
              const int xx = std::clamp(x + kx - 1, 0, w - 1);
              s += conv.weight.value(o, c * 9 + ky * 3 + kx) * planes[static_cast<std::size_t>(c)][static_cast<std::size_t>(yy * w + xx)];
            }
          }
        }
        out[static_cast<std::size_t>(o)][static_cast<std::size_t>(y * w + x)] = s;
      }
    }
  }
  return out;
}

Rows spatial_stem_raw(const Rows& planes, int h, int w, const SpatialStem& stem) {
  return conv3x3(apply_gelu(conv3x3(planes, h, w, stem.conv1)), h, w, stem.conv2);
}

std::pair<double, double> plane_moments(const std::vector<double>& p) {
  double mean = 0.0;
  for (double v : p) mean += v;
  mean /= static_cast<double>(p.size());
  double var = 0.0;
  for (double v : p) var += (v - mean) * (v - mean);
  return {mean, var / static_cast<double>(p.size())};
}

Rows spatial_stem(const Rows& planes, int h, int w, const SpatialStem& stem) {
  Rows out = spatial_stem_raw(planes, h, w, stem);
  for (auto& p : out) {
    const auto [mean, var] = plane_moments(p);
    for (double& v : p) v = (v - mean) / std::sqrt(var + 1e-5);
  }
  return out;
}

Rows image_planes(const Image& img) {
  Rows planes(static_cast<std::size_t>(img.channels));
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) planes[static_cast<std::size_t>(c)].push_back(img.at(c, y, x));
    }
  }
  return planes;
}

Rows student_oracle(const Model& model, const Image& img, Modality m) {
  const ModelVariantConfig& cfg = model.config();
  const int h = img.height;
  const int w = img.width;
  Rows planes = image_planes(img);
  if (m == Modality::rgb) {
    Rows mixed(3, std::vector<double>(planes[0].size()));
    for (int o = 0; o < 3; ++o) {
      for (std::size_t i = 0; i < planes[0].size(); ++i) {
        double s = model.rgb_stem().bias.value(o, 0);
        for (int c = 0; c < 3; ++c) s += model.rgb_stem().weight.value(o, c) * planes[static_cast<std::size_t>(c)][i];
        mixed[static_cast<std::size_t>(o)][i] = s;
      }
    }
    planes = mixed;
  } else {
    planes = spatial_stem(planes, h, w, model.spatial_stem(m));
  }

  const int p = cfg.patch_size;
  Rows patches;
  for (int gy = 0; gy < h / p; ++gy) {
    for (int gx = 0; gx < w / p; ++gx) {
      std::vector<double> row;
      for (int c = 0; c < 3; ++c) {
        for (int py = 0; py < p; ++py) {
          for (int px = 0; px < p; ++px) {
            row.push_back(planes[static_cast<std::size_t>(c)][static_cast<std::size_t>((gy * p + py) * w + gx * p + px)]);
          }
        }
      }
      patches.push_back(row);
    }
  }
  const Backbone& b = model.backbone();
  Rows x = oracle::to_rows(b.cls_token.value);
  for (const auto& row : linear(patches, b.patch_embed)) x.push_back(row);
  const Rows pos = oracle::to_rows(b.pos_embed.value);
  const Rows table = oracle::to_rows(model.modality_embed().value);
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (std::size_t c = 0; c < x[t].size(); ++c) x[t][c] += pos[t][c] + table[static_cast<std::size_t>(index_of(m))][c];
  }
  for (int l = 0; l < cfg.depth; ++l) {
    x = block(x, b.blocks[static_cast<std::size_t>(l)]);
    const Adapter& a = model.adapter(l, m);
    x = add(x, linear(apply_gelu(linear(x, a.down)), a.up));
  }
  return layer_norm(x, b.final_norm);
}

// Scale every adapter up so that its contribution is visible to the checks.
void amplify_adapters(Model& model, double factor) {
  model.for_each_param(ParamVisitor([factor](const std::string& g, Param& p) {
    if (g.rfind("adapter.", 0) == 0) p.value *= factor;
  }));
}

Image gray_image(Rng& rng, int size) { return random_image(rng, 1, size); }

}  // namespace

TEST_CASE("presets and configuration errors") {
  const ModelVariantConfig toy = model_preset("toy");
  CHECK(toy.embed_dim == 64);
  CHECK(toy.depth == 4);
  CHECK(toy.num_heads == 4);
  CHECK(toy.patch_size == 8);
  CHECK(toy.image_size == 64);
  CHECK(toy.num_tokens() == 65);
  CHECK(model_preset("vit-s").embed_dim == 384);
  CHECK(model_preset("vit-b").embed_dim == 768);
  CHECK(model_preset("vit-l").depth == 24);
  CHECK(model_preset("vit-g").embed_dim == 1536);
  CHECK(model_preset("vit-g").depth == 40);
  CHECK_THROWS_AS(model_preset("vit-h"), ConfigError);

  CHECK(adapter_instance_count(toy) == 16);
  CHECK(adapter_instance_count(model_preset("vit-b")) == 48);
  CHECK(adapter_weight_count(768) == 294912);
  CHECK(adapter_param_count(768) - adapter_weight_count(768) == 768 / 4 + 768);

  ModelVariantConfig bad = toy;
  bad.adapter_bottleneck = 10;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("adapter_bottleneck"), ConfigError);
  bad = toy;
  bad.num_heads = 5;
  CHECK_THROWS_AS(build_model(bad, 1), ConfigError);
  bad = toy;
  bad.image_size = 60;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = toy;
  bad.num_modalities = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("construction is deterministic in the seed") {
  const ModelVariantConfig cfg = model_preset("toy");
  const Model a = build_model(cfg, 7);
  const Model b = build_model(cfg, 7);
  const Model c = build_model(cfg, 8);
  CHECK(a.checksum() == b.checksum());
  CHECK(a.checksum() != c.checksum());
  CHECK(a.adapter_count() == 16);
  CHECK(make_teacher(a).checksum() == make_teacher(b).checksum());

  // Teacher starts as an exact copy of the backbone.
  const Teacher t = make_teacher(a);
  std::vector<Mat> backbone;
  a.for_each_param(ConstParamVisitor([&](const std::string& g, const Param& p) {
    if (g.rfind("stem.", 0) != 0 && g.rfind("adapter.", 0) != 0 && g != "modality_embed") backbone.push_back(p.value);
  }));
  std::size_t i = 0;
  t.for_each_param(ConstParamVisitor([&](const std::string&, const Param& p) {
    REQUIRE(i < backbone.size());
    CHECK(p.value == backbone[i++]);
  }));
  CHECK(i == backbone.size());
}

TEST_CASE("rgb stem") {
  const Model model = build_model(tiny_config(), 1);
  Rng rng(2);
  const Image img = random_image(rng, 3, 6);
  CHECK(rgb_stem_forward(model, img) == img.to_matrix());

  Model doubled = build_model(tiny_config(), 1);
  doubled.rgb_stem().weight.value = 2.0 * Mat::Identity(3, 3);
  CHECK(max_relative_error(rgb_stem_forward(doubled, img), 2.0 * img.to_matrix()) < 1e-15);

  Model mixing = build_model(tiny_config(), 1);
  mixing.rgb_stem().weight.value = random_matrix(rng, 3, 3);
  mixing.rgb_stem().bias.value = random_matrix(rng, 3, 1);
  const Mat got = rgb_stem_forward(mixing, img);
  for (int o = 0; o < 3; ++o) {
    for (int i = 0; i < 36; ++i) {
      double s = mixing.rgb_stem().bias.value(o, 0);
      for (int c = 0; c < 3; ++c) s += mixing.rgb_stem().weight.value(o, c) * img.pixels[static_cast<std::size_t>(c * 36 + i)];
      CHECK(got(o, i) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(rgb_stem_forward(model, gray_image(rng, 6)), ShapeError);
}

TEST_CASE("spatial stem") {
  const Model model = build_model(tiny_config(), 3);
  Rng rng(4);

  SUBCASE("matches the loop oracle") {
    for (Modality m : kSpectralModalities) {
      for (int size : {3, 5, 6}) {
        const Image img = gray_image(rng, size);
        const Mat got = spatial_stem_forward(model, img, m);
        REQUIRE(got.rows() == 3);
        REQUIRE(got.cols() == size * size);
        const Rows want = spatial_stem(image_planes(img), size, size, model.spatial_stem(m));
        for (int c = 0; c < 3; ++c) {
          for (int i = 0; i < size * size; ++i) {
            CHECK(std::abs(got(c, i) - want[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)]) < 1e-10);
          }
        }
      }
    }
  }

  SUBCASE("output channels are standardised on unit-normal input") {
    for (Modality m : kSpectralModalities) {
      Image img(1, 64, 64);
      for (float& v : img.pixels) v = static_cast<float>(rng.normal(0.0, 1.0));
      const Mat y = spatial_stem_forward(model, img, m);
      for (Eigen::Index c = 0; c < 3; ++c) {
        const double mean = y.row(c).mean();
        const double var = (y.row(c).array() - mean).square().mean();
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-3);
      }
    }
  }

  SUBCASE("output variance on image-range input is raw / (raw + eps)") {
    // Pixels in [0, 1] leave a small raw variance, so eps pulls the result visibly below one.
    for (Modality m : kSpectralModalities) {
      const Image img = gray_image(rng, 64);
      const Mat y = spatial_stem_forward(model, img, m);
      const Rows raw = spatial_stem_raw(image_planes(img), 64, 64, model.spatial_stem(m));
      for (Eigen::Index c = 0; c < 3; ++c) {
        const double mean = y.row(c).mean();
        const double var = (y.row(c).array() - mean).square().mean();
        const double r = plane_moments(raw[static_cast<std::size_t>(c)]).second;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - r / (r + 1e-5)) < 1e-10);
      }
    }
  }

  SUBCASE("a constant image maps to zero") {
    Image flat(1, 6, 6, 0.4f);
    CHECK(spatial_stem_forward(model, flat, Modality::nir).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(spatial_stem_forward(model, gray_image(rng, 6), Modality::rgb), RoutingError);
    CHECK_THROWS_AS(spatial_stem_forward(model, random_image(rng, 3, 6), Modality::nir), ShapeError);
    CHECK_THROWS_AS(spatial_stem_forward(model, gray_image(rng, 2), Modality::nir), ShapeError);
  }
}

TEST_CASE("adapters") {
  Model model = build_model(tiny_config(), 5);
  Rng rng(6);
  const Mat h = random_matrix(rng, 10, 8);
  model.adapter(1, Modality::lwir).up.weight.value.setZero();
  CHECK(adapter_forward(model, h, 1, Modality::lwir).cwiseAbs().maxCoeff() == 0.0);
  CHECK(adapter_forward(model, h, 1, Modality::nir).cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(model.adapter(2, Modality::nir), LookupError);
  CHECK_THROWS_AS(model.adapter(-1, Modality::nir), LookupError);
  CHECK_THROWS_AS(adapter_forward(model, random_matrix(rng, 2, 5), 0, Modality::rgb), ShapeError);
}

TEST_CASE("adapters start close to the identity") {
  Rng rng(7);
  SUBCASE("toy width") {
    const Model model = build_model(model_preset("toy"), 1);
    const Mat h = random_matrix(rng, 65, 64);
    for (int l = 0; l < 4; ++l) {
      for (Modality m : kAllModalities) CHECK(adapter_forward(model, h, l, m).norm() / h.norm() < 0.05);
    }
  }
  SUBCASE("vit-b width") {
    ModelVariantConfig cfg = model_preset("vit-b");
    cfg.depth = 1;
    cfg.image_size = 28;
    const Model model = build_model(cfg, 1);
    const Mat h = random_matrix(rng, 5, 768);
    for (Modality m : kAllModalities) CHECK(adapter_forward(model, h, 0, m).norm() / h.norm() < 0.05);
  }
}

TEST_CASE("student forward matches the loop oracle") {
  Model model = build_model(tiny_config(), 9);
  amplify_adapters(model, 20.0);
  Rng rng(10);
  model.rgb_stem().weight.value += random_matrix(rng, 3, 3, 0.1);
  for (Modality m : kAllModalities) {
    const Image img = random_image(rng, channels_for(m), 6);
    const EmbeddingBundle got = student_forward(model, img, m);
    REQUIRE(got.cls.size() == 8);
    REQUIRE(got.patches.rows() == 9);
    REQUIRE(got.patches.cols() == 8);
    CHECK(got.modality == m);
    const Rows want = student_oracle(model, img, m);
    for (int c = 0; c < 8; ++c) CHECK(std::abs(got.cls(c) - want[0][static_cast<std::size_t>(c)]) < 1e-10);
    for (int r = 0; r < 9; ++r) {
      for (int c = 0; c < 8; ++c) {
        CHECK(std::abs(got.patches(r, c) - want[static_cast<std::size_t>(r + 1)][static_cast<std::size_t>(c)]) < 1e-10);
      }
    }
  }
}

TEST_CASE("student forward on toy shapes and errors") {
  const Model model = build_model(model_preset("toy"), 1);
  Rng rng(11);
  const EmbeddingBundle out = student_forward(model, random_image(rng, 1, 64), Modality::lwir);
  CHECK(out.cls.size() == 64);
  CHECK(out.patches.rows() == 64);
  CHECK(out.patches.cols() == 64);
  CHECK_THROWS_AS(student_forward(model, random_image(rng, 3, 64), Modality::nir), ShapeError);
  CHECK_THROWS_AS(student_forward(model, random_image(rng, 1, 64), Modality::rgb), ShapeError);
  CHECK_THROWS_AS(student_forward(model, random_image(rng, 3, 56), Modality::rgb), ShapeError);

  // The RGB path at init is the teacher plus a small adapter and embedding perturbation.
  const Teacher teacher = make_teacher(model);
  for (int i = 0; i < 5; ++i) {
    const Image img = random_image(rng, 3, 64);
    const RowVec s = student_forward(model, img, Modality::rgb).cls;
    const RowVec t = teacher_forward(teacher, img).cls;
    CHECK(s.dot(t) / (s.norm() * t.norm()) > 0.99);
  }
}

TEST_CASE("teacher forward") {
  ModelVariantConfig cfg = model_preset("vit-b");
  cfg.depth = 1;
  cfg.image_size = 28;
  const Teacher teacher = make_teacher(build_model(cfg, 2));
  Rng rng(12);
  const Image img = random_image(rng, 3, 28);
  const EmbeddingBundle a = teacher_forward(teacher, img);
  CHECK(a.cls.size() == 768);
  CHECK(a.patches.rows() == 4);
  CHECK(teacher_forward(teacher, img).cls == a.cls);
  CHECK_THROWS_AS(teacher_forward(teacher, random_image(rng, 1, 28)), ShapeError);
}

TEST_CASE("batched forward routes each input by modality") {
  Model model = build_model(tiny_config(), 13);
  amplify_adapters(model, 20.0);
  Rng rng(14);
  std::vector<Image> images;
  std::vector<Modality> mods;
  for (int i = 0; i < 12; ++i) {
    const Modality m = modality_from_index(static_cast<int>(rng.index(4)));
    images.push_back(random_image(rng, channels_for(m), 6));
    mods.push_back(m);
  }
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<std::size_t> order(images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    std::vector<RoutedImage> inputs;
    for (std::size_t i : order) inputs.push_back({&images[i], mods[i]});
    const auto out = student_forward_batch(model, inputs);
    REQUIRE(out.size() == images.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
      const EmbeddingBundle alone = student_forward(model, images[order[j]], mods[order[j]]);
      CHECK(out[j].modality == mods[order[j]]);
      CHECK(out[j].cls == alone.cls);
      CHECK(out[j].patches == alone.patches);
    }
  }
  std::vector<RoutedImage> bad{{nullptr, Modality::nir}};
  CHECK_THROWS_AS(student_forward_batch(model, bad), ShapeError);
}

TEST_CASE("same pixels under different modality tags give different embeddings") {
  Model model = build_model(tiny_config(), 15);
  Rng rng(16);
  const Image img = gray_image(rng, 6);
  const RowVec nir = student_forward(model, img, Modality::nir).cls;
  CHECK((student_forward(model, img, Modality::swir).cls - nir).norm() > 1e-6);

  // With SWIR's stem and adapters copied from NIR, only the modality embedding separates them.
  model.spatial_stem(Modality::swir).conv1 = model.spatial_stem(Modality::nir).conv1;
  model.spatial_stem(Modality::swir).conv2 = model.spatial_stem(Modality::nir).conv2;
  for (int l = 0; l < 2; ++l) model.adapter(l, Modality::swir) = model.adapter(l, Modality::nir);
  CHECK((student_forward(model, img, Modality::swir).cls - nir).norm() > 1e-6);
  model.modality_embed().value.row(2) = model.modality_embed().value.row(1);
  CHECK(student_forward(model, img, Modality::swir).cls == nir);
}

TEST_CASE("set_trainable") {
  SUBCASE("stage one contract") {
    Model model = build_model(model_preset("toy"), 1);
    const TrainableReport r = set_trainable(model, FreezeSpec{});
    CHECK(r.trainable_blocks.empty());
    std::map<std::string, bool> on;
    for (const auto& g : r.groups) on[g.group] = g.trainable;
    CHECK_FALSE(on.at("patch_embed"));
    CHECK_FALSE(on.at("cls_token"));
    CHECK_FALSE(on.at("pos_embed"));
    CHECK_FALSE(on.at("stem.rgb"));
    CHECK_FALSE(on.at("block.3"));
    CHECK(on.at("stem.nir"));
    CHECK(on.at("stem.swir"));
    CHECK(on.at("stem.lwir"));
    CHECK(on.at("adapters"));
    CHECK(on.at("modality_embed"));
    CHECK(r.trainable_parameters + r.frozen_parameters == model.parameter_count());

    long long adapters = 0;
    for (const auto& g : r.groups) {
      if (g.group == "adapters") {
        CHECK(g.weights == 16 * adapter_weight_count(64));
        CHECK(g.parameters == 16 * adapter_param_count(64));
        adapters = g.parameters;
      }
    }
    CHECK(adapters > 0);

    // Frozen tensors carry no gradient; trainable ones are zeroed.
    std::as_const(model).for_each_param(ConstParamVisitor([](const std::string&, const Param& p) {
      if (p.trainable) {
        CHECK(p.grad.rows() == p.value.rows());
        CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
      }
    }));
  }

  SUBCASE("last u blocks") {
    Model toy = build_model(model_preset("toy"), 1);
    FreezeSpec spec;
    spec.unfrozen_blocks = 2;
    CHECK(set_trainable(toy, spec).trainable_blocks == std::vector<int>{2, 3});
    spec.unfrozen_blocks = 4;
    CHECK(set_trainable(toy, spec).trainable_blocks.size() == 4);
    spec.unfrozen_blocks = 5;
    CHECK_THROWS_AS(set_trainable(toy, spec), ConfigError);
    spec.unfrozen_blocks = -1;
    CHECK_THROWS_AS(set_trainable(toy, spec), ConfigError);

    // Block selection at the depths of the larger variants, on a narrow width.
    for (auto [depth, u, first] : {std::tuple{12, 6, 6}, std::tuple{40, 10, 30}}) {
      ModelVariantConfig cfg = tiny_config();
      cfg.depth = depth;
      Model deep = build_model(cfg, 1);
      spec.unfrozen_blocks = u;
      const TrainableReport r = set_trainable(deep, spec);
      REQUIRE(r.trainable_blocks.size() == static_cast<std::size_t>(u));
      CHECK(r.trainable_blocks.front() == first);
      CHECK(r.trainable_blocks.back() == depth - 1);
      CHECK(deep.backbone().blocks[static_cast<std::size_t>(first)].fc1.weight.trainable);
      CHECK_FALSE(deep.backbone().blocks[static_cast<std::size_t>(first - 1)].fc1.weight.trainable);
      CHECK_FALSE(deep.backbone().patch_embed.weight.trainable);
    }
  }
}

TEST_CASE("student backward agrees with central differences") {
  ModelVariantConfig cfg = tiny_config();
  cfg.embed_dim = 16;
  cfg.num_heads = 2;
  cfg.patch_size = 4;
  cfg.image_size = 12;
  cfg.adapter_bottleneck = 4;
  Model model = build_model(cfg, 3);
  FreezeSpec spec;
  spec.unfrozen_blocks = 2;
  spec.stems = {true, true, true, true};
  set_trainable(model, spec);
  amplify_adapters(model, 30.0);

  Rng rng(1);
  for (Modality m : {Modality::rgb, Modality::nir}) {
    const Image img = random_image(rng, channels_for(m), 12);
    const RowVec rc = random_matrix(rng, 1, 16);
    const Mat rp = random_matrix(rng, 9, 16);
    auto loss = [&] {
      const EmbeddingBundle b = student_forward(model, img, m);
      return b.cls.dot(rc) + (b.patches.array() * rp.array()).sum();
    };
    model.zero_grad();
    StudentTrace trace;
    student_forward(model, img, m, &trace);
    student_backward(model, trace, rc, rp);

    int checked = 0;
    model.for_each_param(ParamVisitor([&](const std::string& group, Param& p) {
      if (!p.trainable) return;
      if (m == Modality::rgb && group.rfind("stem.", 0) == 0 && group != "stem.rgb") return;
      for (Eigen::Index i = 0; i < std::min<Eigen::Index>(p.value.size(), 6); ++i) {
        const Eigen::Index k = (i * 7919) % p.value.size();
        const double old = p.value.data()[k];
        p.value.data()[k] = old + 1e-5;
        const double up = loss();
        p.value.data()[k] = old - 1e-5;
        const double down = loss();
        p.value.data()[k] = old;
        const double fd = (up - down) / 2e-5;
        INFO(p.name << "[" << k << "]");
        CHECK(std::abs(fd - p.grad.data()[k]) < 1e-5 * std::max(1.0, std::abs(fd)));
        ++checked;
      }
    }));
    CHECK(checked > 50);
  }
}
