#include "specalign/train/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>
#include <unordered_map>

#include "specalign/core/bytes.hpp"
#include "specalign/core/errors.hpp"
#include "specalign/model/serialize.hpp"
#include "specalign/train/schedule.hpp"

namespace specalign {

using nlohmann::json;

namespace {

constexpr std::size_t kValBatch = 16;
constexpr std::uint64_t kValPatchSeed = 0x7a11d47e;
constexpr std::string_view kSamplerMagic = "SASAMPL1";
constexpr std::string_view kOptimizerMagic = "SAADAMW1";

std::size_t term_index(LossTerm t) { return static_cast<std::size_t>(t); }

Mat stack_rows(const std::vector<RowVec>& rows) {
  Mat m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i];
  return m;
}

double trainable_grad_norm(Model& model) {
  double sq = 0.0;
  model.for_each_param(ParamVisitor([&sq](const std::string&, Param& p) {
    if (p.trainable) sq += p.grad.squaredNorm();
  }));
  return std::sqrt(sq);
}

json losses_json(const LossReport& r) {
  json j = json::object();
  for (LossTerm t : kAllLossTerms) {
    if (auto v = r.term(t)) j[std::string(to_string(t))] = *v;
  }
  return j;
}

json weights_json(const LossReport& r) {
  json j = json::object();
  for (LossTerm t : kAllLossTerms) {
    if (r.is_active(t)) j[std::string(to_string(t))] = r.weights[term_index(t)];
  }
  return j;
}

json eval_json(const ValidationResult& v, const TrainState& s, const char* when) {
  json j = v.alignment.to_json();
  j["type"] = "eval";
  j["when"] = when;
  j["stage"] = std::string(to_string(s.stage));
  j["epoch"] = s.epoch;
  j["global_step"] = s.global_step;
  j["val_loss"] = v.val_loss;
  j["rgb_teacher_cosine"] = v.rgb_teacher_cosine;
  return j;
}

std::array<std::size_t, 3> dataset_sizes(const PairedDataset& d) {
  return {d.of(Modality::nir).size(), d.of(Modality::swir).size(), d.of(Modality::lwir).size()};
}

void refuse_model_only(const TrainState& s) {
  if (s.model_only) {
    throw CheckpointError("state was restored model-only; training needs a full checkpoint (optimizer, queue, sampler, rng)");
  }
}

}  // namespace

bool BestRecord::improved_by(double top1, double loss) const {
  if (!valid) return true;
  if (top1 != mean_top1) return top1 > mean_top1;
  return loss < val_loss;
}

TrainState init_state(const ModelVariantConfig& cfg, const std::string& variant, std::uint64_t seed) {
  TrainState s;
  s.model = build_model(cfg, seed);
  s.teacher = make_teacher(s.model);
  s.rng = Rng(mix_seed(seed, 0x7a1a));
  s.variant = variant;
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------- checkpoint

CheckpointContainer checkpoint_state(const TrainState& s) {
  refuse_model_only(s);
  CheckpointContainer c;
  json meta = {{"format", "specalign-train-state"},
               {"variant", s.variant},
               {"seed", s.seed},
               {"stage", std::string(to_string(s.stage))},
               {"stage_started", s.stage_started},
               {"stage_finished", s.stage_finished},
               {"epoch", s.epoch},
               {"step", s.step},
               {"global_step", s.global_step},
               {"best", {{"valid", s.best.valid}, {"mean_top1", s.best.mean_top1}, {"val_loss", s.best.val_loss},
                         {"epoch", s.best.epoch}}},
               {"stage_config", s.stage_config},
               {"has_queue", s.queue.has_value()}};
  const std::string text = meta.dump();
  c.add("meta", std::vector<std::uint8_t>(text.begin(), text.end()));
  c.add("model", encode_model(s.model));
  c.add("teacher", encode_teacher(s.teacher));
  {
    ByteWriter w;
    w.magic(kOptimizerMagic);
    s.optimizer.serialize(w);
    c.add("optimizer", w.take());
  }
  if (s.queue) c.add("queue", s.queue->checkpoint());
  {
    ByteWriter w;
    w.magic(kSamplerMagic);
    s.sampler.serialize(w);
    c.add("sampler", w.take());
  }
  const std::string rng = s.rng.serialize();
  c.add("rng", std::vector<std::uint8_t>(rng.begin(), rng.end()));
  return c;
}

TrainState restore_state(const CheckpointContainer& c, RestoreMode mode) {
  TrainState s;
  json meta;
  try {
    const auto bytes = c.get("meta");
    meta = json::parse(bytes.begin(), bytes.end());
    s.variant = meta.at("variant").get<std::string>();
    s.seed = meta.at("seed").get<std::uint64_t>();
    s.stage = parse_stage(meta.at("stage").get<std::string>());
    s.stage_started = meta.at("stage_started").get<bool>();
    s.stage_finished = meta.at("stage_finished").get<bool>();
    s.epoch = meta.at("epoch").get<long long>();
    s.step = meta.at("step").get<long long>();
    s.global_step = meta.at("global_step").get<long long>();
    const auto& b = meta.at("best");
    s.best.valid = b.at("valid").get<bool>();
    s.best.mean_top1 = b.at("mean_top1").get<double>();
    s.best.val_loss = b.at("val_loss").get<double>();
    s.best.epoch = b.at("epoch").get<long long>();
    s.stage_config = meta.at("stage_config");
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint meta segment is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint meta segment is malformed: ") + e.what());
  }
  s.model = decode_model(c.get("model"));
  s.teacher = decode_teacher(c.get("teacher"));
  if (mode == RestoreMode::model_only) {
    s.model_only = true;
    return s;
  }
  {
    ByteReader r(c.get("optimizer"), "optimizer segment");
    r.expect_magic(kOptimizerMagic);
    s.optimizer = AdamW::deserialize(r);
    if (!r.done()) throw CheckpointError("optimizer segment: trailing bytes");
  }
  if (c.has("queue")) s.queue = MemoryQueue::restore(c.get("queue"), static_cast<std::size_t>(s.model.config().embed_dim));
  {
    ByteReader r(c.get("sampler"), "sampler segment");
    r.expect_magic(kSamplerMagic);
    s.sampler = RoundRobinSampler::deserialize(r);
    if (!r.done()) throw CheckpointError("sampler segment: trailing bytes");
  }
  const auto rng = c.get("rng");
  try {
    s.rng.deserialize(std::string(rng.begin(), rng.end()));
  } catch (const Error& e) {
    throw CheckpointError(std::string("rng segment: ") + e.what());
  }
  // Freezing is not serialized; re-derive it from the stage configuration.
  if (s.stage_started && !s.stage_config.is_null()) {
    StageConfig cfg;
    cfg.stage = s.stage;
    apply_overrides(cfg, [&] {
      json o = s.stage_config;
      o.erase("stage");
      return o;
    }());
    set_trainable(s.model, cfg.freeze);
  }
  return s;
}

// ---------------------------------------------------------------- teacher cache

void TeacherCache::sync(const Teacher& teacher) {
  const std::uint64_t sum = teacher.checksum();
  if (checksum_ != sum) rows_.clear();
  checksum_ = sum;
}

const RowVec& TeacherCache::cls(const Teacher& teacher, const std::shared_ptr<const Image>& rgb) {
  auto it = rows_.find(rgb.get());
  if (it == rows_.end()) it = rows_.emplace(rgb.get(), std::pair{rgb, teacher_forward(teacher, *rgb).cls}).first;
  return it->second.second;
}

// ---------------------------------------------------------------- step

StepResult train_step(TrainState& state, const StageConfig& cfg, Modality modality,
                      std::span<const PairedSample> batch, double lr, const StepOptions& opts) {
  refuse_model_only(state);
  if (modality == Modality::rgb) throw RoutingError("train_step: batches carry a multispectral modality");
  if (batch.empty()) throw ShapeError("train_step: empty batch");
  Model& model = state.model;
  const auto n = batch.size();
  state.teacher_cls.sync(state.teacher);

  // (1) teacher on RGB, (2) student on MS, (3) student on RGB.
  std::vector<RowVec> t_cls(n), ms_cls(n), rgb_cls(n);
  std::vector<Mat> ms_patches(n), rgb_patches(n);
  std::vector<StudentTrace> ms_trace(n), rgb_trace(n);
  for (std::size_t i = 0; i < n; ++i) {
    const PairedSample& s = batch[i];
    if (s.modality != modality) throw RoutingError("train_step: batch mixes modalities");
    t_cls[i] = state.teacher_cls.cls(state.teacher, s.rgb);
    EmbeddingBundle ms = student_forward(model, *s.ms, modality, &ms_trace[i]);
    EmbeddingBundle rgb = student_forward(model, *s.rgb, Modality::rgb, &rgb_trace[i]);
    ms_cls[i] = std::move(ms.cls);
    ms_patches[i] = std::move(ms.patches);
    rgb_cls[i] = std::move(rgb.cls);
    rgb_patches[i] = std::move(rgb.patches);
  }
  const Mat z_t = stack_rows(t_cls);
  const Mat z_ms = stack_rows(ms_cls);
  const Mat z_rgb = stack_rows(rgb_cls);

  // (4) losses for the active terms.
  // state.epoch counts completed epochs, so it is the index of the running epoch.
  const bool in_la_warmup = state.epoch < cfg.la_warmup_epochs;
  LossWeights w = cfg.weights;
  if (in_la_warmup && w.neighborhood) w.neighborhood = 0.0;
  TermMask active{};
  for (LossTerm t : {LossTerm::distill, LossTerm::contrast, LossTerm::patch}) {
    active[term_index(t)] = !cfg.disabled[term_index(t)];
  }
  if (cfg.uses_neighborhood()) {
    const bool have_queue = state.queue && !state.queue->empty();
    if (!have_queue && !in_la_warmup) {
      throw QueueEmptyError("train_step: stage " + std::string(to_string(cfg.stage)) +
                            " applies the neighborhood term but the teacher queue is empty");
    }
    active[term_index(LossTerm::neighborhood)] = have_queue;
  }

  TermValues values{};
  Mat g_distill, g_rgb_c, g_ms_c, g_la;
  std::vector<Mat> g_p_rgb, g_p_ms;
  if (active[term_index(LossTerm::distill)]) values[term_index(LossTerm::distill)] = distill_loss(z_ms, z_t, &g_distill);
  if (active[term_index(LossTerm::contrast)]) {
    values[term_index(LossTerm::contrast)] = contrastive_loss(z_rgb, z_ms, w.tau, &g_rgb_c, &g_ms_c);
  }
  if (active[term_index(LossTerm::patch)]) {
    values[term_index(LossTerm::patch)] =
        patch_loss(rgb_patches, ms_patches, w.patch_sample_ratio, state.rng, &g_p_rgb, &g_p_ms);
  }
  if (active[term_index(LossTerm::neighborhood)]) {
    values[term_index(LossTerm::neighborhood)] = neighborhood_kl(z_t, z_ms, *state.queue, w.top_k, w.tau, &g_la);
  }
  StepResult result;
  result.report = total_loss(values, w, active);
  const auto weight = [&](LossTerm t) { return result.report.weights[term_index(t)]; };

  // Optional audit: the gradient contributed by the weighted neighborhood term alone.
  if (opts.audit_la_gradient) {
    model.zero_grad();
    if (active[term_index(LossTerm::neighborhood)]) {
      const double la = weight(LossTerm::neighborhood);
      for (std::size_t i = 0; i < n; ++i) {
        const RowVec d = la * g_la.row(static_cast<Eigen::Index>(i));
        student_backward(model, ms_trace[i], d, Mat());
      }
    }
    result.la_grad_norm = trainable_grad_norm(model);
  }

  // (5) backward of the weighted total and the optimizer step.
  model.zero_grad();
  const int d = model.config().embed_dim;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    RowVec d_ms = RowVec::Zero(d);
    RowVec d_rgb = RowVec::Zero(d);
    if (active[term_index(LossTerm::distill)]) d_ms += weight(LossTerm::distill) * g_distill.row(row);
    if (active[term_index(LossTerm::contrast)]) {
      d_ms += weight(LossTerm::contrast) * g_ms_c.row(row);
      d_rgb += weight(LossTerm::contrast) * g_rgb_c.row(row);
    }
    if (active[term_index(LossTerm::neighborhood)]) d_ms += weight(LossTerm::neighborhood) * g_la.row(row);
    Mat dp_ms, dp_rgb;
    if (active[term_index(LossTerm::patch)]) {
      dp_ms = weight(LossTerm::patch) * g_p_ms[i];
      dp_rgb = weight(LossTerm::patch) * g_p_rgb[i];
    }
    student_backward(model, ms_trace[i], d_ms, dp_ms);
    student_backward(model, rgb_trace[i], d_rgb, dp_rgb);
  }
  state.optimizer.begin_step();
  model.for_each_param(ParamVisitor([&](const std::string&, Param& p) { state.optimizer.update(p, lr); }));

  // (6) queue update after the optimizer step.
  if (cfg.uses_neighborhood()) {
    if (!state.queue) throw QueueEmptyError("train_step: no teacher queue allocated for this stage");
    state.queue->push_batch(z_t);
  }
  return result;
}

// ---------------------------------------------------------------- evaluation

ValidationResult evaluate_split(const Model& model, const Teacher& teacher, const PairedDataset& data,
                                const std::string& stage_tag, TeacherCache* cache) {
  if (cache) cache->sync(teacher);
  const LossWeights w = LossWeights::stage_one();
  Rng patch_rng(kValPatchSeed);
  ValidationResult out;
  SplitEmbeddings emb;
  const int d = model.config().embed_dim;

  struct RgbView {
    RowVec teacher;
    EmbeddingBundle student;
  };
  std::unordered_map<std::uint64_t, RgbView> rgb;
  double loss_sum = 0.0;
  std::size_t loss_batches = 0;

  for (Modality m : kSpectralModalities) {
    const auto& samples = data.of(m);
    if (samples.empty()) continue;
    SplitEmbeddings::PerModality pm;
    pm.modality = m;
    pm.rgb.resize(static_cast<Eigen::Index>(samples.size()), d);
    pm.ms.resize(static_cast<Eigen::Index>(samples.size()), d);
    std::vector<Mat> ms_patches(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const PairedSample& s = samples[i];
      auto it = rgb.find(s.scene_id);
      if (it == rgb.end()) {
        it = rgb.emplace(s.scene_id, RgbView{cache ? cache->cls(teacher, s.rgb) : teacher_forward(teacher, *s.rgb).cls,
                                             student_forward(model, *s.rgb, Modality::rgb)})
                 .first;
      }
      EmbeddingBundle ms = student_forward(model, *s.ms, m);
      pm.rgb.row(static_cast<Eigen::Index>(i)) = it->second.student.cls;
      pm.ms.row(static_cast<Eigen::Index>(i)) = ms.cls;
      ms_patches[i] = std::move(ms.patches);
      pm.scene_ids.push_back(s.scene_id);
    }
    for (std::size_t begin = 0; begin < samples.size(); begin += kValBatch) {
      const std::size_t end = std::min(begin + kValBatch, samples.size());
      const auto rows = static_cast<Eigen::Index>(end - begin);
      Mat z_t(rows, d);
      std::vector<Mat> p_rgb, p_ms;
      for (std::size_t i = begin; i < end; ++i) {
        const RgbView& v = rgb.at(samples[i].scene_id);
        z_t.row(static_cast<Eigen::Index>(i - begin)) = v.teacher;
        p_rgb.push_back(v.student.patches);
        p_ms.push_back(ms_patches[i]);
      }
      const Mat z_ms = pm.ms.middleRows(static_cast<Eigen::Index>(begin), rows);
      const Mat z_rgb = pm.rgb.middleRows(static_cast<Eigen::Index>(begin), rows);
      TermValues v{};
      v[term_index(LossTerm::distill)] = distill_loss(z_ms, z_t);
      v[term_index(LossTerm::contrast)] = contrastive_loss(z_rgb, z_ms, w.tau);
      v[term_index(LossTerm::patch)] = patch_loss(p_rgb, p_ms, w.patch_sample_ratio, patch_rng);
      loss_sum += total_loss(v, w, TermMask{true, true, true, false}).total;
      ++loss_batches;
    }
    emb.modalities.push_back(std::move(pm));
  }
  out.alignment = alignment_report(emb, stage_tag);
  out.val_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
  double cos_sum = 0.0;
  for (const auto& [id, v] : rgb) {
    cos_sum += v.student.cls.dot(v.teacher) / (v.student.cls.norm() * v.teacher.norm());
  }
  out.rgb_teacher_cosine = rgb.empty() ? 0.0 : cos_sum / static_cast<double>(rgb.size());
  return out;
}

// ---------------------------------------------------------------- stage loop

namespace {

void open_stage(TrainState& s, const StageConfig& cfg, const PairedDataset& train) {
  const std::string tag = "stage " + std::string(to_string(cfg.stage));
  switch (cfg.stage) {
    case StageId::one:
      if (s.stage_started) throw ConfigError(tag + " needs a freshly initialized state");
      break;
    case StageId::two:
      if (!s.stage_started || s.stage != StageId::one) throw ConfigError(tag + " must resume from a stage I checkpoint");
      break;
    case StageId::three:
      if (!s.stage_started || s.stage != StageId::two) throw ConfigError(tag + " must resume from a stage II checkpoint");
      break;
  }
  s.stage = cfg.stage;
  s.stage_started = true;
  s.stage_finished = false;
  s.epoch = 0;
  s.step = 0;
  s.best = BestRecord{};
  s.optimizer = AdamW(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  s.sampler = RoundRobinSampler(dataset_sizes(train), static_cast<std::size_t>(cfg.batch_size));
  s.stage_config = to_json(cfg);
  if (cfg.uses_neighborhood()) {
    const auto dim = static_cast<std::size_t>(s.model.config().embed_dim);
    if (!s.queue || s.queue->capacity() != cfg.queue_capacity || s.queue->dim() != dim) {
      s.queue.emplace(cfg.queue_capacity, dim);
    }
  }
}

void write_checkpoint(const std::optional<std::string>& dir, const std::string& name,
                      const std::vector<std::uint8_t>& bytes) {
  if (!dir) return;
  std::error_code ec;
  std::filesystem::create_directories(*dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + *dir + "': " + ec.message());
  write_file_atomic((std::filesystem::path(*dir) / name).string(), bytes);
}

}  // namespace

StageResult run_stage(TrainState& s, const StageConfig& cfg, const StageData& data, const RunOptions& opts) {
  refuse_model_only(s);
  if (!data.train) throw ConfigError("run_stage: no training data");
  cfg.validate(s.model.config());
  StageResult result;
  auto emit = [&](json j) {
    if (opts.sink) opts.sink(j);
    result.metrics.push_back(std::move(j));
  };

  const bool resuming = s.stage_started && s.stage == cfg.stage && !s.stage_finished && s.step > 0;
  if (!resuming) open_stage(s, cfg, *data.train);
  if (s.sampler.sizes() != dataset_sizes(*data.train) ||
      s.sampler.batch_size() != static_cast<std::size_t>(cfg.batch_size)) {
    throw ConfigError("run_stage: training data or batch size differ from the checkpointed sampler");
  }
  result.trainable = set_trainable(s.model, cfg.freeze);
  result.checksums_before = s.model.group_checksums();
  result.teacher_checksum_before = s.teacher.checksum();

  const long long total = static_cast<long long>(cfg.epochs) * static_cast<long long>(s.sampler.batches_per_epoch());
  const std::string stage_name(to_string(cfg.stage));

  if (opts.eval_at_start && data.val && s.step == 0) {
    result.start_eval = evaluate_split(s.model, s.teacher, *data.val, stage_name, &s.teacher_cls);
    emit(eval_json(*result.start_eval, s, "start"));
  }

  long long done_here = 0;
  while (s.step < total && (!opts.max_steps || done_here < *opts.max_steps)) {
    const SampledBatch b = s.sampler.next(s.rng);
    const auto& pool = data.train->of(b.modality);
    std::vector<PairedSample> batch;
    batch.reserve(b.indices.size());
    for (std::size_t i : b.indices) batch.push_back(pool[i]);

    const double lr = lr_at(s.step, total, cfg.base_lr, cfg.warmup_fraction);
    const StepResult r = train_step(s, cfg, b.modality, batch, lr, opts.step);
    ++s.step;
    ++s.global_step;
    ++done_here;

    json rec = {{"type", "step"},
                {"stage", stage_name},
                {"epoch", b.epoch},
                {"step", s.step},
                {"global_step", s.global_step},
                {"modality", std::string(to_string(b.modality))},
                {"batch", b.indices.size()},
                {"lr", lr},
                {"losses", losses_json(r.report)},
                {"weights", weights_json(r.report)},
                {"total", r.report.total}};
    if (s.queue) rec["queue_fill"] = s.queue->fill();
    if (r.la_grad_norm) rec["la_grad_norm"] = *r.la_grad_norm;
    emit(std::move(rec));

    if (b.last_in_epoch) {
      s.epoch = static_cast<long long>(s.sampler.epoch());
      if (data.val) {
        ValidationResult v = evaluate_split(s.model, s.teacher, *data.val, stage_name, &s.teacher_cls);
        emit(eval_json(v, s, "epoch"));
        if (s.best.improved_by(v.alignment.mean_top1(), v.val_loss)) {
          s.best = BestRecord{true, v.alignment.mean_top1(), v.val_loss, s.epoch};
          result.best_checkpoint = checkpoint_state(s).encode();
          result.best_eval = v;
          write_checkpoint(opts.checkpoint_dir, "stage" + stage_name + "_best.ckpt", result.best_checkpoint);
        }
        result.final_eval = std::move(v);
      }
    }
  }

  result.checksums_after = s.model.group_checksums();
  result.teacher_checksum_after = s.teacher.checksum();
  if (s.step >= total) {
    s.stage_finished = true;
    result.completed = true;
    result.final_checkpoint = checkpoint_state(s).encode();
    if (result.best_checkpoint.empty()) {
      result.best_checkpoint = result.final_checkpoint;
      result.best_eval = result.final_eval;
    }
    write_checkpoint(opts.checkpoint_dir, "stage" + stage_name + "_final.ckpt", result.final_checkpoint);
  }
  return result;
}

CurriculumResult run_curriculum(const VariantPreset& preset, std::uint64_t seed, const StageData& data,
                                const CurriculumOptions& opts, const std::optional<CheckpointContainer>& resume) {
  if (opts.stages.empty()) throw ConfigError("run_curriculum: no stages requested");
  for (std::size_t i = 1; i < opts.stages.size(); ++i) {
    if (static_cast<int>(opts.stages[i]) != static_cast<int>(opts.stages[i - 1]) + 1) {
      throw ConfigError("run_curriculum: stages must be consecutive and in order");
    }
  }
  CurriculumResult out;
  std::optional<TrainState> state;
  if (opts.stages.front() == StageId::one) {
    state = init_state(preset.model, preset.model.name, seed);
  } else {
    if (!resume) {
      throw ConfigError("stage " + std::string(to_string(opts.stages.front())) + " needs a checkpoint from stage " +
                        std::string(to_string(static_cast<StageId>(static_cast<int>(opts.stages.front()) - 1))));
    }
    state = restore_state(*resume);
  }

  for (std::size_t i = 0; i < opts.stages.size(); ++i) {
    const StageId id = opts.stages[i];
    const StageConfig& cfg = preset.stage(id);
    if (i > 0) {
      // Stage II continues from stage I's best checkpoint, stage III from stage II's final one.
      const StageResult& prev = out.stages.at(opts.stages[i - 1]);
      const auto& bytes = id == StageId::two ? prev.best_checkpoint : prev.final_checkpoint;
      state = restore_state(CheckpointContainer::decode(bytes));
    }
    RunOptions ro;
    if (auto it = opts.step_options.find(id); it != opts.step_options.end()) ro.step = it->second;
    ro.eval_at_start = opts.eval_at_start;
    ro.sink = opts.sink;
    ro.checkpoint_dir = opts.out_dir;
    out.stages.emplace(id, run_stage(*state, cfg, data, ro));
  }
  return out;
}

}  // namespace specalign
