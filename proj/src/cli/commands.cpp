#include "specalign/cli/commands.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "specalign/core/bytes.hpp"
#include "specalign/core/errors.hpp"
#include "specalign/data/dataset.hpp"
#include "specalign/eval/alignment.hpp"
#include "specalign/eval/probe.hpp"
#include "specalign/model/serialize.hpp"
#include "specalign/train/trainer.hpp"

namespace specalign {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
};

// Every key the --config document may carry.
const std::set<std::string> kConfigKeys{"variant",       "seed",         "deterministic",     "out",
                                        "data",          "stages",       "stage_overrides",   "disable_loss",
                                        "resume",        "audit_la_gradient", "scenes",       "split",
                                        "modality_ratios", "image_size", "checkpoint",        "count",
                                        "probe_epochs",  "probe_lr"};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file '" + path + "' must hold an object");
  for (const auto& [key, value] : j.items()) {
    if (!kConfigKeys.count(key)) throw ConfigError("unknown config key '" + key + "' in '" + path + "'");
  }
  return j;
}

template <class T>
T pick(const json& cfg, const char* key, const std::optional<T>& flag, T fallback) {
  if (flag) return *flag;
  if (cfg.contains(key)) {
    try {
      return cfg.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
  return fallback;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <std::size_t N>
std::array<double, N> parse_fractions(const std::string& s, const char* what) {
  const auto parts = split_list(s);
  if (parts.size() != N) throw ConfigError(std::string(what) + " needs " + std::to_string(N) + " comma-separated values");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    try {
      out[i] = std::stod(parts[i]);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": '" + parts[i] + "' is not a number");
    }
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create '" + p.parent_path().string() + "': " + ec.message());
  }
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string stage_tag(const TrainState& s) { return s.stage_started ? std::string(to_string(s.stage)) : "init"; }

// ---------------------------------------------------------------- commands

int cmd_generate(const GlobalOptions& g, const json& cfg, std::optional<int> scenes, std::optional<std::string> split,
                 std::optional<std::string> ratios, std::optional<int> image_size, std::ostream& out) {
  DatasetConfig dc;
  dc.n_scenes = pick<int>(cfg, "scenes", scenes, 200);
  dc.seed = pick<std::uint64_t>(cfg, "seed", g.seed, 0);
  dc.image_size = pick<int>(cfg, "image_size", image_size, 64);
  dc.split_fractions = parse_fractions<3>(pick<std::string>(cfg, "split", split, "0.8,0.1,0.1"), "--split");
  dc.modality_ratios = parse_fractions<3>(pick<std::string>(cfg, "modality_ratios", ratios, "1,1,1"), "--modality-ratios");
  const std::string dir = pick<std::string>(cfg, "out", g.out.empty() ? std::nullopt : std::optional(g.out), "");
  if (dir.empty()) throw ConfigError("generate needs --out");
  const Manifest m = generate_dataset(dc, dir);
  std::size_t counts[4] = {0, 0, 0, 0};
  for (const auto& s : m.scenes) {
    for (Modality mod : kAllModalities) counts[index_of(mod)] += s.files[static_cast<std::size_t>(index_of(mod))].has_value();
  }
  out << json{{"dataset", dir},
              {"scenes", m.scenes.size()},
              {"pairs", {{"nir", counts[1]}, {"swir", counts[2]}, {"lwir", counts[3]}}}}
             .dump()
      << "\n";
  return 0;
}

struct TrainFlags {
  std::optional<std::string> data, variant, stages, resume, disable;
  bool audit = false;
};

int cmd_train(const GlobalOptions& g, const json& cfg, const TrainFlags& f, std::ostream& out) {
  const std::string data_dir = pick<std::string>(cfg, "data", f.data, "");
  if (data_dir.empty()) throw ConfigError("train needs --data");
  const std::string variant = pick<std::string>(cfg, "variant", f.variant, "toy");
  const std::uint64_t seed = pick<std::uint64_t>(cfg, "seed", g.seed, 0);
  const std::string out_dir = pick<std::string>(cfg, "out", g.out.empty() ? std::nullopt : std::optional(g.out), "");
  if (out_dir.empty()) throw ConfigError("train needs --out");

  VariantPreset preset = variant_preset(variant);
  if (cfg.contains("stage_overrides")) {
    for (const auto& [name, o] : cfg.at("stage_overrides").items()) apply_overrides(preset.stage(parse_stage(name)), o);
  }
  std::vector<std::string> disabled;
  if (f.disable) {
    disabled = split_list(*f.disable);
  } else if (cfg.contains("disable_loss")) {
    disabled = cfg.at("disable_loss").get<std::vector<std::string>>();
  }
  for (const auto& name : disabled) {
    const LossTerm t = parse_loss_term(name);
    for (StageConfig& s : preset.stages) s.disabled[static_cast<std::size_t>(t)] = true;
  }

  CurriculumOptions co;
  co.stages.clear();
  std::string stages_text = "I,II,III";
  if (f.stages) {
    stages_text = *f.stages;
  } else if (cfg.contains("stages")) {
    stages_text.clear();
    for (const auto& s : cfg.at("stages")) stages_text += s.get<std::string>() + ",";
  }
  for (const auto& s : split_list(stages_text)) co.stages.push_back(parse_stage(s));
  co.out_dir = out_dir;
  const bool audit = f.audit || cfg.value("audit_la_gradient", false);
  if (audit) {
    for (StageId s : co.stages) co.step_options[s].audit_la_gradient = true;
  }

  std::optional<CheckpointContainer> resume;
  const std::string resume_path = pick<std::string>(cfg, "resume", f.resume, "");
  if (!resume_path.empty()) resume = CheckpointContainer::load(resume_path);
  if (!co.stages.empty() && co.stages.front() != StageId::one && !resume) {
    throw ConfigError("stage " + std::string(to_string(co.stages.front())) +
                      " needs --resume with a checkpoint of the previous stage");
  }

  const PairedDataset train = load_dataset(data_dir, Split::train);
  const PairedDataset val = load_dataset(data_dir, Split::val);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());
  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot open '" + metrics_path + "' for writing");
  co.sink = [&metrics](const json& rec) { metrics << rec.dump() << "\n"; };

  StageData data{&train, val.total() > 0 ? &val : nullptr};
  const CurriculumResult r = run_curriculum(preset, seed, data, co, resume);
  metrics.flush();
  if (!metrics) throw IoError("write failed for '" + metrics_path + "'");

  json summary = {{"variant", variant}, {"seed", seed}, {"deterministic", g.deterministic}, {"metrics", metrics_path}};
  for (const auto& [id, sr] : r.stages) {
    json s = {{"completed", sr.completed},
              {"config", to_json(preset.stage(id))},
              {"checkpoint", (fs::path(out_dir) / ("stage" + std::string(to_string(id)) + "_final.ckpt")).string()}};
    if (sr.final_eval) s["final_eval"] = sr.final_eval->alignment.to_json();
    summary["stages"][std::string(to_string(id))] = s;
  }
  out << summary.dump() << "\n";
  return 0;
}

int cmd_eval(const GlobalOptions& g, const json& cfg, std::optional<std::string> ckpt, std::optional<std::string> data,
             const std::string& split, std::ostream& out) {
  const std::string ckpt_path = pick<std::string>(cfg, "checkpoint", ckpt, "");
  const std::string data_dir = pick<std::string>(cfg, "data", data, "");
  if (ckpt_path.empty() || data_dir.empty()) throw ConfigError("eval needs --checkpoint and --data");
  const TrainState s = restore_state(CheckpointContainer::load(ckpt_path), RestoreMode::model_only);
  const PairedDataset ds = load_dataset(data_dir, parse_split(split));
  const ValidationResult v = evaluate_split(s.model, s.teacher, ds, stage_tag(s));
  json report = v.alignment.to_json();
  report["split"] = split;
  report["val_loss"] = v.val_loss;
  report["rgb_teacher_cosine"] = v.rgb_teacher_cosine;
  if (!g.out.empty()) write_text(g.out, report.dump(2) + "\n");
  out << report.dump() << "\n";
  return 0;
}

int cmd_export(const GlobalOptions& g, const json& cfg, std::optional<std::string> ckpt, std::optional<std::string> data,
               const std::string& split, std::optional<std::size_t> count, std::ostream& out) {
  const std::string ckpt_path = pick<std::string>(cfg, "checkpoint", ckpt, "");
  const std::string data_dir = pick<std::string>(cfg, "data", data, "");
  if (ckpt_path.empty() || data_dir.empty()) throw ConfigError("export-embeddings needs --checkpoint and --data");
  if (g.out.empty()) throw ConfigError("export-embeddings needs --out");
  const TrainState s = restore_state(CheckpointContainer::load(ckpt_path), RestoreMode::model_only);
  const PairedDataset ds = load_dataset(data_dir, parse_split(split));
  ExportOptions eo;
  eo.count = pick<std::size_t>(cfg, "count", count, 100);
  eo.seed = pick<std::uint64_t>(cfg, "seed", g.seed, 0);
  write_text(g.out, export_embeddings_csv(embed_split(s.model, ds), eo));
  out << json{{"embeddings", g.out}, {"stage", stage_tag(s)}, {"count_per_modality", eo.count}}.dump() << "\n";
  return 0;
}

struct ProbeFlags {
  std::optional<std::string> ckpt, data, init_variant;
  std::string train_split = "train";
  std::string test_split = "test";
  std::optional<int> epochs;
  std::optional<double> lr;
};

int cmd_probe(const GlobalOptions& g, const json& cfg, const ProbeFlags& f, std::ostream& out) {
  const std::string data_dir = pick<std::string>(cfg, "data", f.data, "");
  if (data_dir.empty()) throw ConfigError("probe needs --data");
  const std::uint64_t seed = pick<std::uint64_t>(cfg, "seed", g.seed, 0);
  Model model;
  std::string tag;
  if (f.init_variant) {
    model = build_model(variant_preset(*f.init_variant).model, seed);
    tag = "init";
  } else {
    const std::string ckpt_path = pick<std::string>(cfg, "checkpoint", f.ckpt, "");
    if (ckpt_path.empty()) throw ConfigError("probe needs --checkpoint or --init-variant");
    TrainState s = restore_state(CheckpointContainer::load(ckpt_path), RestoreMode::model_only);
    tag = stage_tag(s);
    model = std::move(s.model);
  }
  ProbeOptions po;
  po.seed = seed;
  po.epochs = pick<int>(cfg, "probe_epochs", f.epochs, po.epochs);
  po.lr = pick<double>(cfg, "probe_lr", f.lr, po.lr);
  const std::uint64_t before = model.checksum();
  const ProbeReport r = run_probe(model, load_dataset(data_dir, parse_split(f.train_split)),
                                  load_dataset(data_dir, parse_split(f.test_split)), po);
  if (model.checksum() != before) throw Error("probe modified the model parameters");
  json report = r.to_json();
  report["stage"] = tag;
  if (!g.out.empty()) write_text(g.out, report.dump(2) + "\n");
  out << report.dump() << "\n";
  return 0;
}

json adapter_totals(const ModelVariantConfig& cfg) {
  const long long n = adapter_instance_count(cfg);
  return {{"instances", n},
          {"weights_without_biases", n * adapter_weight_count(cfg.embed_dim)},
          {"weights_with_biases", n * adapter_param_count(cfg.embed_dim)}};
}

int cmd_inspect(std::optional<std::string> ckpt, std::ostream& out) {
  if (!ckpt) throw ConfigError("inspect-checkpoint needs --checkpoint");
  const CheckpointContainer c = CheckpointContainer::load(*ckpt);
  json segs = json::array();
  for (const auto& [name, bytes] : c.segments()) segs.push_back({{"name", name}, {"bytes", bytes.size()}});
  const auto meta_bytes = c.get("meta");
  const TrainState s = restore_state(c, RestoreMode::model_only);
  json groups = json::object();
  for (const auto& [g, sum] : s.model.group_checksums()) groups[g] = to_hex(sum);
  json report = {{"segments", segs},
                 {"meta", json::parse(meta_bytes.begin(), meta_bytes.end())},
                 {"parameters", s.model.parameter_count()},
                 {"adapters", adapter_totals(s.model.config())},
                 {"model_checksum", to_hex(s.model.checksum())},
                 {"teacher_checksum", to_hex(s.teacher.checksum())},
                 {"group_checksums", groups}};
  if (c.has("queue")) {
    const MemoryQueue q = MemoryQueue::restore(c.get("queue"));
    report["queue"] = {{"capacity", q.capacity()}, {"dim", q.dim()}, {"fill", q.fill()}, {"cursor", q.cursor()}};
  }
  out << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-spectral alignment of a tiny ViT: data generation, staged training, diagnostics", "specalign"};
  app.fallthrough();
  app.require_subcommand(1);
  GlobalOptions g;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", g.config, "JSON configuration file; unknown keys are errors");
  app.add_option("--seed", seed, "Random seed");
  app.add_flag("--deterministic", g.deterministic, "Bit-reproducible execution (the default code path is already serial)");
  app.add_option("--out", g.out, "Output directory or file");

  auto* gen = app.add_subcommand("generate", "Write a synthetic paired dataset");
  std::optional<int> scenes, image_size;
  std::optional<std::string> split_fr, ratios;
  gen->add_option("--scenes", scenes, "Number of scenes");
  gen->add_option("--split", split_fr, "train,val,test fractions");
  gen->add_option("--modality-ratios", ratios, "NIR,SWIR,LWIR coverage ratios");
  gen->add_option("--image-size", image_size, "Square image side in pixels");

  auto* train = app.add_subcommand("train", "Run training stages");
  TrainFlags tf;
  train->add_option("--data", tf.data, "Dataset directory");
  train->add_option("--variant", tf.variant, "toy|vit-s|vit-b|vit-l|vit-g");
  train->add_option("--stages", tf.stages, "Comma-separated stages, e.g. I,II,III");
  train->add_option("--resume", tf.resume, "Checkpoint of the stage before the first requested stage");
  train->add_option("--disable-loss", tf.disable, "Comma-separated terms to switch off for the whole run");
  train->add_flag("--audit-la-gradient", tf.audit, "Log the gradient norm of the neighborhood term");

  auto* eval = app.add_subcommand("eval", "Alignment report for a checkpoint on one split");
  std::optional<std::string> e_ckpt, e_data;
  std::string e_split = "val";
  eval->add_option("--checkpoint", e_ckpt, "Checkpoint file");
  eval->add_option("--data", e_data, "Dataset directory");
  eval->add_option("--split", e_split, "train|val|test");

  auto* exp = app.add_subcommand("export-embeddings", "Write paired CLS embeddings as CSV");
  std::optional<std::string> x_ckpt, x_data;
  std::string x_split = "val";
  std::optional<std::size_t> x_count;
  exp->add_option("--checkpoint", x_ckpt, "Checkpoint file");
  exp->add_option("--data", x_data, "Dataset directory");
  exp->add_option("--split", x_split, "train|val|test");
  exp->add_option("--count", x_count, "Pairs per modality (default 100)");

  auto* probe = app.add_subcommand("probe", "Linear probe on concat-fused CLS features");
  ProbeFlags pf;
  probe->add_option("--checkpoint", pf.ckpt, "Checkpoint file");
  probe->add_option("--init-variant", pf.init_variant, "Probe a freshly initialized model of this variant instead");
  probe->add_option("--data", pf.data, "Dataset directory");
  probe->add_option("--train-split", pf.train_split, "Split used to fit the classifier");
  probe->add_option("--test-split", pf.test_split, "Split used to measure accuracy");
  probe->add_option("--epochs", pf.epochs, "Probe epochs (default 20)");
  probe->add_option("--lr", pf.lr, "Probe learning rate (default 1e-3)");

  auto* inspect = app.add_subcommand("inspect-checkpoint", "Describe a checkpoint");
  std::optional<std::string> i_ckpt;
  inspect->add_option("--checkpoint", i_ckpt, "Checkpoint file");

  std::vector<std::string> argv_store{"specalign"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  g.seed = seed;

  try {
    const json cfg = load_config(g.config);
    if (!seed && cfg.contains("seed")) g.seed = cfg.at("seed").get<std::uint64_t>();
    if (!g.deterministic) g.deterministic = cfg.value("deterministic", false);
    if (gen->parsed()) return cmd_generate(g, cfg, scenes, split_fr, ratios, image_size, out);
    if (train->parsed()) return cmd_train(g, cfg, tf, out);
    if (eval->parsed()) return cmd_eval(g, cfg, e_ckpt, e_data, e_split, out);
    if (exp->parsed()) return cmd_export(g, cfg, x_ckpt, x_data, x_split, x_count, out);
    if (probe->parsed()) return cmd_probe(g, cfg, pf, out);
    if (inspect->parsed()) return cmd_inspect(i_ckpt, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace specalign
