// luvit: command-line entry point for data generation, training and analysis.
//
//   luvit <subcommand> [--config PATH] [--seed N] [--out DIR] [--no-timestamps] [...]
//
// Every subcommand writes `resolved_config.json` plus its own outputs into --out.
// A failing command removes the files it created. Exit codes: 0 success,
// 1 runtime failure, 2 configuration error (the offending key path is printed).

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "luvit/analysis.hpp"
#include "luvit/run_config.hpp"
#include "luvit/synth.hpp"
#include "luvit/trainer.hpp"

namespace fs = std::filesystem;
using namespace luvit;

namespace {

constexpr const char* kFormats = R"(Outputs (all CSV values printed with %.9g):
  resolved_config.json   every configuration key with defaults filled in
  run.log                progress log (timestamps unless --no-timestamps)
  metrics.csv            step,epoch,split,metric,value
                         split=train: metric loss|lr every log_every steps
                         split=eval:  metric loss (and accuracy when classifying) per epoch
  checkpoint.luvt        weights, optimizer moments (optim.m/<name>, optim.v/<name>), step, config
  <split>.luvt/.csv      dataset split: tensors images, labels, fg_masks, background_ids,
                         sprites, backgrounds; manifest id,label,background_id
  scatter.csv            image_id,fg_mean,bg_mean (empty field when the region is empty)
  iou.csv                component,tau,mean_iou,images
  robustness.csv         model,original,mixed_same,mixed_random,orig_minus_same,orig_minus_rand,same_minus_rand
  attn.luvt              attn.L<layer>.H<head> [images x T x T], feat.L<layer> [images x T x d]
Tensor files use the LUVT format: "LUVT" u32 version, u32 count, per tensor
u32 name_len, name, u8 rank, u64 dims, u8 trainable, f32 data; then u64 step,
u64 config_len, config. Little-endian throughout.)";

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool no_timestamps = false;
};

// Tracks files created by this invocation so a failure can remove them.
class Outputs {
 public:
  Outputs(fs::path dir, bool timestamps) : dir_(std::move(dir)), timestamps_(timestamps) {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_dir_ = true;
    }
  }
  ~Outputs() {
    if (committed_) return;
    log_.close();
    std::error_code ec;
    for (const fs::path& p : created_) fs::remove(p, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

  fs::path file(const std::string& name) {
    fs::path p = dir_ / name;
    if (!fs::exists(p)) created_.push_back(p);
    return p;
  }
  void log(const std::string& line) {
    if (!log_.is_open()) log_.open(file("run.log"), std::ios::app);
    std::string stamped = line;
    if (timestamps_) {
      const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      char buf[32];
      std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S ", std::gmtime(&t));
      stamped = buf + line;
    }
    log_ << stamped << '\n';
    log_.flush();
    std::cout << line << '\n';
  }
  void commit() { committed_ = true; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  bool timestamps_;
  bool created_dir_ = false;
  bool committed_ = false;
  std::vector<fs::path> created_;
  std::ofstream log_;
};

RunConfig resolve_config(const CommonOptions& opt) {
  RunConfig cfg = opt.config.empty() ? RunConfig{} : load_run_config(opt.config);
  if (opt.seed) cfg.set_seed(*opt.seed);
  if (!opt.out.empty()) cfg.out = opt.out;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void archive_config(Outputs& out, const RunConfig& cfg) { write_text(out.file("resolved_config.json"), dump_run_config(cfg)); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// A split from data.dir when present, else generated from the run seed.
std::vector<SyntheticSample> split(const RunConfig& cfg, const std::string& name, Outputs& out) {
  const fs::path dump = fs::path(cfg.data_dir) / (name + ".luvt");
  if (fs::exists(dump)) {
    out.log("loading " + dump.string());
    return load_split(dump);
  }
  if (name == "train") return make_train_split(cfg.data, cfg.seed);
  std::vector<SyntheticSample> eval = make_eval_split(cfg.data, cfg.seed);
  if (name == "eval") return eval;
  RobustnessSplits s = make_eval_robustness_splits(eval, cfg.data, cfg.seed);
  if (name == "mixed_same") return std::move(s.mixed_same);
  if (name == "mixed_random") return std::move(s.mixed_random);
  throw ContractError("unknown split " + name);
}

// Rebuilds a classification model from a checkpoint; the architecture comes from the
// checkpoint's archived config when it has one.
Model<float> load_classifier(const std::string& path, const RunConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(path);
  ModelConfig mc = ckpt.config.empty() ? cfg.model : parse_run_config(ckpt.config).model;
  Model<float> model(mc, Stage::classify, cfg.seed);
  model.load_weights(ckpt, true);
  return model;
}

std::string describe_report(const ParamReport& r) {
  std::ostringstream os;
  os << "group,trainable,frozen\n";
  for (ParamGroup g : kAllGroups) {
    const Index t = r.trainable.count(g) ? r.trainable.at(g) : 0;
    const Index f = r.frozen.count(g) ? r.frozen.at(g) : 0;
    if (t + f) os << to_string(g) << ',' << t << ',' << f << '\n';
  }
  os << "total," << r.trainable_total << ',' << r.frozen_total << '\n';
  return os.str();
}

int cmd_gen_data(const CommonOptions& opt) {
  const RunConfig cfg = resolve_config(opt);
  cfg.check_data_compatible();
  Outputs out(cfg.out, !opt.no_timestamps);
  archive_config(out, cfg);
  const std::vector<SyntheticSample> train = make_train_split(cfg.data, cfg.seed);
  const std::vector<SyntheticSample> eval = make_eval_split(cfg.data, cfg.seed);
  const RobustnessSplits splits = make_eval_robustness_splits(eval, cfg.data, cfg.seed);
  auto save = [&](const std::string& name, const std::vector<SyntheticSample>& s) {
    save_split(s, out.file(name + ".luvt"), out.file(name + ".csv"));
    out.log("wrote " + name + " (" + std::to_string(s.size()) + " images)");
  };
  save("train", train);
  save("eval", eval);
  save("mixed_same", splits.mixed_same);
  save("mixed_random", splits.mixed_random);
  out.commit();
  return 0;
}

struct TrainOptions {
  std::string checkpoint;  // fine-tuning initialisation
  std::string resume;
  Index until_step = -1;
};

int cmd_train(const CommonOptions& opt, const TrainOptions& topt, TrainMode mode) {
  RunConfig cfg = resolve_config(opt);
  cfg.check_data_compatible();
  TrainConfig& tc = cfg.train(mode);
  if (!topt.checkpoint.empty()) tc.init_checkpoint = topt.checkpoint;
  if (mode == TrainMode::finetune && tc.init_checkpoint.empty() && topt.resume.empty()) {
    throw ConfigError("train.finetune.init_checkpoint", "fine-tuning needs a pre-trained checkpoint (--checkpoint)");
  }
  Outputs out(cfg.out, !opt.no_timestamps);
  archive_config(out, cfg);
  const std::string config_text = dump_run_config(cfg);

  const ImageSet train = to_image_set(split(cfg, "train", out));
  const ImageSet eval = to_image_set(split(cfg, "eval", out));
  Trainer<float> trainer(tc, cfg.model, train, &eval, config_text);

  const fs::path metrics_path = out.file("metrics.csv");
  if (!topt.resume.empty()) {
    trainer.resume(load_checkpoint(topt.resume));
    out.log("resumed at step " + std::to_string(trainer.step()));
  } else {
    fs::remove(metrics_path);
    if (mode == TrainMode::finetune) {
      const LoadSummary s = trainer.init_from(load_checkpoint(tc.init_checkpoint));
      out.log("initialised " + std::to_string(s.loaded.size()) + " tensors from " + tc.init_checkpoint + ", " +
              std::to_string(s.missing.size()) + " kept fresh");
    }
  }
  const ParamReport params = count_params(trainer.model().params());
  out.log(to_string(mode) + ": " + to_string(cfg.model.variant) + ", " + std::to_string(params.trainable_total) +
          " trainable / " + std::to_string(params.frozen_total) + " frozen parameters, " +
          std::to_string(trainer.total_steps()) + " steps");

  MetricsCsv csv(metrics_path);
  trainer.run(topt.until_step, [&](const MetricRecord& r) {
    csv.write(r);
    if (r.split == "eval" || (r.metric == "loss" && r.step % 50 == 0)) {
      out.log("step " + std::to_string(r.step) + " epoch " + std::to_string(r.epoch) + " " + r.split + " " + r.metric +
              " " + fmt(r.value));
    }
  });
  save_checkpoint(trainer.checkpoint(), out.file("checkpoint.luvt"));
  out.log("checkpoint at step " + std::to_string(trainer.step()));
  out.commit();
  return 0;
}

int cmd_count_params(const CommonOptions& opt, bool all_variants) {
  const RunConfig cfg = resolve_config(opt);
  const Stage stage = Stage::classify;
  if (!all_variants) {
    const ParamReport r = count_params(param_specs(cfg.model, stage));
    std::cout << "variant " << to_string(cfg.model.variant) << "\n" << describe_report(r);
    if (cfg.model.has_lora()) std::cout << "lora_fraction," << fmt(r.trainable_fraction(ParamGroup::lora)) << '\n';
    return 0;
  }
  std::cout << "variant,encoder,projections,lora,head,trainable_total,frozen_total\n";
  for (Variant v : {Variant::vit, Variant::vit_mlp_p, Variant::vit_llama, Variant::vit_mlp_l, Variant::luvit}) {
    ModelConfig mc = cfg.model;
    mc.variant = v;
    const ParamReport r = count_params(param_specs(mc, stage));
    auto g = [&](ParamGroup grp) { return r.trainable.count(grp) ? r.trainable.at(grp) : Index{0}; };
    std::cout << to_string(v) << ',' << g(ParamGroup::encoder) << ',' << g(ParamGroup::projections) << ','
              << g(ParamGroup::lora) << ',' << g(ParamGroup::head) << ',' << r.trainable_total << ','
              << r.frozen_total << '\n';
  }
  return 0;
}

std::string require_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint", "a trained checkpoint is required");
  return path;
}

int cmd_analyze_entropy(const CommonOptions& opt, const std::string& ckpt) {
  const RunConfig cfg = resolve_config(opt);
  cfg.check_data_compatible();
  Outputs out(cfg.out, !opt.no_timestamps);
  archive_config(out, cfg);
  const Model<float> model = load_classifier(require_checkpoint(ckpt), cfg);
  const auto r = analysis::entropy_report(model, split(cfg, "eval", out), cfg.analysis.layer, cfg.analysis.batch_size);
  analysis::write_scatter_csv(out.file("scatter.csv"), r.images);
  out.log("layer " + std::to_string(r.layer) + ": mean fg entropy " + fmt(r.mean_fg) + ", mean bg entropy " +
          fmt(r.mean_bg) + ", fg < bg in " + std::to_string(r.fg_below_bg) + "/" + std::to_string(r.compared) +
          " images");
  out.commit();
  return 0;
}

int cmd_analyze_iou(const CommonOptions& opt, const std::string& ckpt) {
  const RunConfig cfg = resolve_config(opt);
  cfg.check_data_compatible();
  Outputs out(cfg.out, !opt.no_timestamps);
  archive_config(out, cfg);
  const Model<float> model = load_classifier(require_checkpoint(ckpt), cfg);
  const auto r = analysis::iou_report(model, split(cfg, "eval", out), cfg.analysis.layer,
                                      cfg.analysis.calibration_fraction, cfg.analysis.grid, cfg.analysis.batch_size);
  analysis::write_iou_csv(out.file("iou.csv"), r);
  out.log("layer " + std::to_string(r.layer) + ": magnitude IoU " + fmt(r.magnitude_test) + " (tau " +
          fmt(r.magnitude.tau) + "), frequency IoU " + fmt(r.frequency_test) + " (tau " + fmt(r.frequency.tau) + ")");
  out.commit();
  return 0;
}

int cmd_eval_robustness(const CommonOptions& opt, const std::vector<std::string>& models) {
  const RunConfig cfg = resolve_config(opt);
  cfg.check_data_compatible();
  if (models.empty()) throw ConfigError("--model", "at least one NAME=CHECKPOINT is required");
  Outputs out(cfg.out, !opt.no_timestamps);
  archive_config(out, cfg);
  const ImageSet original = to_image_set(split(cfg, "eval", out));
  const ImageSet same = to_image_set(split(cfg, "mixed_same", out));
  const ImageSet random = to_image_set(split(cfg, "mixed_random", out));
  std::vector<std::pair<std::string, analysis::RobustnessTable>> rows;
  for (const std::string& spec : models) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--model", "expected NAME=CHECKPOINT, got " + spec);
    const Model<float> model = load_classifier(spec.substr(eq + 1), cfg);
    rows.emplace_back(spec.substr(0, eq),
                      analysis::robustness_eval(model, original, same, random, cfg.analysis.batch_size));
    const auto& t = rows.back().second;
    out.log(rows.back().first + ": original " + fmt(t.original) + ", mixed_same " + fmt(t.mixed_same) +
            ", mixed_random " + fmt(t.mixed_random));
  }
  analysis::write_robustness_csv(out.file("robustness.csv"), rows);
  out.commit();
  return 0;
}

int cmd_dump_attn(const CommonOptions& opt, const std::string& ckpt, Index images) {
  const RunConfig cfg = resolve_config(opt);
  cfg.check_data_compatible();
  Outputs out(cfg.out, !opt.no_timestamps);
  archive_config(out, cfg);
  const Model<float> model = load_classifier(require_checkpoint(ckpt), cfg);
  const std::vector<SyntheticSample> eval = split(cfg, "eval", out);
  const Index n = std::min<Index>(images, static_cast<Index>(eval.size()));
  std::vector<const Tensor<float>*> batch;
  for (Index i = 0; i < n; ++i) batch.push_back(&eval[i].image);
  ForwardRecording<float> rec;
  features_forward(model, patch_batch<float>(batch, model.config().vit.patch_size), &rec);

  Checkpoint dump;
  dump.config = dump_run_config(cfg);
  for (const auto& [layer, probs] : rec.attention) {
    const Index h = probs.dim(1), t = probs.dim(2);
    for (Index head = 0; head < h; ++head) {
      std::vector<float> data;
      data.reserve(static_cast<std::size_t>(n * t * t));
      for (Index b = 0; b < n; ++b) {
        const Index base = (b * h + head) * t * t;
        for (Index k = 0; k < t * t; ++k) data.push_back(probs.value()[base + k]);
      }
      dump.add("attn.L" + std::to_string(layer) + ".H" + std::to_string(head), {n, t, t}, std::move(data));
    }
  }
  for (const auto& [layer, feat] : rec.features) dump.add("feat.L" + std::to_string(layer), feat, false);
  save_checkpoint(dump, out.file("attn.luvt"));
  out.log("dumped " + std::to_string(rec.attention.size()) + " attention layers for " + std::to_string(n) + " images");
  out.commit();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LUViT desk-scale toolkit: synthetic data, MAE pre-training, fine-tuning and analysis"};
  app.require_subcommand(1);
  app.footer(kFormats);

  CommonOptions common;
  TrainOptions topt;
  std::string checkpoint;
  std::vector<std::string> models;
  bool all_variants = false;
  Index images = 8;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Run configuration (JSON); built-in desk defaults when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Overrides the configured seed for data, init and training");
    sub->add_option("--out", common.out, "Output directory (overrides `out`)");
    sub->add_flag("--no-timestamps", common.no_timestamps, "Omit wall-clock timestamps from run.log");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate train/eval/mixed_same/mixed_random splits");
  add_common(gen);

  auto add_train = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    sub->add_option("--resume", topt.resume, "Continue from a checkpoint written by this command");
    sub->add_option("--until-step", topt.until_step, "Stop after this many optimizer steps");
    return sub;
  };
  CLI::App* pre = add_train("pretrain", "MAE pre-training (writes metrics.csv, checkpoint.luvt)");
  CLI::App* fin = add_train("finetune", "Fine-tune a pre-trained checkpoint for classification");
  fin->add_option("--checkpoint", topt.checkpoint, "Pre-trained checkpoint (overrides train.finetune.init_checkpoint)");
  CLI::App* sup = add_train("supervised", "Supervised training from scratch");

  CLI::App* cnt = app.add_subcommand("count-params", "Per-group parameter counts of the configured model");
  add_common(cnt);
  cnt->add_flag("--all-variants", all_variants, "One row per ablation variant");

  CLI::App* ent = app.add_subcommand("analyze-entropy", "Foreground/background attention entropy (scatter.csv)");
  CLI::App* iou = app.add_subcommand("analyze-iou", "Magnitude/frequency pseudo-mask IoU (iou.csv)");
  CLI::App* dmp = app.add_subcommand("dump-attn", "Dump attention maps and features (attn.luvt)");
  for (CLI::App* sub : {ent, iou, dmp}) {
    add_common(sub);
    sub->add_option("--checkpoint", checkpoint, "Trained classification checkpoint")->required();
  }
  dmp->add_option("--images", images, "Number of eval images to record")->check(CLI::PositiveNumber);

  CLI::App* rob = app.add_subcommand("eval-robustness", "Accuracy on original/mixed_same/mixed_random (robustness.csv)");
  add_common(rob);
  rob->add_option("--model", models, "NAME=CHECKPOINT, repeatable")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::cerr << app.help();
    return code;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (pre->parsed()) return cmd_train(common, topt, TrainMode::pretrain);
    if (fin->parsed()) return cmd_train(common, topt, TrainMode::finetune);
    if (sup->parsed()) return cmd_train(common, topt, TrainMode::supervised);
    if (cnt->parsed()) return cmd_count_params(common, all_variants);
    if (ent->parsed()) return cmd_analyze_entropy(common, checkpoint);
    if (iou->parsed()) return cmd_analyze_iou(common, checkpoint);
    if (rob->parsed()) return cmd_eval_robustness(common, models);
    if (dmp->parsed()) return cmd_dump_attn(common, checkpoint, images);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
