#include "luvit/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace luvit {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ != nullptr && !j_->is_object()) throw ConfigError(path_, "expected an object");
  }

  void get(const char* key, Index& out) { read(key, out, "an integer", [](const json& v) { return v.is_number_integer(); }); }
  void get(const char* key, int& out) { read(key, out, "an integer", [](const json& v) { return v.is_number_integer(); }); }
  void get(const char* key, double& out) { read(key, out, "a number", [](const json& v) { return v.is_number(); }); }
  void get(const char* key, bool& out) { read(key, out, "a boolean", [](const json& v) { return v.is_boolean(); }); }
  void get(const char* key, std::string& out) { read(key, out, "a string", [](const json& v) { return v.is_string(); }); }
  void get(const char* key, std::uint64_t& out) {
    read(key, out, "a non-negative integer", [](const json& v) { return v.is_number_unsigned(); });
  }

  const json* raw(const char* key) {
    if (j_ == nullptr) return nullptr;
    auto it = j_->find(key);
    if (it == j_->end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  Section sub(const char* key) { return Section(raw(key), child(key)); }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    if (j_ == nullptr) return;
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(child(it.key().c_str()), "unknown key");
    }
  }

 private:
  template <typename T, typename Pred>
  void read(const char* key, T& out, const char* what, Pred ok) {
    const json* v = raw(key);
    if (v == nullptr) return;
    if (!ok(*v)) throw ConfigError(child(key), std::string("expected ") + what);
    out = v->get<T>();
  }

  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto with_path_prefix(const std::string& from, const std::string& to, F f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::string path = e.key_path();
    if (path.rfind(from, 0) == 0) path = to + path.substr(from.size());
    const std::string what = e.what();
    throw ConfigError(path, what.substr(what.find(": ") + 2));
  }
}

void read_model(Section s, ModelConfig& m) {
  std::string preset = "desk", variant = to_string(m.variant);
  s.get("preset", preset);
  s.get("variant", variant);
  const Variant v = variant_from_string(variant);
  if (preset == "desk") {
    m = desk_config(v);
  } else if (preset == "full") {
    m = full_scale_config(v);
  } else {
    throw ConfigError(s.child("preset"), "expected \"desk\" or \"full\"");
  }
  s.get("image_size", m.vit.image_size);
  s.get("patch_size", m.vit.patch_size);
  s.get("channels", m.vit.channels);
  s.get("depth", m.vit.depth);
  s.get("hidden_dim", m.vit.hidden_dim);
  s.get("heads", m.vit.heads);
  s.get("mlp_ratio", m.vit.mlp_ratio);
  s.get("learned_pos_embed", m.vit.learned_pos_embed);
  s.get("num_classes", m.num_classes);

  Section llm = s.sub("llm");
  llm.get("dim", m.llm.llm_dim);
  llm.get("heads", m.llm.heads);
  llm.get("mlp_hidden", m.llm.mlp_hidden);
  llm.get("causal", m.llm.causal);
  llm.get("rope", m.llm.rope);
  std::string init = to_string(m.llm.init_mode);
  llm.get("init", init);
  try {
    m.llm.init_mode = llm_init_from_string(init);
  } catch (const ConfigError&) {
    throw ConfigError(llm.child("init"), "unknown init mode '" + init + "'");
  }
  llm.get("pretrained_path", m.llm.pretrained_path);
  llm.get("surrogate_seed", m.llm.surrogate_seed);
  llm.get("surrogate_depth", m.llm.surrogate_depth);
  llm.finish();

  Section lora = s.sub("lora");
  lora.get("rank", m.lora.rank);
  lora.get("alpha", m.lora.alpha);
  if (const json* t = lora.raw("targets")) {
    if (!t->is_array()) throw ConfigError(lora.child("targets"), "expected an array of \"query\"/\"value\"");
    m.lora.targets.clear();
    for (const json& e : *t) {
      if (!e.is_string()) throw ConfigError(lora.child("targets"), "expected an array of \"query\"/\"value\"");
      try {
        m.lora.targets.push_back(lora_target_from_string(e.get<std::string>()));
      } catch (const ConfigError&) {
        throw ConfigError(lora.child("targets"), "unknown target '" + e.get<std::string>() + "'");
      }
    }
  }
  lora.finish();

  Section dec = s.sub("decoder");
  dec.get("depth", m.decoder.depth);
  dec.get("dim", m.decoder.dim);
  dec.get("heads", m.decoder.heads);
  dec.get("mlp_ratio", m.decoder.mlp_ratio);
  dec.finish();
  s.finish();
}

void read_train(Section s, TrainConfig& t) {
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("base_lr", t.base_lr);
  s.get("warmup_epochs", t.warmup_epochs);
  s.get("weight_decay", t.weight_decay);
  if (const json* b = s.raw("betas")) {
    if (!b->is_array() || b->size() != 2 || !(*b)[0].is_number() || !(*b)[1].is_number()) {
      throw ConfigError(s.child("betas"), "expected [beta1, beta2]");
    }
    t.beta1 = (*b)[0].get<double>();
    t.beta2 = (*b)[1].get<double>();
  }
  s.get("adam_eps", t.adam_eps);
  s.get("layer_decay", t.layer_decay);
  s.get("label_smoothing", t.label_smoothing);
  s.get("mask_ratio", t.mask_ratio);
  s.get("log_every", t.log_every);
  s.get("init_checkpoint", t.init_checkpoint);
  s.finish();
}

ordered_json model_json(const ModelConfig& m) {
  ordered_json lora_targets = ordered_json::array();
  for (LoRATarget t : m.lora.targets) lora_targets.push_back(to_string(t));
  return ordered_json{
      {"variant", to_string(m.variant)},
      {"image_size", m.vit.image_size},
      {"patch_size", m.vit.patch_size},
      {"channels", m.vit.channels},
      {"depth", m.vit.depth},
      {"hidden_dim", m.vit.hidden_dim},
      {"heads", m.vit.heads},
      {"mlp_ratio", m.vit.mlp_ratio},
      {"learned_pos_embed", m.vit.learned_pos_embed},
      {"num_classes", m.num_classes},
      {"llm",
       {{"dim", m.llm.llm_dim},
        {"heads", m.llm.heads},
        {"mlp_hidden", m.llm.mlp_hidden},
        {"causal", m.llm.causal},
        {"rope", m.llm.rope},
        {"init", to_string(m.llm.init_mode)},
        {"pretrained_path", m.llm.pretrained_path},
        {"surrogate_seed", m.llm.surrogate_seed},
        {"surrogate_depth", m.llm.surrogate_depth}}},
      {"lora", {{"rank", m.lora.rank}, {"alpha", m.lora.alpha}, {"targets", lora_targets}}},
      {"decoder",
       {{"depth", m.decoder.depth}, {"dim", m.decoder.dim}, {"heads", m.decoder.heads}, {"mlp_ratio", m.decoder.mlp_ratio}}},
  };
}

ordered_json train_json(const TrainConfig& t) {
  return ordered_json{
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"base_lr", t.base_lr},
      {"warmup_epochs", t.warmup_epochs},
      {"weight_decay", t.weight_decay},
      {"betas", {t.beta1, t.beta2}},
      {"adam_eps", t.adam_eps},
      {"layer_decay", t.layer_decay},
      {"label_smoothing", t.label_smoothing},
      {"mask_ratio", t.mask_ratio},
      {"log_every", t.log_every},
      {"init_checkpoint", t.init_checkpoint},
  };
}

}  // namespace

void AnalysisConfig::validate() const {
  if (layer < -1) throw ConfigError("analysis.layer", "must be -1 (last block) or a block index");
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw ConfigError("analysis.calibration_fraction", "must lie in (0, 1)");
  }
  if (grid < 2) throw ConfigError("analysis.grid", "must be at least 2");
  if (batch_size < 1) throw ConfigError("analysis.batch_size", "must be at least 1");
}

RunConfig::RunConfig() {
  pretrain.mode = TrainMode::pretrain;
  pretrain.epochs = 8;
  pretrain.batch_size = 18;
  pretrain.base_lr = 1.5e-3;
  pretrain.warmup_epochs = 1;
  pretrain.weight_decay = 0.05;
  pretrain.beta1 = 0.9;
  pretrain.beta2 = 0.95;
  pretrain.log_every = 1;

  finetune.mode = TrainMode::finetune;
  finetune.epochs = 4;
  finetune.batch_size = 18;
  finetune.base_lr = 1e-2;
  finetune.warmup_epochs = 0.5;
  finetune.weight_decay = 0.05;
  finetune.beta1 = 0.9;
  finetune.beta2 = 0.999;
  finetune.layer_decay = 0.75;
  finetune.label_smoothing = 0.1;
  finetune.log_every = 1;

  supervised = finetune;
  supervised.mode = TrainMode::supervised;
  supervised.layer_decay = 1.0;
}

const TrainConfig& RunConfig::train(TrainMode mode) const {
  switch (mode) {
    case TrainMode::pretrain: return pretrain;
    case TrainMode::finetune: return finetune;
    case TrainMode::supervised: return supervised;
  }
  throw ContractError("unknown training mode");
}

TrainConfig& RunConfig::train(TrainMode mode) { return const_cast<TrainConfig&>(std::as_const(*this).train(mode)); }

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  pretrain.seed = finetune.seed = supervised.seed = s;
}

void RunConfig::validate() const {
  model.validate();
  data.validate();
  analysis.validate();
  for (TrainMode mode : {TrainMode::pretrain, TrainMode::finetune, TrainMode::supervised}) {
    const std::string section = mode == TrainMode::supervised ? "supervised" : to_string(mode);
    with_path_prefix("train.", "train." + section + ".", [&] {
      train(mode).validate();
      return 0;
    });
  }
}

void RunConfig::check_data_compatible() const {
  if (data.image_size != model.vit.image_size) throw ConfigError("data.image_size", "must equal model.image_size");
  if (data.classes != model.num_classes) throw ConfigError("data.classes", "must equal model.num_classes");
}

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", std::string("malformed JSON: ") + e.what());
  }
  RunConfig cfg;
  Section root(&doc, "");
  std::uint64_t seed = 0;
  root.get("seed", seed);
  root.get("out", cfg.out);
  read_model(root.sub("model"), cfg.model);

  Section train = root.sub("train");
  read_train(train.sub("pretrain"), cfg.pretrain);
  read_train(train.sub("finetune"), cfg.finetune);
  read_train(train.sub("supervised"), cfg.supervised);
  train.finish();

  Section data = root.sub("data");
  data.get("dir", cfg.data_dir);
  data.get("classes", cfg.data.classes);
  data.get("n_per_class", cfg.data.n_per_class);
  data.get("n_eval_per_class", cfg.data.n_eval_per_class);
  data.get("image_size", cfg.data.image_size);
  data.get("background_bias", cfg.data.background_bias);
  data.finish();

  Section analysis = root.sub("analysis");
  analysis.get("layer", cfg.analysis.layer);
  analysis.get("calibration_fraction", cfg.analysis.calibration_fraction);
  analysis.get("grid", cfg.analysis.grid);
  analysis.get("batch_size", cfg.analysis.batch_size);
  analysis.finish();
  root.finish();

  cfg.set_seed(seed);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  ordered_json doc{
      {"seed", cfg.seed},
      {"out", cfg.out},
      {"model", model_json(cfg.model)},
      {"train",
       {{"pretrain", train_json(cfg.pretrain)},
        {"finetune", train_json(cfg.finetune)},
        {"supervised", train_json(cfg.supervised)}}},
      {"data",
       {{"dir", cfg.data_dir},
        {"classes", cfg.data.classes},
        {"n_per_class", cfg.data.n_per_class},
        {"n_eval_per_class", cfg.data.n_eval_per_class},
        {"image_size", cfg.data.image_size},
        {"background_bias", cfg.data.background_bias}}},
      {"analysis",
       {{"layer", cfg.analysis.layer},
        {"calibration_fraction", cfg.analysis.calibration_fraction},
        {"grid", cfg.analysis.grid},
        {"batch_size", cfg.analysis.batch_size}}},
  };
  return doc.dump(2) + "\n";
}

}  // namespace luvit
