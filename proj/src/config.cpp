#include "dualseg/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

#include "dualseg/rng.hpp"

namespace dualseg {

using nlohmann::json;

void RunConfig::validate() const {
  weights.validate();
  if (batch_labeled <= 0 || batch_unlabeled < 0)
    throw std::runtime_error("config: batch sizes must be positive");
  if (base_lr <= 0) throw std::runtime_error("config: base_lr must be positive");
  if (poly_power < 0) throw std::runtime_error("config: poly_power must be non-negative");
  if (train_size < 8) throw std::runtime_error("config: train_size too small");
  if (!(feature_perturb_rate >= 0.0 && feature_perturb_rate < 1.0))
    throw std::runtime_error("config: feature_perturb_rate must be in [0,1)");
  if (epochs < 0) throw std::runtime_error("config: epochs must be non-negative");
}

namespace {

json backbone_to_json(const BackboneSpec& b) {
  return json{{"variant", b.variant == BackboneVariant::tiny_desk ? "tiny_desk" : "vitb16_checkpoint"},
              {"patch_size", b.patch_size},
              {"embed_dim", b.embed_dim},
              {"depth", b.depth},
              {"heads", b.heads},
              {"mlp_ratio", b.mlp_ratio},
              {"channel_count", b.channel_count},
              {"checkpoint_path", b.checkpoint_path},
              {"freeze", b.freeze}};
}

BackboneSpec backbone_from_json(const json& j) {
  BackboneSpec b;
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "tiny_desk")
    b.variant = BackboneVariant::tiny_desk;
  else if (variant == "vitb16_checkpoint")
    b.variant = BackboneVariant::vitb16_checkpoint;
  else
    throw std::runtime_error("config: unknown backbone variant '" + variant + "'");
  b.patch_size = j.at("patch_size").get<int>();
  b.embed_dim = j.at("embed_dim").get<int>();
  b.depth = j.at("depth").get<int>();
  b.heads = j.value("heads", b.heads);
  b.mlp_ratio = j.value("mlp_ratio", b.mlp_ratio);
  b.channel_count = j.value("channel_count", 3);
  b.checkpoint_path = j.value("checkpoint_path", std::string());
  b.freeze = j.value("freeze", std::vector<std::string>());
  return b;
}

std::string homogeneous_to_string(Toggles::Homogeneous h) {
  switch (h) {
    case Toggles::Homogeneous::both_global: return "both_global";
    case Toggles::Homogeneous::both_local: return "both_local";
    default: return "off";
  }
}

Toggles::Homogeneous homogeneous_from_string(const std::string& s) {
  if (s == "off") return Toggles::Homogeneous::off;
  if (s == "both_global") return Toggles::Homogeneous::both_global;
  if (s == "both_local") return Toggles::Homogeneous::both_local;
  throw std::runtime_error("config: unknown homogeneous_students value '" + s + "'");
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["split"] = {{"ratio", c.split.ratio.str()},
                {"seed", c.split.seed},
                {"explicit_ids", c.split.explicit_ids}};
  j["weights"] = {{"lambda_sup", c.weights.lambda_sup},
                  {"lambda_ct", c.weights.lambda_ct},
                  {"lambda_sta_max", c.weights.lambda_sta_max},
                  {"tau", c.weights.tau},
                  {"rampup_steps", c.weights.rampup_steps}};
  j["backbone_global"] = backbone_to_json(c.backbone_global);
  j["backbone_local"] = backbone_to_json(c.backbone_local);
  j["epochs"] = c.epochs;
  j["batch_labeled"] = c.batch_labeled;
  j["batch_unlabeled"] = c.batch_unlabeled;
  j["base_lr"] = c.base_lr;
  j["weight_decay"] = c.weight_decay;
  j["poly_power"] = c.poly_power;
  j["seed"] = c.seed;
  j["toggles"] = {{"use_esg", c.toggles.use_esg},
                  {"use_isg", c.toggles.use_isg},
                  {"use_ct", c.toggles.use_ct},
                  {"use_sta", c.toggles.use_sta},
                  {"homogeneous_students", homogeneous_to_string(c.toggles.homogeneous_students)}};
  j["train_size"] = c.train_size;
  j["feature_perturb_rate"] = c.feature_perturb_rate;
  j["strong_aug"] = {{"brightness", c.strong_aug.brightness},
                     {"contrast", c.strong_aug.contrast},
                     {"saturation", c.strong_aug.saturation},
                     {"hue", c.strong_aug.hue},
                     {"grayscale_prob", c.strong_aug.grayscale_prob},
                     {"blur_prob", c.strong_aug.blur_prob},
                     {"blur_sigma_min", c.strong_aug.blur_sigma_min},
                     {"blur_sigma_max", c.strong_aug.blur_sigma_max}};
  j["concepts_path"] = c.concepts_path;
  j["template_str"] = c.template_str;
  j["text_dim"] = c.text_dim;
  j["text_encoder_checkpoint"] = c.text_encoder_checkpoint;
  j["checkpoint_every_epochs"] = c.checkpoint_every_epochs;
  j["data"] = {{"manifest", c.data.manifest},
               {"synth", c.data.synth},
               {"synth_count", c.data.synth_count},
               {"synth_classes", c.data.synth_classes},
               {"synth_side", c.data.synth_side},
               {"synth_seed", c.data.synth_seed},
               {"eval_manifest", c.data.eval_manifest}};
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j = json::parse(text);
  RunConfig c;
  if (j.contains("split")) {
    const auto& s = j["split"];
    if (s.contains("ratio")) {
      if (s["ratio"].is_string())
        c.split.ratio = Ratio::parse(s["ratio"].get<std::string>());
      else
        c.split.ratio = Ratio{s["ratio"].get<std::int64_t>(), 1};
    }
    c.split.seed = s.value("seed", c.split.seed);
    c.split.explicit_ids = s.value("explicit_ids", c.split.explicit_ids);
  }
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    c.weights.lambda_sup = w.value("lambda_sup", c.weights.lambda_sup);
    c.weights.lambda_ct = w.value("lambda_ct", c.weights.lambda_ct);
    c.weights.lambda_sta_max = w.value("lambda_sta_max", c.weights.lambda_sta_max);
    c.weights.tau = w.value("tau", c.weights.tau);
    c.weights.rampup_steps = w.value("rampup_steps", c.weights.rampup_steps);
  }
  if (j.contains("backbone_global")) c.backbone_global = backbone_from_json(j["backbone_global"]);
  if (j.contains("backbone_local")) c.backbone_local = backbone_from_json(j["backbone_local"]);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_labeled = j.value("batch_labeled", c.batch_labeled);
  c.batch_unlabeled = j.value("batch_unlabeled", c.batch_unlabeled);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.poly_power = j.value("poly_power", c.poly_power);
  c.seed = j.value("seed", c.seed);
  if (j.contains("toggles")) {
    const auto& t = j["toggles"];
    c.toggles.use_esg = t.value("use_esg", true);
    c.toggles.use_isg = t.value("use_isg", true);
    c.toggles.use_ct = t.value("use_ct", true);
    c.toggles.use_sta = t.value("use_sta", true);
    c.toggles.homogeneous_students =
        homogeneous_from_string(t.value("homogeneous_students", std::string("off")));
  }
  c.train_size = j.value("train_size", c.train_size);
  c.feature_perturb_rate = j.value("feature_perturb_rate", c.feature_perturb_rate);
  if (j.contains("strong_aug")) {
    const auto& a = j["strong_aug"];
    c.strong_aug.brightness = a.value("brightness", c.strong_aug.brightness);
    c.strong_aug.contrast = a.value("contrast", c.strong_aug.contrast);
    c.strong_aug.saturation = a.value("saturation", c.strong_aug.saturation);
    c.strong_aug.hue = a.value("hue", c.strong_aug.hue);
    c.strong_aug.grayscale_prob = a.value("grayscale_prob", c.strong_aug.grayscale_prob);
    c.strong_aug.blur_prob = a.value("blur_prob", c.strong_aug.blur_prob);
    c.strong_aug.blur_sigma_min = a.value("blur_sigma_min", c.strong_aug.blur_sigma_min);
    c.strong_aug.blur_sigma_max = a.value("blur_sigma_max", c.strong_aug.blur_sigma_max);
  }
  c.concepts_path = j.value("concepts_path", c.concepts_path);
  c.template_str = j.value("template_str", c.template_str);
  c.text_dim = j.value("text_dim", c.text_dim);
  c.text_encoder_checkpoint = j.value("text_encoder_checkpoint", c.text_encoder_checkpoint);
  c.checkpoint_every_epochs = j.value("checkpoint_every_epochs", c.checkpoint_every_epochs);
  if (j.contains("data")) {
    const auto& d = j["data"];
    c.data.manifest = d.value("manifest", c.data.manifest);
    c.data.synth = d.value("synth", c.data.synth);
    c.data.synth_count = d.value("synth_count", c.data.synth_count);
    c.data.synth_classes = d.value("synth_classes", c.data.synth_classes);
    c.data.synth_side = d.value("synth_side", c.data.synth_side);
    c.data.synth_seed = d.value("synth_seed", c.data.synth_seed);
    c.data.eval_manifest = d.value("eval_manifest", c.data.eval_manifest);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return run_config_from_json(text);
}

void apply_overrides(std::string& config_json, const std::vector<std::string>& overrides) {
  json j = json::parse(config_json);
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("override: expected key=value, got '" + ov + "'");
    const std::string key = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);

    // walk the dotted path
    json* node = &j;
    size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
      const auto dot = key.find('.', start);
      parts.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->contains(parts[i]))
        throw std::runtime_error("override: unknown key '" + key + "'");
      node = &(*node)[parts[i]];
    }
    const std::string& leaf = parts.back();
    if (!node->contains(leaf)) throw std::runtime_error("override: unknown key '" + key + "'");

    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // bare strings (e.g. ratios like 1/8)
    }
    if ((*node)[leaf].is_string() && !parsed.is_string()) parsed = value;
    (*node)[leaf] = parsed;
  }
  config_json = j.dump(2);
}

std::string config_fingerprint(const RunConfig& config) {
  const std::string canon = run_config_to_json(config);
  std::uint64_t h = hash_str(canon);
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Corpus realize_corpus(const DataConfig& data) {
  if (data.synth)
    return generate_synthetic(data.synth_count, data.synth_classes, data.synth_side,
                              data.synth_seed);
  if (data.manifest.empty())
    throw std::runtime_error("config: data source requires either synth=true or a manifest path");
  const std::filesystem::path manifest(data.manifest);
  return load_corpus(manifest.parent_path(), manifest);
}

}  // namespace dualseg
