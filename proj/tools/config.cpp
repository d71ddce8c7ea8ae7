#include "config.hpp"

#include <fstream>

#include "json.hpp"
#include "mexit/errors.hpp"

namespace mexit::cli {

using nlohmann::json;

namespace {

json dataset_to_json(const DatasetSpec& spec) {
  json tiers = json::array();
  for (DifficultyTier t : spec.resolved_tiers()) tiers.push_back(to_string(t));
  return json{{"classes", spec.classes},
              {"text_dim", spec.text_dim},
              {"vision_dim", spec.vision_dim},
              {"train_size", spec.train_size},
              {"val_size", spec.val_size},
              {"test_size", spec.test_size},
              {"tiers", tiers},
              {"easy_scale", spec.easy_scale},
              {"fusion_scale", spec.fusion_scale},
              {"deep_scale", spec.deep_scale},
              {"easy_noise", spec.easy_noise},
              {"fusion_noise", spec.fusion_noise},
              {"deep_noise", spec.deep_noise}};
}

void dataset_from_json(const json& j, DatasetSpec& spec) {
  spec.classes = j.value("classes", spec.classes);
  spec.text_dim = j.value("text_dim", spec.text_dim);
  spec.vision_dim = j.value("vision_dim", spec.vision_dim);
  spec.train_size = j.value("train_size", spec.train_size);
  spec.val_size = j.value("val_size", spec.val_size);
  spec.test_size = j.value("test_size", spec.test_size);
  if (j.contains("tiers")) {
    spec.tiers.clear();
    for (const auto& t : j.at("tiers")) spec.tiers.push_back(parse_tier(t.get<std::string>()));
  }
  spec.easy_scale = j.value("easy_scale", spec.easy_scale);
  spec.fusion_scale = j.value("fusion_scale", spec.fusion_scale);
  spec.deep_scale = j.value("deep_scale", spec.deep_scale);
  spec.easy_noise = j.value("easy_noise", spec.easy_noise);
  spec.fusion_noise = j.value("fusion_noise", spec.fusion_noise);
  spec.deep_noise = j.value("deep_noise", spec.deep_noise);
}

}  // namespace

std::string to_json_string(const RunConfig& config) {
  json j;
  j["seed"] = config.seed;
  j["dataset"] = dataset_to_json(config.dataset);
  j["backbone"] = {{"text_dim", config.backbone.text_dim},
                   {"vision_dim", config.backbone.vision_dim},
                   {"stem_width", config.backbone.stem_width},
                   {"fused_width", config.backbone.fused_width},
                   {"encoder_layers", config.backbone.encoder_layers},
                   {"classes", config.backbone.classes},
                   {"activation", to_string(config.backbone.activation)}};
  j["placement"] = config.placement;
  j["head"] = config.head;
  j["strategy"] = {{"kind", config.strategy}, {"gamma", config.gamma}};
  j["train"] = {{"epochs", config.train.epochs},
                {"batch_size", config.train.batch_size},
                {"learning_rate", config.train.learning_rate},
                {"weight_decay", config.train.weight_decay},
                {"beta1", config.train.beta1},
                {"beta2", config.train.beta2},
                {"eps", config.train.eps}};
  j["calibration"] = {{"bins", config.calibration_bins}};
  j["policy"] = {{"tau", config.tau},
                 {"epsilon", config.epsilon},
                 {"step", config.sweep_step},
                 {"budget", config.search_budget}};
  j["cost_model"] = config.cost_model;
  return j.dump(2);
}

RunConfig from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw format_error(std::string("run config: ") + e.what());
  }
  RunConfig config;
  try {
    config.seed = j.value("seed", config.seed);
    if (j.contains("dataset")) dataset_from_json(j.at("dataset"), config.dataset);
    if (j.contains("backbone")) {
      const auto& b = j.at("backbone");
      config.backbone.text_dim = b.value("text_dim", config.backbone.text_dim);
      config.backbone.vision_dim = b.value("vision_dim", config.backbone.vision_dim);
      config.backbone.stem_width = b.value("stem_width", config.backbone.stem_width);
      config.backbone.fused_width = b.value("fused_width", config.backbone.fused_width);
      config.backbone.encoder_layers = b.value("encoder_layers", config.backbone.encoder_layers);
      config.backbone.classes = b.value("classes", config.backbone.classes);
      if (b.contains("activation")) {
        config.backbone.activation = parse_activation(b.at("activation").get<std::string>());
      }
    }
    config.placement = j.value("placement", config.placement);
    config.head = j.value("head", config.head);
    if (j.contains("strategy")) {
      config.strategy = j.at("strategy").value("kind", config.strategy);
      config.gamma = j.at("strategy").value("gamma", config.gamma);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      config.train.epochs = t.value("epochs", config.train.epochs);
      config.train.batch_size = t.value("batch_size", config.train.batch_size);
      config.train.learning_rate = t.value("learning_rate", config.train.learning_rate);
      config.train.weight_decay = t.value("weight_decay", config.train.weight_decay);
      config.train.beta1 = t.value("beta1", config.train.beta1);
      config.train.beta2 = t.value("beta2", config.train.beta2);
      config.train.eps = t.value("eps", config.train.eps);
    }
    if (j.contains("calibration")) {
      config.calibration_bins = j.at("calibration").value("bins", config.calibration_bins);
    }
    if (j.contains("policy")) {
      const auto& p = j.at("policy");
      config.tau = p.value("tau", config.tau);
      config.epsilon = p.value("epsilon", config.epsilon);
      config.sweep_step = p.value("step", config.sweep_step);
      config.search_budget = p.value("budget", config.search_budget);
    }
    config.cost_model = j.value("cost_model", config.cost_model);
  } catch (const json::exception& e) {
    throw format_error(std::string("run config: ") + e.what());
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw format_error("run config: cannot open '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw format_error("run config: cannot open '" + path.string() + "' for writing");
  out << to_json_string(config) << "\n";
}

}  // namespace mexit::cli
