#include "pifold/serialization.hpp"

#include <algorithm>
#include <string>

#include "pifold/error.hpp"

namespace pifold {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const char* what) {
  if (!j.is_object()) fail(ErrorKind::kInvalidArgument, std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      fail(ErrorKind::kInvalidArgument, std::string(what) + ": unknown key '" + key + "'");
  }
}

void to_json(nlohmann::json& j, const FeatureFamilies& f) {
  j = {{"distance", f.distance}, {"angle", f.angle}, {"direction", f.direction}};
}

void from_json(const nlohmann::json& j, FeatureFamilies& f) {
  check_keys(j, {"distance", "angle", "direction"}, "feature families");
  f.distance = j.value("distance", f.distance);
  f.angle = j.value("angle", f.angle);
  f.direction = j.value("direction", f.direction);
}

void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = {{"node", c.node},
       {"edge", c.edge},
       {"edge_position", c.edge_position},
       {"edge_pairs", c.edge_pairs},
       {"num_virtual", c.num_virtual},
       {"k", c.k},
       {"num_rbf", c.num_rbf},
       {"position_width", c.position_width},
       {"max_offset", c.max_offset}};
}

void from_json(const nlohmann::json& j, FeatureConfig& c) {
  check_keys(j,
             {"node", "edge", "edge_position", "edge_pairs", "num_virtual", "k", "num_rbf",
              "position_width", "max_offset"},
             "feature config");
  if (j.contains("node")) c.node = j.at("node").get<FeatureFamilies>();
  if (j.contains("edge")) c.edge = j.at("edge").get<FeatureFamilies>();
  c.edge_position = j.value("edge_position", c.edge_position);
  if (j.contains("edge_pairs")) c.edge_pairs = j.at("edge_pairs").get<std::vector<int>>();
  c.num_virtual = j.value("num_virtual", c.num_virtual);
  c.k = j.value("k", c.k);
  c.num_rbf = j.value("num_rbf", c.num_rbf);
  c.position_width = j.value("position_width", c.position_width);
  c.max_offset = j.value("max_offset", c.max_offset);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"features", c.features},
       {"hidden", c.hidden},
       {"encoder_layers", c.encoder_layers},
       {"decoder_layers", c.decoder_layers},
       {"heads", c.heads},
       {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  check_keys(j, {"features", "hidden", "encoder_layers", "decoder_layers", "heads", "dropout"},
             "model config");
  if (j.contains("features")) c.features = j.at("features").get<FeatureConfig>();
  c.hidden = j.value("hidden", c.hidden);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.heads = j.value("heads", c.heads);
  c.dropout = j.value("dropout", c.dropout);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"max_steps", c.max_steps},
       {"seed", c.seed},
       {"precision", precision_name(c.precision)},
       {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
       {"clip_norm", c.clip_norm},
       {"schedule", c.schedule == Schedule::kOneCycle ? "one_cycle" : "constant"}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  check_keys(j,
             {"learning_rate", "batch_size", "epochs", "max_steps", "seed", "precision", "adam",
              "clip_norm", "schedule"},
             "train config");
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    check_keys(a, {"beta1", "beta2", "eps"}, "adam config");
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  if (j.contains("schedule")) {
    const auto s = j.at("schedule").get<std::string>();
    if (s == "constant") c.schedule = Schedule::kConstant;
    else if (s == "one_cycle") c.schedule = Schedule::kOneCycle;
    else fail(ErrorKind::kInvalidArgument, "train config: unknown schedule '" + s + "'");
  }
}

void to_json(nlohmann::json& j, const EvalOptions& o) {
  j = {{"precision", precision_name(o.precision)},
       {"min_length", o.min_length},
       {"max_length", o.max_length}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json proteins = nlohmann::json::array();
  for (const auto& p : r.proteins)
    proteins.push_back({{"name", p.name}, {"length", p.length}, {"recovery", p.recovery}, {"loss", p.loss}});
  j = {{"empty", r.empty},
       {"num_proteins", r.proteins.size()},
       {"residues", r.residues},
       {"options", r.options},
       {"proteins", proteins},
       {"wall_time", r.wall_time}};
  // An empty subset has no metrics; the keys are null rather than NaN.
  if (r.empty) {
    j["perplexity"] = nullptr;
    j["median_recovery"] = nullptr;
    j["worst_recovery"] = nullptr;
  } else {
    j["perplexity"] = r.perplexity;
    j["median_recovery"] = r.median_recovery;
    j["worst_recovery"] = r.worst_recovery;
  }
}

}  // namespace pifold
