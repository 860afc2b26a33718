#include "weatherseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "weatherseg/errors.hpp"
#include "weatherseg/synthdata.hpp"

namespace weatherseg {

using nlohmann::json;

namespace {

struct VariantEntry {
  Variant variant;
  std::string_view name;
};

constexpr VariantEntry kVariants[] = {
    {Variant::kSupervisedBaseline, "STB"}, {Variant::kSingleTeacher, "STFW"},
    {Variant::kDualTeacher, "DTFW"},       {Variant::kDualConsensus, "DTC"},
    {Variant::kComplete, "COMPLETE"},
};

void reject_unknown(const json& obj, std::initializer_list<std::string_view> keys,
                    const std::string& where) {
  const std::set<std::string_view> allowed(keys);
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown config key '" + where + k + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

const json& object_at(const json& obj, const char* key) {
  const json& v = obj.at(key);
  if (!v.is_object()) throw ConfigError(std::string("config key '") + key + "' must be an object");
  return v;
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& e : kVariants) {
    if (e.variant == v) return e.name;
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (const auto& e : kVariants) {
    if (e.name == name) return e.variant;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected STB, STFW, DTFW, DTC or COMPLETE)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> kAll = {Variant::kSupervisedBaseline, Variant::kSingleTeacher,
                                            Variant::kDualTeacher, Variant::kDualConsensus,
                                            Variant::kComplete};
  return kAll;
}

void BatchSpec::validate() const {
  if (labeled < 1) throw ConfigError("batch.labeled (B_L) must be at least 1");
}

void DataSpec::validate() const {
  if (train_scenes == 0) throw ConfigError("data.train_scenes must be positive");
  if (eval_scenes == 0) throw ConfigError("data.eval_scenes must be positive");
  if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0)) {
    throw ConfigError("data.labeled_ratio must lie in (0, 1]");
  }
  for (double b : betas) {
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("data.betas entries must lie in [0, 1]");
  }
}

void TrainConfig::validate() const {
  dims.validate();
  weights.validate();
  ema.validate();
  batch.validate();
  data.validate();
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be at least 1");
  if (!(teacher_perturbation >= 0.0)) throw ConfigError("teacher_perturbation must be >= 0");
  if (labeled_count(data.train_scenes, data.labeled_ratio) == 0) {
    throw ConfigError("data split yields no labeled scene; raise train_scenes or labeled_ratio");
  }
}

std::string config_to_json(const TrainConfig& cfg) {
  json j;
  j["dims"] = {{"in_channels", cfg.dims.in_channels}, {"features", cfg.dims.features},
               {"classes", cfg.dims.classes},         {"height", cfg.dims.height},
               {"width", cfg.dims.width},             {"heads", cfg.dims.heads}};
  j["weights"] = {{"lambda1", cfg.weights.lambda1},
                  {"lambda2", cfg.weights.lambda2},
                  {"lambda3", cfg.weights.lambda3}};
  j["alpha"] = cfg.ema.alpha;
  j["tau"] = cfg.tau;
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  j["epochs"] = cfg.epochs;
  j["steps_per_epoch"] = cfg.steps_per_epoch;
  j["batch"] = {{"labeled", cfg.batch.labeled}, {"unlabeled", cfg.batch.unlabeled}};
  j["data"] = {{"train_scenes", cfg.data.train_scenes},
               {"labeled_ratio", cfg.data.labeled_ratio},
               {"betas", cfg.data.betas},
               {"eval_scenes", cfg.data.eval_scenes}};
  j["seed"] = cfg.seed;
  j["variant"] = std::string(variant_name(cfg.variant));
  j["teacher_perturbation"] = cfg.teacher_perturbation;
  j["convergence_threshold"] = cfg.convergence_threshold;
  return j.dump(2);
}

TrainConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"dims", "weights", "alpha", "tau", "lr", "momentum", "epochs", "steps_per_epoch",
                  "batch", "data", "seed", "variant", "teacher_perturbation",
                  "convergence_threshold"},
                 "");
  TrainConfig cfg;
  if (j.contains("dims")) {
    const json& d = object_at(j, "dims");
    reject_unknown(d, {"in_channels", "features", "classes", "height", "width", "heads"}, "dims.");
    read(d, "in_channels", cfg.dims.in_channels);
    read(d, "features", cfg.dims.features);
    read(d, "classes", cfg.dims.classes);
    read(d, "height", cfg.dims.height);
    read(d, "width", cfg.dims.width);
    read(d, "heads", cfg.dims.heads);
  }
  if (j.contains("weights")) {
    const json& w = object_at(j, "weights");
    reject_unknown(w, {"lambda1", "lambda2", "lambda3"}, "weights.");
    read(w, "lambda1", cfg.weights.lambda1);
    read(w, "lambda2", cfg.weights.lambda2);
    read(w, "lambda3", cfg.weights.lambda3);
  }
  read(j, "alpha", cfg.ema.alpha);
  read(j, "tau", cfg.tau);
  read(j, "lr", cfg.lr);
  read(j, "momentum", cfg.momentum);
  read(j, "epochs", cfg.epochs);
  read(j, "steps_per_epoch", cfg.steps_per_epoch);
  if (j.contains("batch")) {
    const json& b = object_at(j, "batch");
    reject_unknown(b, {"labeled", "unlabeled"}, "batch.");
    read(b, "labeled", cfg.batch.labeled);
    read(b, "unlabeled", cfg.batch.unlabeled);
  }
  if (j.contains("data")) {
    const json& d = object_at(j, "data");
    reject_unknown(d, {"train_scenes", "labeled_ratio", "betas", "eval_scenes"}, "data.");
    read(d, "train_scenes", cfg.data.train_scenes);
    read(d, "labeled_ratio", cfg.data.labeled_ratio);
    read(d, "betas", cfg.data.betas);
    read(d, "eval_scenes", cfg.data.eval_scenes);
  }
  read(j, "seed", cfg.seed);
  if (j.contains("variant")) {
    std::string name;
    read(j, "variant", name);
    cfg.variant = parse_variant(name);
  }
  read(j, "teacher_perturbation", cfg.teacher_perturbation);
  read(j, "convergence_threshold", cfg.convergence_threshold);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return config_from_json(buf.str());
}

}  // namespace weatherseg
