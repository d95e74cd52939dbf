#include "hfmf/run_config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hfmf/errors.hpp"
#include "json.hpp"

namespace hfmf {
namespace {

using nlohmann::json;
using Setter = std::function<void(RunConfig&, const json&)>;

template <class T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw ConfigurationError("");
      const auto x = v.get<long long>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
        throw ConfigurationError("");
      return static_cast<int>(x);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigurationError("");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigurationError("");
      return v.get<double>();
    } else {
      if (!v.is_string()) throw ConfigurationError("");
      return v.get<std::string>();
    }
  } catch (const ConfigurationError&) {
    throw ConfigurationError("config key '" + key + "' has the wrong type");
  }
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const json& v) { c.train.seed = as<std::uint64_t>(v, "seed"); }},
      {"max_epochs", [](RunConfig& c, const json& v) { c.train.max_epochs = as<int>(v, "max_epochs"); }},
      {"early_stop_patience",
       [](RunConfig& c, const json& v) { c.train.patience = as<int>(v, "early_stop_patience"); }},
      {"batch_size", [](RunConfig& c, const json& v) { c.train.batch_size = as<int>(v, "batch_size"); }},
      {"learning_rate",
       [](RunConfig& c, const json& v) { c.train.learning_rate = as<double>(v, "learning_rate"); }},
      {"split_train", [](RunConfig& c, const json& v) { c.train.split_train = as<double>(v, "split_train"); }},
      {"split_val", [](RunConfig& c, const json& v) { c.train.split_val = as<double>(v, "split_val"); }},
      {"split_test", [](RunConfig& c, const json& v) { c.train.split_test = as<double>(v, "split_test"); }},
      {"image_size", [](RunConfig& c, const json& v) { c.dims.image_size = as<int>(v, "image_size"); }},
      {"patch", [](RunConfig& c, const json& v) { c.dims.patch = as<int>(v, "patch"); }},
      {"d", [](RunConfig& c, const json& v) { c.dims.d = as<int>(v, "d"); }},
      {"vit_blocks", [](RunConfig& c, const json& v) { c.dims.vit_blocks = as<int>(v, "vit_blocks"); }},
      {"vit_mlp", [](RunConfig& c, const json& v) { c.dims.vit_mlp = as<int>(v, "vit_mlp"); }},
      {"channels",
       [](RunConfig& c, const json& v) {
         if (!v.is_array() || v.size() != 3)
           throw ConfigurationError("config key 'channels' must be an array of 3 integers");
         for (std::size_t i = 0; i < 3; ++i) c.dims.channels[i] = as<int>(v[i], "channels");
       }},
      {"head_hidden", [](RunConfig& c, const json& v) { c.dims.head_hidden = as<int>(v, "head_hidden"); }},
      {"d_x", [](RunConfig& c, const json& v) { c.dims.d_x = as<int>(v, "d_x"); }},
      {"d_r", [](RunConfig& c, const json& v) { c.dims.d_r = as<int>(v, "d_r"); }},
      {"d_s", [](RunConfig& c, const json& v) { c.dims.d_s = as<int>(v, "d_s"); }},
      {"crop", [](RunConfig& c, const json& v) { c.dims.crop = as<int>(v, "crop"); }},
      {"k_context", [](RunConfig& c, const json& v) { c.dims.k_context = as<int>(v, "k_context"); }},
      {"ensemble_hidden",
       [](RunConfig& c, const json& v) { c.dims.ensemble_hidden = as<int>(v, "ensemble_hidden"); }},
      {"n_bins", [](RunConfig& c, const json& v) { c.n_bins = as<int>(v, "n_bins"); }},
      {"n_per_class", [](RunConfig& c, const json& v) { c.n_per_class = as<int>(v, "n_per_class"); }},
      {"data", [](RunConfig& c, const json& v) { c.data_dir = as<std::string>(v, "data"); }},
      {"out", [](RunConfig& c, const json& v) { c.out_dir = as<std::string>(v, "out"); }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  dims.validate();
  if (n_bins < 1) throw ConfigurationError("n_bins must be >= 1");
  if (n_per_class < 2) throw ConfigurationError("n_per_class must be >= 2");
}

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigurationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigurationError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : doc.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigurationError("unknown config key '" + key + "'");
    it->second(c, value);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& c) {
  json j = {
      {"seed", c.train.seed},
      {"max_epochs", c.train.max_epochs},
      {"early_stop_patience", c.train.patience},
      {"batch_size", c.train.batch_size},
      {"learning_rate", c.train.learning_rate},
      {"split_train", c.train.split_train},
      {"split_val", c.train.split_val},
      {"split_test", c.train.split_test},
      {"image_size", c.dims.image_size},
      {"patch", c.dims.patch},
      {"d", c.dims.d},
      {"vit_blocks", c.dims.vit_blocks},
      {"vit_mlp", c.dims.vit_mlp},
      {"channels", {c.dims.channels[0], c.dims.channels[1], c.dims.channels[2]}},
      {"head_hidden", c.dims.head_hidden},
      {"d_x", c.dims.d_x},
      {"d_r", c.dims.d_r},
      {"d_s", c.dims.d_s},
      {"crop", c.dims.crop},
      {"k_context", c.dims.k_context},
      {"ensemble_hidden", c.dims.ensemble_hidden},
      {"n_bins", c.n_bins},
      {"n_per_class", c.n_per_class},
      {"data", c.data_dir},
      {"out", c.out_dir},
  };
  return j.dump(2);
}

}  // namespace hfmf
