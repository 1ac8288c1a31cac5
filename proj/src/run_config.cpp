#include "idn/run_config.hpp"

#include <fstream>

#include "idn/kv.hpp"

namespace idn {

void RunConfig::set(std::string_view key, std::string_view value) {
  if (model.set(key, value)) return;
  SyntheticSpec& s = synthetic;
  if (key == "classes") s.num_classes = kv::parse_size(key, value);
  else if (key == "feature_dim") s.feature_dim = kv::parse_size(key, value);
  else if (key == "prototype_scale") s.prototype_scale = kv::parse_double(key, value);
  else if (key == "noise_sigma") s.noise_sigma = kv::parse_double(key, value);
  else if (key == "sequence_length") s.sequence_length = kv::parse_size(key, value);
  else if (key == "chunks") s.total_chunks = kv::parse_size(key, value);
  else if (key == "min_run") s.min_run = kv::parse_size(key, value);
  else if (key == "max_run") s.max_run = kv::parse_size(key, value);
  else if (key == "background_rate") s.background_rate = kv::parse_double(key, value);
  else if (key == "eval_fraction") s.eval_fraction = kv::parse_double(key, value);
  else if (key == "data") data = std::string(value);
  else if (key == "checkpoint") checkpoint = std::string(value);
  else if (key == "epoch_mcap") epoch_mcap = kv::parse_bool(key, value);
  else if (key == "gradcheck_tolerance") gradcheck_tolerance = kv::parse_double(key, value);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::set_pair(std::string_view pair) {
  const auto eq = pair.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("expected key=value, got '" + std::string(pair) + "'");
  }
  set(kv::trim(pair.substr(0, eq)), kv::trim(pair.substr(eq + 1)));
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_kv() const {
  auto out = model.to_kv();
  const SyntheticSpec& s = synthetic;
  const std::vector<std::pair<std::string, std::string>> rest{
      {"classes", std::to_string(s.num_classes)},
      {"feature_dim", std::to_string(s.feature_dim)},
      {"prototype_scale", kv::format_double(s.prototype_scale)},
      {"noise_sigma", kv::format_double(s.noise_sigma)},
      {"sequence_length", std::to_string(s.sequence_length)},
      {"chunks", std::to_string(s.total_chunks)},
      {"min_run", std::to_string(s.min_run)},
      {"max_run", std::to_string(s.max_run)},
      {"background_rate", kv::format_double(s.background_rate)},
      {"eval_fraction", kv::format_double(s.eval_fraction)},
      {"data", data.generic_string()},
      {"checkpoint", checkpoint.generic_string()},
      {"epoch_mcap", epoch_mcap ? "true" : "false"},
      {"gradcheck_tolerance", kv::format_double(gradcheck_tolerance)}};
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec s = synthetic;
  s.seed = model.seed;
  return s;
}

void RunConfig::validate() const {
  model.validate();
  synthetic.validate();
  if (!(gradcheck_tolerance > 0.0)) throw ConfigError("gradcheck_tolerance must be > 0");
}

RunConfig read_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  RunConfig c;
  for (const auto& e : kv::parse(in, file.string())) {
    try {
      c.set(e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(file.string() + ":" + std::to_string(e.line) + ": " + err.what());
    }
  }
  const auto base = file.parent_path();
  if (!c.data.empty() && c.data.is_relative()) c.data = base / c.data;
  if (!c.checkpoint.empty() && c.checkpoint.is_relative()) c.checkpoint = base / c.checkpoint;
  return c;
}

void write_run_config(std::ostream& os, const RunConfig& c) {
  for (const auto& [k, v] : c.to_kv()) os << k << '=' << v << '\n';
}

}  // namespace idn
