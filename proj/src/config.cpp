#include "rgmm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "rgmm/error.hpp"

namespace rgmm {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw Error(ErrorCode::InvalidConfig, "config key '" + key + "': expected a number, got '" + text + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& text) {
  Int v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw Error(ErrorCode::InvalidConfig, "config key '" + key + "': expected an integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error(ErrorCode::InvalidConfig, "config key '" + key + "': expected true/false, got '" + text + "'");
}

std::string format_list(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

std::vector<int> parse_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_int<int>(key, item));
  if (out.empty()) throw Error(ErrorCode::InvalidConfig, "config key '" + key + "': empty list");
  return out;
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <typename T>
Field number_field(std::string key, T& ref) {
  Field f;
  f.key = key;
  if constexpr (std::is_floating_point_v<T>) {
    f.get = [&ref] { return format_double(static_cast<double>(ref)); };
    f.set = [&ref, key](const std::string& v) { ref = static_cast<T>(parse_double(key, v)); };
  } else {
    f.get = [&ref] { return std::to_string(ref); };
    f.set = [&ref, key](const std::string& v) { ref = parse_int<T>(key, v); };
  }
  return f;
}

std::vector<Field> pipeline_fields(PipelineConfig& c) {
  std::vector<Field> fields;
  fields.push_back(number_field("threshold_hu", c.threshold_hu));
  fields.push_back({"neighborhood", [&c] { return to_string(c.order); },
                    [&c](const std::string& v) {
                      try {
                        c.order = parse_order(v);
                      } catch (const Error& e) {
                        throw Error(ErrorCode::InvalidConfig, e.what());
                      }
                    }});
  for (int k = 0; k < kTissueClasses; ++k) {
    const std::string key = "components_class" + std::to_string(k);
    fields.push_back({key,
                      [&c, k] { return format_list(c.candidates.at(static_cast<std::size_t>(k))); },
                      [&c, k, key](const std::string& v) {
                        c.candidates.resize(kTissueClasses);
                        c.candidates[static_cast<std::size_t>(k)] = parse_list(key, v);
                      }});
  }
  fields.push_back(number_field("em_tolerance", c.em.tolerance));
  fields.push_back(number_field("em_max_iterations", c.em.max_iterations));
  fields.push_back(number_field("em_restarts", c.em.restarts));
  fields.push_back(number_field("em_ridge_scale", c.em.ridge_scale));
  fields.push_back(number_field("em_min_weight", c.em.min_weight));
  fields.push_back(number_field("em_max_samples", c.em_max_samples));
  fields.push_back({"selection_criterion", [&c] { return c.em.criterion == SelectionCriterion::Mse ? "mse" : "mae"; },
                    [&c](const std::string& v) {
                      if (v == "mse") c.em.criterion = SelectionCriterion::Mse;
                      else if (v == "mae") c.em.criterion = SelectionCriterion::Mae;
                      else throw Error(ErrorCode::InvalidConfig, "selection_criterion must be mse or mae");
                    }});
  fields.push_back(number_field("learners", c.boost.learners));
  fields.push_back(number_field("rus_ratio", c.boost.rus_ratio));
  fields.push_back(number_field("retry_budget", c.boost.retry_budget));
  fields.push_back(number_field("min_pseudo_loss", c.boost.min_error));
  fields.push_back(number_field("max_splits", c.tree.max_splits));
  fields.push_back(number_field("min_leaf", c.tree.min_leaf));
  fields.push_back({"quantile_candidates", [&c] { return std::string(c.tree.quantile_candidates ? "true" : "false"); },
                    [&c](const std::string& v) { c.tree.quantile_candidates = parse_bool("quantile_candidates", v); }});
  fields.push_back(number_field("quantile_min_distinct", c.tree.quantile_min_distinct));
  fields.push_back(number_field("quantile_bins", c.tree.quantile_bins));
  fields.push_back(number_field("fill_hu", c.fill_hu));
  fields.push_back({"regressor_features", [&c] { return std::string(c.regressor_features == RegressorFeatures::Raw ? "raw" : "combined"); },
                    [&c](const std::string& v) {
                      if (v == "raw") c.regressor_features = RegressorFeatures::Raw;
                      else if (v == "combined") c.regressor_features = RegressorFeatures::Combined;
                      else throw Error(ErrorCode::InvalidConfig, "regressor_features must be raw or combined");
                    }});
  fields.push_back({"gating", [&c] { return std::string(c.gating == Gating::Hard ? "hard" : "soft"); },
                    [&c](const std::string& v) {
                      if (v == "hard") c.gating = Gating::Hard;
                      else if (v == "soft") c.gating = Gating::Soft;
                      else throw Error(ErrorCode::InvalidConfig, "gating must be hard or soft");
                    }});
  return fields;
}

std::vector<Field> run_fields(RunConfig& c) {
  std::vector<Field> fields = pipeline_fields(c.pipeline);
  fields.push_back(number_field("threads", c.pipeline.threads));
  fields.push_back(number_field("cv_folds", c.cv_folds));
  fields.push_back(number_field("window_hu", c.window_hu));
  fields.push_back(number_field("fscore_beta", c.fscore_beta));
  fields.push_back(number_field("seed", c.seed));
  fields.push_back(number_field("phantom_patients", c.phantom.patients));
  fields.push_back(number_field("phantom_size", c.phantom.size));
  fields.push_back(number_field("phantom_spacing_mm", c.phantom.spacing_mm));
  fields.push_back(number_field("phantom_minority_fraction", c.phantom.minority_fraction));
  fields.push_back(number_field("phantom_smoothing_voxels", c.phantom.smoothing_voxels));
  fields.push_back(number_field("phantom_noise_scale", c.phantom.noise_scale));
  return fields;
}

void apply_fields(std::vector<Field>& fields, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    bool found = false;
    for (auto& f : fields) {
      if (f.key == key) {
        f.set(value);
        found = true;
        break;
      }
    }
    if (!found) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
  }
}

}  // namespace

void PipelineConfig::validate() const {
  auto bad = [](const std::string& what) { return Error(ErrorCode::InvalidConfig, what); };
  if (!std::isfinite(threshold_hu)) throw bad("threshold_hu must be finite");
  if (candidates.size() != static_cast<std::size_t>(kTissueClasses)) throw bad("need one component grid per tissue class");
  for (const auto& grid : candidates) {
    if (grid.empty()) throw bad("component grids must be non-empty");
    for (int J : grid) {
      if (J < 1) throw bad("component counts must be >= 1");
    }
  }
  if (!(em.tolerance > 0.0)) throw bad("em_tolerance must be > 0");
  if (em.max_iterations < 1) throw bad("em_max_iterations must be >= 1");
  if (em.restarts < 1) throw bad("em_restarts must be >= 1");
  if (!(em.ridge_scale > 0.0)) throw bad("em_ridge_scale must be > 0");
  if (!(em.min_weight >= 0.0 && em.min_weight < 1.0)) throw bad("em_min_weight must be in [0, 1)");
  if (em_max_samples < 0) throw bad("em_max_samples must be >= 0");
  if (!std::isfinite(fill_hu)) throw bad("fill_hu must be finite");
  if (threads < 1) throw bad("threads must be >= 1");
  tree.validate();
  boost.validate();
}

void RunConfig::validate() const {
  pipeline.validate();
  auto bad = [](const std::string& what) { return Error(ErrorCode::InvalidConfig, what); };
  if (cv_folds < 2) throw bad("cv_folds must be >= 2");
  if (!(window_hu > 0.0)) throw bad("window_hu must be > 0");
  if (!(fscore_beta > 0.0)) throw bad("fscore_beta must be > 0");
  if (phantom.patients < 1) throw bad("phantom_patients must be >= 1");
  if (phantom.size < 3) throw bad("phantom_size must be >= 3");
  if (!(phantom.spacing_mm > 0.0)) throw bad("phantom_spacing_mm must be > 0");
  if (!(phantom.minority_fraction > 0.0 && phantom.minority_fraction < 1.0)) throw bad("phantom_minority_fraction must be in (0, 1)");
  if (!(phantom.smoothing_voxels >= 0.0)) throw bad("phantom_smoothing_voxels must be >= 0");
  if (!(phantom.noise_scale > 0.0)) throw bad("phantom_noise_scale must be > 0");
}

std::map<std::string, std::string> RunConfig::to_map() const {
  RunConfig copy = *this;
  std::map<std::string, std::string> out;
  for (const auto& f : run_fields(copy)) out[f.key] = f.get();
  return out;
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::string out;
  for (const auto& f : run_fields(copy)) out += f.key + " = " + f.get() + "\n";
  return out;
}

void RunConfig::apply(const std::map<std::string, std::string>& values) {
  auto fields = run_fields(*this);
  apply_fields(fields, values);
}

std::string pipeline_to_text(const PipelineConfig& cfg) {
  PipelineConfig copy = cfg;
  std::string out;
  for (const auto& f : pipeline_fields(copy)) out += f.key + " = " + f.get() + "\n";
  return out;
}

PipelineConfig pipeline_from_map(const std::map<std::string, std::string>& values) {
  PipelineConfig cfg;
  auto fields = pipeline_fields(cfg);
  apply_fields(fields, values);
  cfg.validate();
  return cfg;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "config line without '=': '" + t + "'");
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str());
}

}  // namespace rgmm
