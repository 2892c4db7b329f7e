#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cdrl/errors.hpp"
#include "cdrl/lab.hpp"

namespace cdrl::lab {

namespace {

using Defaults = std::map<std::string, std::string>;

const std::string kPowerGrid = "0.25,0.125,0.0625,0.03125,0.015625,0.0078125";

const std::map<std::string, Defaults>& all_defaults() {
  static const std::map<std::string, Defaults> defaults = {
      {"gap-rates",
       {
           {"env", "theorem"},
           {"env.horizon", "auto"},
           {"env.discount", "1"},
           {"env.drift", "10"},
           {"env.volatility", "1"},
           {"t", "0"},
           {"x", "0"},
           {"h_grid", kPowerGrid},
           {"samples", "10000"},
           {"substeps", "32"},
           {"tail_dt", "0"},
           {"p", "1"},
           {"quantiles", "512"},
           {"bootstrap", "200"},
           {"seeds", "0"},
       }},
      {"superiority-demo",
       {
           {"env.drift", "10"},
           {"env.volatility", "1"},
           {"env.horizon", "10"},
           {"env.discount", "1"},
           {"t", "0"},
           {"x", "0"},
           {"action", "1"},
           {"omega_grid", "4,8,16,32,64,128,1000"},
           {"samples", "100000"},
           {"substeps", "16"},
           {"tail_dt", "0.01"},
           {"quantiles", "512"},
           {"seeds", "0"},
       }},
      {"train",
       {
           {"agent", "dsup"},
           {"q", "0.5"},
           {"risk", "mean"},
           {"risk.alpha", "0.25"},
           {"omega_grid", "5"},
           {"seeds", "0"},
           {"base_steps", "20000"},
           {"buffer", "20000"},
           {"batch", "32"},
           {"lr", "1e-4"},
           {"adam.beta1", "0.9"},
           {"adam.beta2", "0.999"},
           {"adam.epsilon", "1e-8"},
           {"discount", "0.999"},
           {"target_period", "1000"},
           {"eps.start", "1"},
           {"eps.end", "0.02"},
           {"eps.fraction", "0.1"},
           {"quantiles", "100"},
           {"hidden", "100,100"},
           {"kappa", "1"},
           {"horizon", "100"},
           {"x0", "1"},
           {"train.mu", "0"},
           {"train.sigma", "0.2"},
           {"eval.mu", "0"},
           {"eval.sigma", "0.2"},
           {"data.csv", ""},
           {"data.dt", "1"},
           {"data.split", "0.5"},
           {"euler", "false"},
           {"euler.substeps", "1"},
           {"eval_every", "1000"},
           {"eval_episodes", "100"},
           {"eval.cvar_alpha", "0.25"},
           {"checkpoint", "true"},
       }},
      {"estimate-gbm",
       {
           {"csv", ""},
           {"dt", "1"},
       }},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_int(const std::string& s, std::int64_t& out) {
  try {
    std::size_t used = 0;
    out = std::stoll(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

std::string version_string() { return std::string("lab ") + LAB_VERSION + " (" + LAB_GIT_DESCRIBE + ")"; }

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"gap-rates", "superiority-demo", "train", "estimate-gbm"};
  return names;
}

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source,
                                                     std::vector<std::string>& errors) {
  std::map<std::string, std::string> values;
  std::stringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        errors.push_back(source + ":" + std::to_string(line_no) + ": malformed section header");
        continue;
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      errors.push_back(source + ":" + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    std::string key = trim(t.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    values[key] = trim(t.substr(eq + 1));
  }
  return values;
}

ResolvedConfig resolve_config(const std::string& command, const std::optional<std::filesystem::path>& file,
                              const std::vector<std::string>& overrides) {
  const auto& defaults = all_defaults();
  const auto it = defaults.find(command);
  if (it == defaults.end()) throw ConfigError("unknown subcommand '" + command + "'");
  ResolvedConfig cfg{command, it->second};
  std::vector<std::string> errors;
  auto apply = [&](const std::map<std::string, std::string>& values, const std::string& source) {
    for (const auto& [key, value] : values) {
      if (key == "command") {
        if (value != command) errors.push_back(source + ": config was written for '" + value + "'");
        continue;
      }
      if (!cfg.values.count(key)) {
        errors.push_back(key + ": unknown key (" + source + ")");
        continue;
      }
      cfg.values[key] = value;
    }
  };
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply(parse_config_text(ss.str(), file->string(), errors), file->string());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      errors.push_back("--set " + o + ": expected key=value");
      continue;
    }
    apply({{trim(o.substr(0, eq)), trim(o.substr(eq + 1))}}, "--set");
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

void write_resolved_config(const ResolvedConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# " << version_string() << '\n';
  out << "command = " << cfg.command << '\n';
  for (const auto& [key, value] : cfg.values) out << key << " = " << value << '\n';
}

const std::string* ConfigReader::raw(const std::string& key) {
  const auto it = cfg_.values.find(key);
  if (it == cfg_.values.end()) {
    fail(key, "missing");
    return nullptr;
  }
  return &it->second;
}

void ConfigReader::fail(const std::string& key, const std::string& why) { errors_.push_back(key + ": " + why); }

std::string ConfigReader::text(const std::string& key) {
  const auto* v = raw(key);
  return v ? *v : std::string{};
}

double ConfigReader::real(const std::string& key) {
  const auto* v = raw(key);
  double out = 0.0;
  if (v && !parse_double(*v, out)) fail(key, "expected a real number, got '" + *v + "'");
  return out;
}

double ConfigReader::positive(const std::string& key) {
  const double v = real(key);
  if (!(v > 0.0)) fail(key, "must be positive");
  return v;
}

std::int64_t ConfigReader::integer(const std::string& key, std::int64_t min) {
  const auto* v = raw(key);
  std::int64_t out = 0;
  if (v && !parse_int(*v, out)) {
    fail(key, "expected an integer, got '" + *v + "'");
  } else if (v && out < min) {
    fail(key, "must be >= " + std::to_string(min));
  }
  return out;
}

bool ConfigReader::boolean(const std::string& key) {
  const auto* v = raw(key);
  if (!v) return false;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  fail(key, "expected true/false, got '" + *v + "'");
  return false;
}

std::vector<double> ConfigReader::reals(const std::string& key) {
  const auto* v = raw(key);
  std::vector<double> out;
  if (!v) return out;
  for (const auto& item : split_list(*v)) {
    double d = 0.0;
    if (!parse_double(item, d)) {
      fail(key, "expected a comma-separated list of reals, got '" + item + "'");
      return {};
    }
    out.push_back(d);
  }
  if (out.empty()) fail(key, "list must not be empty");
  return out;
}

std::vector<std::uint64_t> ConfigReader::seeds(const std::string& key) {
  const auto* v = raw(key);
  std::vector<std::uint64_t> out;
  if (!v) return out;
  for (const auto& item : split_list(*v)) {
    std::int64_t d = 0;
    if (!parse_int(item, d) || d < 0) {
      fail(key, "expected nonnegative integer seeds, got '" + item + "'");
      return {};
    }
    out.push_back(static_cast<std::uint64_t>(d));
  }
  if (out.empty()) fail(key, "list must not be empty");
  return out;
}

std::vector<int> ConfigReader::ints(const std::string& key) {
  const auto* v = raw(key);
  std::vector<int> out;
  if (!v) return out;
  for (const auto& item : split_list(*v)) {
    std::int64_t d = 0;
    if (!parse_int(item, d) || d <= 0) {
      fail(key, "expected positive integers, got '" + item + "'");
      return {};
    }
    out.push_back(static_cast<int>(d));
  }
  return out;
}

void ConfigReader::finish() const {
  if (errors_.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& e : errors_) msg += "\n  " + e;
  throw ConfigError(msg);
}

std::string format_real(double v) {
  // shortest text that reads back to the same double
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

ResultWriter::ResultWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  out_ << "# " << kResultsSchema << '\n';
  out_ << "experiment,seed,h,metric,value,stderr\n";
}

void ResultWriter::row(const std::string& experiment, std::uint64_t seed, std::optional<double> h,
                       const std::string& metric, double value, std::optional<double> stderr_value) {
  out_ << experiment << ',' << seed << ',' << (h ? format_real(*h) : "") << ',' << metric << ','
       << format_real(value) << ',' << (stderr_value ? format_real(*stderr_value) : "") << '\n';
  out_.flush();
}

}  // namespace cdrl::lab
