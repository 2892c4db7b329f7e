#pragma once

// Experiment runner behind the `lab` CLI: flat key=value configuration,
// subcommands, and tidy CSV output.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cdrl::lab {

inline constexpr const char* kResultsSchema = "lab-results v1";
inline constexpr const char* kTrainLogSchema = "lab-trainlog v1";

std::string version_string();

const std::vector<std::string>& commands();

// Fully resolved key/value configuration for one subcommand. Section headers
// `[name]` in config files prefix the keys that follow with `name.`.
struct ResolvedConfig {
  std::string command;
  std::map<std::string, std::string> values;
};

// Defaults, then the config file, then each `key=value` override. Unknown keys
// and malformed lines are collected and reported together as a ConfigError.
ResolvedConfig resolve_config(const std::string& command, const std::optional<std::filesystem::path>& file,
                              const std::vector<std::string>& overrides);

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source,
                                                     std::vector<std::string>& errors);

void write_resolved_config(const ResolvedConfig& cfg, const std::filesystem::path& path);

// Typed access that records problems instead of throwing; finish() throws a
// ConfigError naming every offending key.
class ConfigReader {
 public:
  explicit ConfigReader(const ResolvedConfig& cfg) : cfg_(cfg) {}

  std::string text(const std::string& key);
  double real(const std::string& key);
  double positive(const std::string& key);
  std::int64_t integer(const std::string& key, std::int64_t min = 0);
  bool boolean(const std::string& key);
  std::vector<double> reals(const std::string& key);
  std::vector<std::uint64_t> seeds(const std::string& key);
  std::vector<int> ints(const std::string& key);

  void fail(const std::string& key, const std::string& why);
  void finish() const;

 private:
  const std::string* raw(const std::string& key);

  const ResolvedConfig& cfg_;
  std::vector<std::string> errors_;
};

// Serialized writer for tidy result rows:
// experiment,seed,h,metric,value,stderr
class ResultWriter {
 public:
  explicit ResultWriter(const std::filesystem::path& path);

  void row(const std::string& experiment, std::uint64_t seed, std::optional<double> h, const std::string& metric,
           double value, std::optional<double> stderr_value = std::nullopt);

 private:
  std::ofstream out_;
};

std::string format_real(double v);

void cmd_gap_rates(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_superiority_demo(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_train(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_estimate_gbm(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log);

// Writes the resolved config, then dispatches.
void run_command(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log);

}  // namespace cdrl::lab
