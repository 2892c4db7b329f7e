#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdrl/errors.hpp"
#include "cdrl/lab.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time distributional RL laboratory"};
  app.set_version_flag("--version", cdrl::lab::version_string());
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  for (const auto& name : cdrl::lab::commands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override one key: key=value")->allow_extra_args(false);
    sub->add_option("--out", out, "output directory")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    std::optional<std::filesystem::path> file;
    if (!config.empty()) file = config;
    const auto cfg = cdrl::lab::resolve_config(command, file, overrides);
    std::cerr << cdrl::lab::version_string() << '\n';
    cdrl::lab::run_command(cfg, out, std::cout);
  } catch (const cdrl::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const cdrl::NumericalError& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
