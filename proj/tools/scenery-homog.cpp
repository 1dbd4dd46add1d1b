// scenery-homog: config-driven experiment runner.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scenery/experiments.hpp"

namespace {

enum Exit : int { kOk = 0, kCheckFailed = 1, kConfig = 2, kResource = 3, kIo = 4, kRuntime = 5 };

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
  bool check = false;
  bool print_config = false;
};

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  const auto text = scenery::read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw scenery::ConfigError("/", std::string("invalid JSON in ") + path + ": " + e.what());
  }
}

int run_kind(scenery::ExperimentKind kind, const Options& o) {
  auto j = load_config(o.config_path);
  if (!j.is_object()) throw scenery::ConfigError("/", "config must be a JSON object");
  // flags win over the file
  if (o.seed) j["master_seed"] = *o.seed;
  if (o.workers) j["workers"] = *o.workers;
  if (o.out) j["output"] = *o.out;
  if (o.check) j["check"] = true;
  const auto cfg = scenery::parse_config(j, kind);
  if (o.print_config) {
    std::cout << cfg.to_json().dump(2) << "\n";
    return kOk;
  }
  const auto man = scenery::run(cfg);
  std::cout << "config_hash " << man.config_hash << "\n"
            << "workers " << man.workers << "\n"
            << "wall_clock_seconds " << man.wall_clock_seconds << "\n"
            << "output " << cfg.output << "\n";
  for (const auto& c : man.checks) std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.reason << "\n";
  return cfg.check && !man.all_passed() ? kCheckFailed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo experiments for random-potential homogenization"};
  app.require_subcommand(1);
  Options o;
  const std::pair<const char*, scenery::ExperimentKind> kinds[] = {
      {"effective", scenery::ExperimentKind::effective},   {"homogenize", scenery::ExperimentKind::homogenize},
      {"scenery", scenery::ExperimentKind::scenery},       {"corrector", scenery::ExperimentKind::corrector},
      {"spde", scenery::ExperimentKind::spde},             {"field-check", scenery::ExperimentKind::field_check}};
  for (const auto& [name, kind] : kinds) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " experiment");
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--workers", o.workers, "worker threads (default: config, then SCENERY_HOMOG_WORKERS, then 1)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", o.out, "output directory");
    sub->add_flag("--check", o.check, "exit 1 when an acceptance check fails");
    sub->add_flag("--print-config", o.print_config, "print the resolved config and exit");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  scenery::ExperimentKind kind{};
  for (const auto& [name, k] : kinds)
    if (app.got_subcommand(name)) kind = k;
  try {
    return run_kind(kind, o);
  } catch (const scenery::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const scenery::ResourceError& e) {
    std::cerr << "resource error: " << e.what() << "\n";
    return kResource;
  } catch (const scenery::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
