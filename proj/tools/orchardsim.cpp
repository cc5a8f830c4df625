// orchardsim: command-line front end for the orchard panel simulator.
#include <cstdio>
#include <cstring>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "orchardsim/error.hpp"
#include "orchardsim/pipeline.hpp"

namespace {

int exit_code(const char* category) {
  if (std::strcmp(category, "config") == 0) return 2;
  if (std::strcmp(category, "io") == 0 || std::strcmp(category, "parse") == 0) return 3;
  if (std::strcmp(category, "infeasible") == 0) return 4;
  if (std::strcmp(category, "eval_mismatch") == 0) return 5;
  return 1;
}

int fail(const char* category, const std::string& detail) {
  std::string one_line = detail;
  for (char& c : one_line) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::fprintf(stderr, "error: %s: %s\n", category, one_line.c_str());
  return exit_code(category);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Procedural orchard panel simulator, virtual laser scanner and segmentation evaluator"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string output_dir;
  app.add_option("-c,--config", config_path, "Pipeline config file (JSON, comments allowed)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Override the config's master seed");
  auto* jobs_opt = app.add_option("-j,--jobs", jobs, "Worker threads; outputs do not depend on this")->check(CLI::PositiveNumber);
  auto* out_opt = app.add_option("-o,--output-dir", output_dir, "Override the config's output directory");

  using Cmd = std::function<orchard::CommandResult(const orchard::PipelineConfig&)>;
  const std::vector<std::tuple<std::string, std::string, Cmd>> commands = {
      {"gen-base", "Create the base tree library (synthetic or from a file)", orchard::cmd_gen_base},
      {"gen-trees", "Generate trees by interpolating the base library", orchard::cmd_gen_trees},
      {"gen-panels", "Assemble panels and write noise-free reference clouds", orchard::cmd_gen_panels},
      {"scan", "Scan every panel with each configured scanner", orchard::cmd_scan},
      {"voxelize", "Voxelize panel clouds", orchard::cmd_voxelize},
      {"eval", "Score prediction files against ground-truth clouds", orchard::cmd_eval},
      {"stats", "Print point, instance and hit-rate statistics", orchard::cmd_stats},
  };
  std::map<CLI::App*, Cmd> handlers;
  for (const auto& [name, help, fn] : commands) handlers[app.add_subcommand(name, help)] = fn;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("config", e.what());
  }

  try {
    orchard::PipelineConfig cfg = orchard::load_config(config_path);
    orchard::Overrides o;
    if (*seed_opt) o.seed = seed;
    if (*jobs_opt) o.jobs = jobs;
    if (*out_opt) o.output_dir = output_dir;
    orchard::apply_overrides(cfg, o);
    for (const auto& [sub, fn] : handlers) {
      if (!sub->parsed()) continue;
      const orchard::CommandResult r = fn(cfg);
      std::cout << r.summary;
      std::cout << "manifest: " << (cfg.output_dir / r.manifest).string() << "\n";
    }
  } catch (const orchard::Error& e) {
    return fail(e.category(), e.what());
  } catch (const std::bad_alloc&) {
    return fail("internal", "out of memory");
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
