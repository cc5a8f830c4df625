#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "orchardsim/io.hpp"
#include "orchardsim/pipeline.hpp"

namespace fixture {

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "orchardsim_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Every regular file under `root`, keyed by relative path.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), root).generic_string()] = orchard::read_file(e.path());
  }
  return files;
}

// Small but complete pipeline: a handful of trees, two or three panels and
// scanners coarse enough to run in well under a second each.
inline std::string small_config(const std::string& scanners_json, int panels = 2, int trees = 6) {
  return R"({
  // test fixture
  "seed": 4242,
  "output_dir": "out",
  "base": {"n_trunks": 5, "n_branches": 40},
  "trees": {"count": )" +
         std::to_string(trees) + R"(, "branch_count": [4, 6]},
  "panels": {"count": )" +
         std::to_string(panels) + R"(, "trees_per_panel": [2, 3], "reference_density": 400},
  "scan": {"sides_per_ring": 8, "scanners": )" +
         scanners_json + R"(},
  "voxelize": {"voxel_size": 0.05},
  "eval": {"dataset": "panels"}
})";
}

inline const char* kCoarseScanner =
    R"([{"name": "coarse", "position": [0, -3, 1.5], "az_range_deg": [51, 129], "el_range_deg": [-25, 20], "resolution_deg": 1.0}])";

inline orchard::PipelineConfig write_and_load(const std::filesystem::path& dir, const std::string& text) {
  orchard::write_file(dir / "config.jsonc", text);
  return orchard::load_config(dir / "config.jsonc");
}

inline void run_all(const orchard::PipelineConfig& cfg, bool with_scan = true) {
  orchard::cmd_gen_base(cfg);
  orchard::cmd_gen_trees(cfg);
  orchard::cmd_gen_panels(cfg);
  if (with_scan) orchard::cmd_scan(cfg);
}

}  // namespace fixture
