#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "orchardsim/basetree.hpp"
#include "orchardsim/cloud.hpp"
#include "orchardsim/metrics.hpp"
#include "orchardsim/panel.hpp"
#include "orchardsim/treegen.hpp"
#include "orchardsim/vls.hpp"
#include "orchardsim/voxel.hpp"

namespace orchard {

/// One rung of the resolution ladder. `scanner.position` is relative to the
/// panel center (midpoint between the first and last trunk base).
struct ScanSpec {
  std::string name;
  ScannerConfig scanner;
};

struct PipelineConfig {
  std::optional<std::uint64_t> seed;
  std::filesystem::path config_dir;  // base for relative paths
  std::filesystem::path output_dir;  // resolved
  int jobs = 1;

  // gen-base
  std::optional<std::filesystem::path> library_path;  // resolved; synthesized when absent
  int base_trunks = 20;
  int base_branches = 200;
  SynthParams synth;

  // gen-trees
  int tree_count = 50;
  GenParams gen;

  // gen-panels
  int panel_count = 10;
  PanelParams panel;
  double reference_density = 2000.0;  // points per square meter of organ surface
  CloudEncoding encoding = CloudEncoding::BinaryLittleEndian;

  // scan
  int sides_per_ring = 12;
  std::vector<ScanSpec> scans;

  // voxelize
  std::optional<double> voxel_size;
  std::vector<std::string> voxel_datasets;  // "panels" or scan names; empty = all

  // eval
  std::string eval_dataset = "panels";
  std::string eval_predictions = "ground_truth";  // directory, or "ground_truth"
  EvalOptions eval_options;

  std::string canonical;  // normalized JSON used for the config hash

  std::uint64_t master_seed() const;
  std::uint64_t config_hash() const;
};

/// Parses JSON (comments allowed). Unknown keys and bad values raise
/// ConfigError naming the offending key.
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& config_dir);
PipelineConfig load_config(const std::filesystem::path& path);

/// Command-line overrides; each replaces the matching config key.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::filesystem::path> output_dir;  // relative to the working directory
};

void apply_overrides(PipelineConfig& cfg, const Overrides& o);

/// Outputs written by a command, relative to the output directory.
struct CommandResult {
  std::vector<std::string> outputs;
  std::string manifest;
  std::string summary;  // human-readable text printed by the front end
};

CommandResult cmd_gen_base(const PipelineConfig& cfg);
CommandResult cmd_gen_trees(const PipelineConfig& cfg);
CommandResult cmd_gen_panels(const PipelineConfig& cfg);
CommandResult cmd_scan(const PipelineConfig& cfg);
CommandResult cmd_voxelize(const PipelineConfig& cfg);
CommandResult cmd_eval(const PipelineConfig& cfg);
CommandResult cmd_stats(const PipelineConfig& cfg);

/// Places a scanner for a panel: position offset by the panel center.
ScannerConfig scanner_for_panel(const ScanSpec& spec, const PanelSkeleton& panel, std::uint64_t noise_seed);

/// Rebuilds panel `index` from the manifests and tree files in `out`.
PanelSkeleton load_panel(const std::filesystem::path& output_dir, std::size_t index);

/// Relative file names used by the pipeline.
std::string tree_file_name(std::size_t index);
std::string panel_file_name(std::size_t index, const std::string& ext);

/// Voxel grid as a PLY file with a `voxel` element (ix, iy, iz, count) and a
/// `point` element holding each input point's voxel slot.
std::string encode_voxel_grid(const VoxelGrid& grid);

}  // namespace orchard
