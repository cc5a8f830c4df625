#include "orchardsim/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>
#include <tuple>

#include "json.hpp"
#include "orchardsim/error.hpp"
#include "orchardsim/io.hpp"
#include "orchardsim/parallel.hpp"
#include "orchardsim/rng.hpp"
#include "orchardsim/voxel.hpp"

namespace orchard {

namespace fs = std::filesystem;
using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

namespace {

// RNG streams of the pipeline stages; treegen owns streams 1-3.
constexpr std::uint64_t kStreamBase = 11;
constexpr std::uint64_t kStreamPanelPlan = 12;
constexpr std::uint64_t kStreamPanelSampler = 13;
constexpr std::uint64_t kStreamPanelCloud = 14;

// ---------------------------------------------------------------------------
// Config reading

class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double def) {
    seen_.insert(key);
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(where(key) + " must be finite");
    return d;
  }

  int integer(const std::string& key, int def) {
    seen_.insert(key);
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(where(key) + " must be an integer");
    const auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(where(key) + " is out of range");
    return static_cast<int>(x);
  }

  std::optional<std::uint64_t> u64(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) return std::nullopt;
    const Json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where(key) + " must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  std::string string(const std::string& key, const std::string& def) {
    seen_.insert(key);
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::size_t n) {
    seen_.insert(key);
    const Json& v = j_.at(key);
    if (!v.is_array() || v.size() != n) {
      throw ConfigError(where(key) + " must be an array of " + std::to_string(n) + " numbers");
    }
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number() || !std::isfinite(e.get<double>())) throw ConfigError(where(key) + " must contain numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  Range range(const std::string& key, Range def) {
    seen_.insert(key);
    if (!has(key)) return def;
    const auto v = numbers(key, 2);
    if (v[0] > v[1]) throw ConfigError(where(key) + " must be [lo, hi] with lo <= hi");
    return {v[0], v[1]};
  }

  std::pair<int, int> int_range(const std::string& key, std::pair<int, int> def) {
    seen_.insert(key);
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
      throw ConfigError(where(key) + " must be [lo, hi] integers");
    }
    const int lo = v[0].get<int>(), hi = v[1].get<int>();
    if (lo > hi) throw ConfigError(where(key) + " must be [lo, hi] with lo <= hi");
    return {lo, hi};
  }

  Vec3 vec3(const std::string& key, Vec3 def) {
    seen_.insert(key);
    if (!has(key)) return def;
    const auto v = numbers(key, 3);
    return {v[0], v[1], v[2]};
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const Json kEmpty = Json::object();
    return Section(has(key) ? j_.at(key) : kEmpty, where(key));
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

void read_synth(Section s, SynthParams& p) {
  p.trunk_height = s.range("trunk_height_m", p.trunk_height);
  p.trunk_base_radius = s.range("trunk_base_radius_m", p.trunk_base_radius);
  p.trunk_tip_fraction = s.range("trunk_tip_fraction", p.trunk_tip_fraction);
  p.trunk_lean_sigma = s.number("trunk_lean_sigma", p.trunk_lean_sigma);
  p.trunk_samples = s.integer("trunk_samples", p.trunk_samples);
  p.branch_length = s.range("branch_length_m", p.branch_length);
  p.branch_base_radius = s.range("branch_base_radius_m", p.branch_base_radius);
  p.branch_tip_fraction = s.range("branch_tip_fraction", p.branch_tip_fraction);
  p.branch_attach_height = s.range("branch_attach_height_m", p.branch_attach_height);
  p.branch_elevation_deg = s.range("branch_elevation_deg", p.branch_elevation_deg);
  p.branch_droop = s.range("branch_droop_rad", p.branch_droop);
  p.branch_samples = s.integer("branch_samples", p.branch_samples);
  s.finish();
}

void read_gen(Section s, GenParams& g, int& count) {
  count = s.integer("count", count);
  g.k1 = s.integer("k1", g.k1);
  g.k2 = s.integer("k2", g.k2);
  std::tie(g.branch_count_min, g.branch_count_max) =
      s.int_range("branch_count", {g.branch_count_min, g.branch_count_max});
  const Range zone = s.range("branch_zone", {g.branch_zone_low, g.branch_zone_high});
  g.branch_zone_low = zone.lo;
  g.branch_zone_high = zone.hi;
  g.min_branch_separation = s.number("min_branch_separation_m", g.min_branch_separation);
  g.height_retries = s.integer("height_retries", g.height_retries);
  g.higher_order_prob = s.number("higher_order_prob", g.higher_order_prob);
  const Range scale = s.range("higher_order_scale", {g.higher_order_scale_min, g.higher_order_scale_max});
  g.higher_order_scale_min = scale.lo;
  g.higher_order_scale_max = scale.hi;
  g.collision_retries = s.integer("collision_retries", g.collision_retries);
  g.taper_exponent = s.number("taper_exponent", g.taper_exponent);
  s.finish();
}

ScanSpec read_scanner(Section s) {
  ScanSpec spec;
  ScannerConfig& c = spec.scanner;
  c.position = s.vec3("position", c.position);
  const Range az = s.range("az_range_deg", {c.az_min_deg, c.az_max_deg});
  c.az_min_deg = az.lo;
  c.az_max_deg = az.hi;
  const Range el = s.range("el_range_deg", {c.el_min_deg, c.el_max_deg});
  c.el_min_deg = el.lo;
  c.el_max_deg = el.hi;
  c.resolution_deg = s.number("resolution_deg", c.resolution_deg);
  c.max_range_m = s.number("max_range_m", c.max_range_m);
  c.range_noise_sigma_m = s.number("range_noise_sigma_m", c.range_noise_sigma_m);
  c.yaw_deg = s.number("yaw_deg", c.yaw_deg);
  char def[64];
  std::snprintf(def, sizeof(def), "hlp_%g", c.resolution_deg);
  spec.name = s.string("name", def);
  s.finish();
  return spec;
}

void check_name(const std::string& name, const std::string& where) {
  if (name.empty() || name == "panels" || name.find_first_of("/\\") != std::string::npos || name[0] == '.') {
    throw ConfigError(where + ": invalid dataset name '" + name + "'");
  }
}

}  // namespace

std::uint64_t PipelineConfig::master_seed() const {
  if (!seed) throw ConfigError("seed is required (config key 'seed' or --seed)");
  return *seed;
}

std::uint64_t PipelineConfig::config_hash() const { return fnv1a64(canonical); }

PipelineConfig parse_config(const std::string& text, const fs::path& config_dir) {
  Json root;
  try {
    root = Json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  PipelineConfig cfg;
  cfg.config_dir = config_dir;
  try {
    Section s(root, "");
    cfg.seed = s.u64("seed");
    cfg.output_dir = resolve(config_dir, s.string("output_dir", "out"));
    cfg.jobs = s.integer("jobs", cfg.jobs);

    Section base = s.child("base");
    const std::string library = base.string("library", "");
    if (!library.empty()) cfg.library_path = resolve(config_dir, library);
    cfg.base_trunks = base.integer("n_trunks", cfg.base_trunks);
    cfg.base_branches = base.integer("n_branches", cfg.base_branches);
    read_synth(base.child("synth"), cfg.synth);
    base.finish();

    read_gen(s.child("trees"), cfg.gen, cfg.tree_count);

    Section panels = s.child("panels");
    cfg.panel_count = panels.integer("count", cfg.panel_count);
    std::tie(cfg.panel.n_trees_min, cfg.panel.n_trees_max) =
        panels.int_range("trees_per_panel", {cfg.panel.n_trees_min, cfg.panel.n_trees_max});
    const Range spacing = panels.range("spacing_m", {cfg.panel.spacing_min, cfg.panel.spacing_max});
    cfg.panel.spacing_min = spacing.lo;
    cfg.panel.spacing_max = spacing.hi;
    cfg.panel.row_axis = panels.vec3("row_axis", cfg.panel.row_axis);
    cfg.panel.mode = sampling_mode_from_string(panels.string("sampling", to_string(cfg.panel.mode)));
    cfg.reference_density = panels.number("reference_density", cfg.reference_density);
    const std::string enc = panels.string("encoding", "binary");
    if (enc == "binary") {
      cfg.encoding = CloudEncoding::BinaryLittleEndian;
    } else if (enc == "ascii") {
      cfg.encoding = CloudEncoding::Ascii;
    } else {
      throw ConfigError("panels.encoding must be 'binary' or 'ascii'");
    }
    panels.finish();

    Section scan = s.child("scan");
    cfg.sides_per_ring = scan.integer("sides_per_ring", cfg.sides_per_ring);
    if (scan.has("scanners")) {
      const Json& list = scan.raw("scanners");
      if (!list.is_array()) throw ConfigError("scan.scanners must be an array");
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string where = "scan.scanners[" + std::to_string(i) + "]";
        ScanSpec spec = read_scanner(Section(list[i], where));
        check_name(spec.name, where);
        for (const auto& other : cfg.scans) {
          if (other.name == spec.name) throw ConfigError(where + ": duplicate scanner name '" + spec.name + "'");
        }
        try {
          validate(spec.scanner);
        } catch (const InvalidArgument& e) {
          throw ConfigError(where + ": " + e.what());
        }
        cfg.scans.push_back(std::move(spec));
      }
    }
    scan.finish();

    Section vox = s.child("voxelize");
    if (vox.has("voxel_size")) cfg.voxel_size = vox.number("voxel_size", 0.0);
    vox.number("voxel_size", 0.0);
    if (vox.has("datasets")) {
      const Json& list = vox.raw("datasets");
      if (!list.is_array()) throw ConfigError("voxelize.datasets must be an array of names");
      for (const auto& e : list) {
        if (!e.is_string()) throw ConfigError("voxelize.datasets must be an array of names");
        cfg.voxel_datasets.push_back(e.get<std::string>());
      }
    }
    vox.finish();

    Section ev = s.child("eval");
    cfg.eval_dataset = ev.string("dataset", cfg.eval_dataset);
    cfg.eval_predictions = ev.string("predictions", cfg.eval_predictions);
    const int min_pts = ev.integer("min_instance_points", 0);
    if (min_pts < 0) throw ConfigError("eval.min_instance_points must be >= 0");
    cfg.eval_options.min_instance_points = static_cast<std::size_t>(min_pts);
    ev.finish();
    s.finish();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }

  if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (cfg.base_trunks < 1 || cfg.base_branches < 1) throw ConfigError("base.n_trunks and base.n_branches must be >= 1");
  if (cfg.tree_count < 1) throw ConfigError("trees.count must be >= 1");
  if (cfg.panel_count < 1) throw ConfigError("panels.count must be >= 1");
  if (!(cfg.reference_density > 0.0)) throw ConfigError("panels.reference_density must be > 0");
  if (cfg.sides_per_ring < 6) throw ConfigError("scan.sides_per_ring must be >= 6");
  try {
    validate(cfg.gen);
    validate(cfg.panel);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }

  root.erase("jobs");
  root.erase("output_dir");
  cfg.canonical = root.dump();
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return parse_config(text, dir);
}

void apply_overrides(PipelineConfig& cfg, const Overrides& o) {
  if (o.jobs) {
    if (*o.jobs < 1) throw ConfigError("--jobs must be >= 1");
    cfg.jobs = *o.jobs;
  }
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.seed) {
    cfg.seed = o.seed;
    Json root = Json::parse(cfg.canonical);
    root["seed"] = *o.seed;
    cfg.canonical = root.dump();
  }
}

// ---------------------------------------------------------------------------

std::string tree_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "tree_%05zu.json", index);
  return buf;
}

std::string panel_file_name(std::size_t index, const std::string& ext) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "panel_%03zu%s", index, ext.c_str());
  return buf;
}

namespace {

/// Collects files written by one command and emits its manifest.
class OutputSet {
 public:
  OutputSet(const PipelineConfig& cfg, std::string command) : cfg_(cfg), command_(std::move(command)) {}

  void put(const std::string& rel, const std::string& bytes) {
    write_file(cfg_.output_dir / rel, bytes);
    OJson e;
    e["path"] = rel;
    e["bytes"] = bytes.size();
    e["fnv1a64"] = hex64(fnv1a64(bytes));
    files_.push_back(std::move(e));
    result_.outputs.push_back(rel);
  }

  CommandResult finish(const std::string& manifest_rel, const OJson& details) {
    OJson m;
    m["command"] = command_;
    m["config_hash"] = hex64(cfg_.config_hash());
    m["seed"] = cfg_.master_seed();
    m["details"] = details;
    m["outputs"] = files_;
    const std::string text = m.dump(2) + "\n";
    write_file(cfg_.output_dir / manifest_rel, text);
    result_.manifest = manifest_rel;
    return std::move(result_);
  }

  CommandResult& result() { return result_; }

 private:
  const PipelineConfig& cfg_;
  std::string command_;
  OJson files_ = OJson::array();
  CommandResult result_;
};

OJson load_json(const fs::path& path, const std::string& needed_by) {
  if (!fs::exists(path)) throw IoError(path.string() + " not found (run " + needed_by + " first)");
  try {
    return OJson::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

template <typename T>
T field(const OJson& j, const char* key, const fs::path& path) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(path.string() + ": missing or invalid field '" + std::string(key) + "'");
  }
}

OJson range_json(double lo, double hi) { return OJson::array({lo, hi}); }

OJson vec_json(const Vec3& v) { return OJson::array({v.x, v.y, v.z}); }

struct PanelEntry {
  std::uint64_t seed = 0;
  PanelLayout layout;
  std::string cloud;
};

std::vector<PanelEntry> read_panel_manifest(const fs::path& out) {
  const fs::path path = out / "panels" / "manifest.json";
  const OJson m = load_json(path, "gen-panels");
  std::vector<PanelEntry> entries;
  try {
    for (const auto& p : m.at("details").at("panels")) {
      PanelEntry e;
      e.seed = p.at("seed").get<std::uint64_t>();
      e.cloud = p.at("cloud").get<std::string>();
      e.layout.n_trees = p.at("n_trees").get<int>();
      e.layout.spacings = p.at("spacings").get<std::vector<double>>();
      e.layout.tree_refs = p.at("tree_refs").get<std::vector<std::size_t>>();
      const auto axis = p.at("row_axis").get<std::vector<double>>();
      if (axis.size() != 3) throw ParseError("row_axis");
      e.layout.row_axis = {axis[0], axis[1], axis[2]};
      e.layout.sampling_mode = sampling_mode_from_string(p.at("sampling_mode").get<std::string>());
      entries.push_back(std::move(e));
    }
  } catch (const std::exception& e) {
    throw ParseError(path.string() + ": malformed panel entry: " + e.what());
  }
  return entries;
}

std::size_t read_tree_count(const fs::path& out) {
  const fs::path path = out / "trees" / "manifest.json";
  const OJson m = load_json(path, "gen-trees");
  try {
    return m.at("details").at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(path.string() + ": missing tree count");
  }
}

PanelSkeleton rebuild_panel(const fs::path& out, const PanelEntry& entry) {
  std::vector<TreeSkeleton> pool;
  PanelLayout local = entry.layout;
  for (std::size_t k = 0; k < local.tree_refs.size(); ++k) {
    pool.push_back(load_tree(out / "trees" / tree_file_name(local.tree_refs[k])));
    local.tree_refs[k] = k;
  }
  try {
    return build_panel(local, pool);
  } catch (const InvalidArgument& e) {
    throw ParseError("panel manifest: " + std::string(e.what()));
  }
}

fs::path dataset_dir(const std::string& name) { return name == "panels" ? fs::path("panels") : fs::path("scans") / name; }

std::vector<std::string> known_datasets(const PipelineConfig& cfg) {
  std::vector<std::string> out{"panels"};
  for (const auto& s : cfg.scans) out.push_back(s.name);
  return out;
}

void check_dataset(const PipelineConfig& cfg, const std::string& name, const std::string& key) {
  const auto all = known_datasets(cfg);
  if (std::find(all.begin(), all.end(), name) == all.end()) {
    throw ConfigError(key + ": unknown dataset '" + name + "'");
  }
}

std::uint64_t noise_seed_for(const PipelineConfig& cfg, std::size_t panel, const std::string& scan_name) {
  return derive_seed(cfg.master_seed(), panel, fnv1a64(scan_name));
}

}  // namespace

ScannerConfig scanner_for_panel(const ScanSpec& spec, const PanelSkeleton& panel, std::uint64_t noise_seed) {
  ScannerConfig c = spec.scanner;
  Vec3 center{};
  if (!panel.positions.empty()) center = (panel.positions.front() + panel.positions.back()) * 0.5;
  c.position = center + spec.scanner.position;
  c.noise_seed = noise_seed;
  return c;
}

PanelSkeleton load_panel(const fs::path& output_dir, std::size_t index) {
  const auto entries = read_panel_manifest(output_dir);
  if (index >= entries.size()) throw InvalidArgument("panel index out of range");
  return rebuild_panel(output_dir, entries[index]);
}

// ---------------------------------------------------------------------------

CommandResult cmd_gen_base(const PipelineConfig& cfg) {
  const std::uint64_t seed = cfg.master_seed();
  BaseTreeLibrary lib;
  OJson details;
  if (cfg.library_path) {
    lib = load_library(*cfg.library_path);
    details["source"] = "file";
  } else {
    try {
      lib = synth_library(derive_seed(seed, 0, kStreamBase), cfg.base_trunks, cfg.base_branches, cfg.synth);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("base.synth: ") + e.what());
    }
    details["source"] = "synthetic";
  }
  details["trunks"] = lib.trunks.size();
  details["branches"] = lib.branches.size();
  OutputSet out(cfg, "gen-base");
  out.put("base/library.json", encode_library(lib));
  CommandResult r = out.finish("base/manifest.json", details);
  r.summary = "base library: " + std::to_string(lib.trunks.size()) + " trunks, " +
              std::to_string(lib.branches.size()) + " branches\n";
  return r;
}

CommandResult cmd_gen_trees(const PipelineConfig& cfg) {
  const std::uint64_t seed = cfg.master_seed();
  const fs::path lib_path = cfg.output_dir / "base" / "library.json";
  if (!fs::exists(lib_path)) throw IoError(lib_path.string() + " not found (run gen-base first)");
  const BaseTreeLibrary lib = load_library(lib_path);
  const auto trees = generate_trees(lib, cfg.gen, seed, static_cast<std::size_t>(cfg.tree_count), cfg.jobs);

  std::vector<std::string> encoded(trees.size());
  parallel_for(trees.size(), cfg.jobs, [&](std::size_t i) { encoded[i] = encode_tree(trees[i]); });

  OutputSet out(cfg, "gen-trees");
  OJson list = OJson::array();
  std::size_t branches = 0, dropped = 0;
  for (std::size_t i = 0; i < trees.size(); ++i) {
    out.put("trees/" + tree_file_name(i), encoded[i]);
    OJson e;
    e["index"] = i;
    e["seed"] = trees[i].seed;
    e["branches"] = trees[i].branches.size();
    e["dropped_branches"] = trees[i].dropped_branches;
    list.push_back(std::move(e));
    branches += trees[i].branches.size();
    dropped += static_cast<std::size_t>(trees[i].dropped_branches);
  }
  OJson details;
  details["count"] = trees.size();
  details["trees"] = std::move(list);
  CommandResult r = out.finish("trees/manifest.json", details);
  r.summary = "trees: " + std::to_string(trees.size()) + " generated, " + std::to_string(branches) + " branches, " +
              std::to_string(dropped) + " dropped by collision\n";
  return r;
}

CommandResult cmd_gen_panels(const PipelineConfig& cfg) {
  const std::uint64_t seed = cfg.master_seed();
  const std::size_t n_trees = read_tree_count(cfg.output_dir);
  std::vector<TreeSkeleton> pool(n_trees);
  parallel_for(n_trees, cfg.jobs,
               [&](std::size_t i) { pool[i] = load_tree(cfg.output_dir / "trees" / tree_file_name(i)); });

  // Layouts are planned in order from one shared sampler, so the balanced
  // usage property holds across the whole dataset.
  const auto count = static_cast<std::size_t>(cfg.panel_count);
  PoolSampler sampler(pool.size(), derive_seed(seed, 0, kStreamPanelSampler));
  std::vector<PanelLayout> layouts;
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < count; ++k) {
    seeds.push_back(derive_seed(seed, k, kStreamPanelPlan));
    Rng rng(seeds.back());
    layouts.push_back(plan_panel(sampler, cfg.panel, rng));
  }

  std::vector<std::string> clouds(count);
  std::vector<std::size_t> points(count);
  parallel_for(count, cfg.jobs, [&](std::size_t k) {
    const PanelSkeleton panel = build_panel(layouts[k], pool);
    const LabeledPointCloud cloud =
        panel_to_cloud(panel, cfg.reference_density, derive_seed(seed, k, kStreamPanelCloud));
    points[k] = cloud.size();
    clouds[k] = encode_cloud(cloud, cfg.encoding);
  });

  OutputSet out(cfg, "gen-panels");
  OJson list = OJson::array();
  std::vector<std::size_t> usage(pool.size(), 0);
  for (std::size_t k = 0; k < count; ++k) {
    const std::string rel = "panels/" + panel_file_name(k, ".ply");
    out.put(rel, clouds[k]);
    OJson e;
    e["index"] = k;
    e["seed"] = seeds[k];
    e["sampling_mode"] = to_string(layouts[k].sampling_mode);
    e["n_trees"] = layouts[k].n_trees;
    e["tree_refs"] = layouts[k].tree_refs;
    OJson tseeds = OJson::array();
    for (std::size_t ref : layouts[k].tree_refs) {
      tseeds.push_back(pool[ref].seed);
      ++usage[ref];
    }
    e["tree_seeds"] = std::move(tseeds);
    e["spacings"] = layouts[k].spacings;
    e["row_axis"] = vec_json(layouts[k].row_axis);
    e["cloud"] = panel_file_name(k, ".ply");
    e["points"] = points[k];
    list.push_back(std::move(e));
  }
  OJson details;
  details["count"] = count;
  details["pool_size"] = pool.size();
  details["sampling_mode"] = to_string(cfg.panel.mode);
  details["reference_density"] = cfg.reference_density;
  details["usage_min"] = *std::min_element(usage.begin(), usage.end());
  details["usage_max"] = *std::max_element(usage.begin(), usage.end());
  details["panels"] = std::move(list);
  CommandResult r = out.finish("panels/manifest.json", details);
  r.summary = "panels: " + std::to_string(count) + " written (" + to_string(cfg.panel.mode) + " over " +
              std::to_string(pool.size()) + " trees)\n";
  return r;
}

CommandResult cmd_scan(const PipelineConfig& cfg) {
  cfg.master_seed();
  if (cfg.scans.empty()) throw ConfigError("scan.scanners is empty");
  const auto entries = read_panel_manifest(cfg.output_dir);

  struct Row {
    std::int64_t rays = 0;
    std::size_t hits = 0;
    std::size_t triangles = 0;
  };
  std::vector<std::vector<Row>> rows(cfg.scans.size(), std::vector<Row>(entries.size()));
  std::vector<std::vector<std::string>> clouds(cfg.scans.size(), std::vector<std::string>(entries.size()));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const PanelSkeleton panel = rebuild_panel(cfg.output_dir, entries[k]);
    const TriangleMeshScene scene = tessellate(panel, cfg.sides_per_ring);
    for (std::size_t s = 0; s < cfg.scans.size(); ++s) {
      const ScanSpec& spec = cfg.scans[s];
      const ScannerConfig sc = scanner_for_panel(spec, panel, noise_seed_for(cfg, k, spec.name));
      const ScanResult res = scan_hits(scene, sc, cfg.jobs);
      char gen[96];
      std::snprintf(gen, sizeof(gen), "orchardsim vls %s resolution_deg=%g", spec.name.c_str(), sc.resolution_deg);
      clouds[s][k] = encode_cloud(hits_to_cloud(scene, res, sc.noise_seed, gen), cfg.encoding);
      rows[s][k] = {res.ray_count, res.hits.size(), scene.triangles.size()};
    }
  }

  OutputSet out(cfg, "scan");
  std::string summary;
  OJson datasets = OJson::array();
  for (std::size_t s = 0; s < cfg.scans.size(); ++s) {
    const ScanSpec& spec = cfg.scans[s];
    OJson list = OJson::array();
    std::int64_t rays = 0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const std::string rel = "scans/" + spec.name + "/" + panel_file_name(k, ".ply");
      out.put(rel, clouds[s][k]);
      OJson e;
      e["index"] = k;
      e["cloud"] = panel_file_name(k, ".ply");
      e["rays"] = rows[s][k].rays;
      e["hits"] = rows[s][k].hits;
      e["triangles"] = rows[s][k].triangles;
      e["noise_seed"] = noise_seed_for(cfg, k, spec.name);
      list.push_back(std::move(e));
      rays += rows[s][k].rays;
      hits += rows[s][k].hits;
    }
    OJson d;
    d["name"] = spec.name;
    d["position_offset"] = vec_json(spec.scanner.position);
    d["az_range_deg"] = range_json(spec.scanner.az_min_deg, spec.scanner.az_max_deg);
    d["el_range_deg"] = range_json(spec.scanner.el_min_deg, spec.scanner.el_max_deg);
    d["resolution_deg"] = spec.scanner.resolution_deg;
    d["max_range_m"] = spec.scanner.max_range_m;
    d["range_noise_sigma_m"] = spec.scanner.range_noise_sigma_m;
    d["yaw_deg"] = spec.scanner.yaw_deg;
    d["panels"] = std::move(list);
    datasets.push_back(std::move(d));
    char line[160];
    std::snprintf(line, sizeof(line), "%s: %zu panels, %lld rays, %zu hits (%.3f%%)\n", spec.name.c_str(),
                  entries.size(), static_cast<long long>(rays), hits,
                  rays > 0 ? 100.0 * static_cast<double>(hits) / static_cast<double>(rays) : 0.0);
    summary += line;
  }
  OJson details;
  details["sides_per_ring"] = cfg.sides_per_ring;
  details["datasets"] = std::move(datasets);
  CommandResult r = out.finish("scans/manifest.json", details);
  r.summary = summary;
  return r;
}

std::string encode_voxel_grid(const VoxelGrid& grid) {
  std::vector<std::uint32_t> counts(grid.voxels.size(), 0);
  for (std::uint32_t s : grid.point_slot) ++counts[s];
  char size[64];
  std::snprintf(size, sizeof(size), "%.17g", grid.voxel_size);
  std::string out = "ply\nformat binary_little_endian 1.0\ncomment voxel_size=" + std::string(size) +
                    "\nelement voxel " + std::to_string(grid.voxels.size()) +
                    "\nproperty int ix\nproperty int iy\nproperty int iz\nproperty uint count\nelement point " +
                    std::to_string(grid.point_slot.size()) + "\nproperty uint voxel\nend_header\n";
  auto put = [&](auto v) {
    char b[sizeof(v)];
    std::memcpy(b, &v, sizeof(v));
    out.append(b, sizeof(v));
  };
  for (std::size_t i = 0; i < grid.voxels.size(); ++i) {
    put(grid.voxels[i][0]);
    put(grid.voxels[i][1]);
    put(grid.voxels[i][2]);
    put(counts[i]);
  }
  for (std::uint32_t s : grid.point_slot) put(s);
  return out;
}

CommandResult cmd_voxelize(const PipelineConfig& cfg) {
  cfg.master_seed();
  if (!cfg.voxel_size) throw ConfigError("voxelize.voxel_size is required");
  if (!(*cfg.voxel_size > 0.0)) throw ConfigError("voxelize.voxel_size must be > 0");
  std::vector<std::string> names = cfg.voxel_datasets.empty() ? known_datasets(cfg) : cfg.voxel_datasets;
  for (const auto& n : names) check_dataset(cfg, n, "voxelize.datasets");
  const auto entries = read_panel_manifest(cfg.output_dir);

  OutputSet out(cfg, "voxelize");
  OJson datasets = OJson::array();
  std::string summary;
  for (const auto& name : names) {
    const fs::path dir = dataset_dir(name);
    if (!fs::exists(cfg.output_dir / dir)) throw IoError((cfg.output_dir / dir).string() + " not found");
    std::vector<std::string> encoded(entries.size());
    std::vector<std::size_t> ki(entries.size()), kv(entries.size());
    parallel_for(entries.size(), cfg.jobs, [&](std::size_t k) {
      const LabeledPointCloud cloud = read_cloud(cfg.output_dir / dir / panel_file_name(k, ".ply"));
      const VoxelGrid grid = voxelize(cloud, *cfg.voxel_size);
      ki[k] = grid.point_count();
      kv[k] = grid.occupied_count();
      encoded[k] = encode_voxel_grid(grid);
    });
    OJson list = OJson::array();
    std::size_t ti = 0, tv = 0;
    for (std::size_t k = 0; k < entries.size(); ++k) {
      out.put("voxels/" + name + "/" + panel_file_name(k, ".vox.ply"), encoded[k]);
      OJson e;
      e["index"] = k;
      e["points"] = ki[k];
      e["voxels"] = kv[k];
      list.push_back(std::move(e));
      ti += ki[k];
      tv += kv[k];
    }
    OJson d;
    d["name"] = name;
    d["panels"] = std::move(list);
    datasets.push_back(std::move(d));
    char line[160];
    std::snprintf(line, sizeof(line), "%s: K_i=%zu K_v=%zu ratio=%.4f\n", name.c_str(), ti, tv,
                  ti > 0 ? static_cast<double>(tv) / static_cast<double>(ti) : 0.0);
    summary += line;
  }
  OJson details;
  details["voxel_size"] = *cfg.voxel_size;
  details["datasets"] = std::move(datasets);
  CommandResult r = out.finish("voxels/manifest.json", details);
  r.summary = summary;
  return r;
}

CommandResult cmd_eval(const PipelineConfig& cfg) {
  cfg.master_seed();
  check_dataset(cfg, cfg.eval_dataset, "eval.dataset");
  const auto entries = read_panel_manifest(cfg.output_dir);
  const fs::path dir = cfg.output_dir / dataset_dir(cfg.eval_dataset);
  const bool oracle = cfg.eval_predictions == "ground_truth";
  const fs::path pred_dir = oracle ? fs::path() : resolve(cfg.config_dir, cfg.eval_predictions);

  std::vector<EvalSummary> results(entries.size());
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t k) {
    const LabeledPointCloud gt = read_cloud(dir / panel_file_name(k, ".ply"));
    const PredictionSet pred =
        oracle ? prediction_from_ground_truth(gt) : read_prediction(pred_dir / panel_file_name(k, ".pred"));
    try {
      results[k] = evaluate_panel(gt, pred, cfg.eval_options);
    } catch (const EvalMismatchError& e) {
      throw EvalMismatchError(panel_file_name(k, "") + ": " + e.what());
    }
  });

  OutputSet out(cfg, "eval");
  const std::string base = "eval/" + cfg.eval_dataset + "/";
  for (std::size_t k = 0; k < entries.size(); ++k) {
    out.put(base + panel_file_name(k, ".txt"), format_report(report_fields(results[k])));
  }
  const std::string agg = format_report(aggregate_fields(results));
  out.put(base + "aggregate.txt", agg);
  OJson details;
  details["dataset"] = cfg.eval_dataset;
  details["predictions"] = cfg.eval_predictions;
  details["min_instance_points"] = cfg.eval_options.min_instance_points;
  details["panels"] = entries.size();
  CommandResult r = out.finish(base + "manifest.json", details);
  r.summary = agg;
  return r;
}

CommandResult cmd_stats(const PipelineConfig& cfg) {
  cfg.master_seed();
  const auto entries = read_panel_manifest(cfg.output_dir);
  std::string text;
  char line[256];
  OJson datasets = OJson::array();
  std::snprintf(line, sizeof(line), "%-14s %8s %10s %9s %9s %7s %9s %10s\n", "dataset", "panels", "points", "trunk%",
                "branch%", "trees", "branches", "pts/panel");
  text += line;
  struct HitRow {
    std::string name;
    double resolution;
    std::int64_t rays;
    std::size_t hits;
  };
  std::vector<HitRow> hit_rows;
  for (const auto& name : known_datasets(cfg)) {
    const fs::path dir = cfg.output_dir / dataset_dir(name);
    if (!fs::exists(dir)) continue;
    std::vector<std::array<std::size_t, 4>> per(entries.size());
    parallel_for(entries.size(), cfg.jobs, [&](std::size_t k) {
      const LabeledPointCloud c = read_cloud(dir / panel_file_name(k, ".ply"));
      std::size_t trunk = 0;
      std::set<std::int32_t> trees;
      std::set<std::pair<std::int32_t, std::int32_t>> branches;
      for (const auto& p : c.points) {
        trees.insert(p.tree_id);
        if (p.semantic == Semantic::Trunk) {
          ++trunk;
        } else if (p.branch_id > 0) {
          branches.insert({p.tree_id, p.branch_id});
        }
      }
      per[k] = {c.size(), trunk, trees.size(), branches.size()};
    });
    std::size_t pts = 0, trunk = 0, trees = 0, branches = 0;
    for (const auto& p : per) {
      pts += p[0];
      trunk += p[1];
      trees += p[2];
      branches += p[3];
    }
    const double tf = pts ? 100.0 * static_cast<double>(trunk) / static_cast<double>(pts) : 0.0;
    std::snprintf(line, sizeof(line), "%-14s %8zu %10zu %9.3f %9.3f %7zu %9zu %10.1f\n", name.c_str(), entries.size(),
                  pts, tf, pts ? 100.0 - tf : 0.0, trees, branches,
                  entries.empty() ? 0.0 : static_cast<double>(pts) / static_cast<double>(entries.size()));
    text += line;
    OJson d;
    d["name"] = name;
    d["points"] = pts;
    d["trunk_points"] = trunk;
    d["tree_instances"] = trees;
    d["branch_instances"] = branches;
    datasets.push_back(std::move(d));
  }

  const fs::path scan_manifest = cfg.output_dir / "scans" / "manifest.json";
  if (fs::exists(scan_manifest)) {
    const OJson m = load_json(scan_manifest, "scan");
    try {
      for (const auto& d : m.at("details").at("datasets")) {
        HitRow row{d.at("name").get<std::string>(), d.at("resolution_deg").get<double>(), 0, 0};
        for (const auto& p : d.at("panels")) {
          row.rays += p.at("rays").get<std::int64_t>();
          row.hits += p.at("hits").get<std::size_t>();
        }
        hit_rows.push_back(row);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(scan_manifest.string() + ": " + e.what());
    }
    std::sort(hit_rows.begin(), hit_rows.end(),
              [](const HitRow& a, const HitRow& b) { return a.resolution > b.resolution; });
    text += "\nhit rate by resolution\n";
    std::snprintf(line, sizeof(line), "%-14s %12s %14s %12s %10s\n", "dataset", "resolution", "rays", "hits", "hit%");
    text += line;
    for (const auto& r : hit_rows) {
      std::snprintf(line, sizeof(line), "%-14s %12.4f %14lld %12zu %10.4f\n", r.name.c_str(), r.resolution,
                    static_cast<long long>(r.rays), r.hits,
                    r.rays > 0 ? 100.0 * static_cast<double>(r.hits) / static_cast<double>(r.rays) : 0.0);
      text += line;
    }
  }

  OutputSet out(cfg, "stats");
  out.put("stats/stats.txt", text);
  OJson details;
  details["datasets"] = std::move(datasets);
  CommandResult r = out.finish("stats/manifest.json", details);
  r.summary = text;
  return r;
}

}  // namespace orchard
