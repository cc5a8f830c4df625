#include "orchardsim/basetree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "orchardsim/error.hpp"
#include "orchardsim/rng.hpp"

namespace orchard {

using Json = nlohmann::ordered_json;

void validate(const OrganCurve& curve, const std::string& where) {
  if (curve.centerline.size() < 2) throw InvalidArgument(where + ": centerline needs >= 2 samples");
  if (curve.radii.size() != curve.centerline.size()) {
    throw InvalidArgument(where + ": radii length " + std::to_string(curve.radii.size()) +
                          " != centerline length " + std::to_string(curve.centerline.size()));
  }
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (!is_finite(curve.centerline[i])) {
      throw InvalidArgument(where + ".centerline[" + std::to_string(i) + "]: non-finite point");
    }
    if (!(curve.radii[i] > 0.0) || !std::isfinite(curve.radii[i])) {
      throw InvalidArgument(where + ".radii[" + std::to_string(i) + "]: non-positive radius");
    }
    if (i > 0 && curve.centerline[i] == curve.centerline[i - 1]) {
      throw InvalidArgument(where + ".centerline[" + std::to_string(i) + "]: repeated point");
    }
  }
  if (!(arc_length(curve) > 0.0)) throw InvalidArgument(where + ": zero arc length");
}

double arc_length(const OrganCurve& curve) {
  double s = 0.0;
  for (std::size_t i = 1; i < curve.centerline.size(); ++i) {
    s += distance(curve.centerline[i - 1], curve.centerline[i]);
  }
  return s;
}

std::vector<double> cumulative_arc_length(const OrganCurve& curve) {
  std::vector<double> s(curve.centerline.size(), 0.0);
  for (std::size_t i = 1; i < s.size(); ++i) {
    s[i] = s[i - 1] + distance(curve.centerline[i - 1], curve.centerline[i]);
  }
  return s;
}

bool is_tapered(const OrganCurve& curve) {
  return std::is_sorted(curve.radii.rbegin(), curve.radii.rend());
}

void validate(const BaseTreeLibrary& lib) {
  for (std::size_t i = 0; i < lib.trunks.size(); ++i) {
    const std::string where = "trunks[" + std::to_string(i) + "]";
    validate(lib.trunks[i], where);
    if (lib.trunks[i].kind != OrganKind::Trunk) throw InvalidArgument(where + ": kind must be trunk");
  }
  for (std::size_t i = 0; i < lib.branches.size(); ++i) {
    const std::string where = "branches[" + std::to_string(i) + "]";
    const BaseBranch& b = lib.branches[i];
    validate(b.curve, where);
    if (b.curve.kind != OrganKind::Branch) throw InvalidArgument(where + ": kind must be branch");
    if (!(b.attach_height >= 0.0) || !std::isfinite(b.attach_height)) {
      throw InvalidArgument(where + ".attach_height: must be >= 0");
    }
    if (!(b.azimuth >= 0.0 && b.azimuth < kTwoPi)) {
      throw InvalidArgument(where + ".azimuth: must be in [0, 2pi)");
    }
    if (!(b.curve.centerline.front() == Vec3{})) {
      throw InvalidArgument(where + ".centerline[0]: local frame origin must be (0,0,0)");
    }
  }
}

namespace {

Json curve_to_json(const OrganCurve& c) {
  Json pts = Json::array();
  for (const auto& p : c.centerline) pts.push_back({p.x, p.y, p.z});
  return Json{{"centerline", std::move(pts)}, {"radii", c.radii}};
}

const Json& member(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw ParseError(where + ": missing key '" + key + "'");
  return *it;
}

double number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ParseError(where + ": expected a number");
  return j.get<double>();
}

OrganCurve curve_from_json(const Json& j, OrganKind kind, const std::string& where) {
  OrganCurve c;
  c.kind = kind;
  const Json& pts = member(j, "centerline", where);
  const Json& radii = member(j, "radii", where);
  if (!pts.is_array()) throw ParseError(where + ".centerline: expected an array");
  if (!radii.is_array()) throw ParseError(where + ".radii: expected an array");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::string w = where + ".centerline[" + std::to_string(i) + "]";
    if (!pts[i].is_array() || pts[i].size() != 3) throw ParseError(w + ": expected [x, y, z]");
    c.centerline.push_back({number(pts[i][0], w), number(pts[i][1], w), number(pts[i][2], w)});
  }
  for (std::size_t i = 0; i < radii.size(); ++i) {
    c.radii.push_back(number(radii[i], where + ".radii[" + std::to_string(i) + "]"));
  }
  return c;
}

}  // namespace

std::string encode_library(const BaseTreeLibrary& lib) {
  Json j;
  j["version"] = kLibraryVersion;
  j["provenance"] = lib.provenance;
  j["trunks"] = Json::array();
  for (const auto& t : lib.trunks) j["trunks"].push_back(curve_to_json(t));
  j["branches"] = Json::array();
  for (const auto& b : lib.branches) {
    Json e;
    e["attach_height"] = b.attach_height;
    e["azimuth"] = b.azimuth;
    const Json c = curve_to_json(b.curve);
    e["centerline"] = c["centerline"];
    e["radii"] = c["radii"];
    j["branches"].push_back(std::move(e));
  }
  return j.dump(1) + "\n";
}

BaseTreeLibrary decode_library(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("library: ") + e.what());
  }
  const Json& version = member(j, "version", "library");
  if (!version.is_number_integer() || version.get<int>() != kLibraryVersion) {
    throw ParseError("library.version: unsupported version (expected " +
                     std::to_string(kLibraryVersion) + ")");
  }
  BaseTreeLibrary lib;
  const Json& prov = member(j, "provenance", "library");
  if (!prov.is_string()) throw ParseError("library.provenance: expected a string");
  lib.provenance = prov.get<std::string>();

  const Json& trunks = member(j, "trunks", "library");
  if (!trunks.is_array()) throw ParseError("library.trunks: expected an array");
  for (std::size_t i = 0; i < trunks.size(); ++i) {
    lib.trunks.push_back(curve_from_json(trunks[i], OrganKind::Trunk, "trunks[" + std::to_string(i) + "]"));
  }
  const Json& branches = member(j, "branches", "library");
  if (!branches.is_array()) throw ParseError("library.branches: expected an array");
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const std::string where = "branches[" + std::to_string(i) + "]";
    BaseBranch b;
    b.attach_height = number(member(branches[i], "attach_height", where), where + ".attach_height");
    b.azimuth = number(member(branches[i], "azimuth", where), where + ".azimuth");
    b.curve = curve_from_json(branches[i], OrganKind::Branch, where);
    lib.branches.push_back(std::move(b));
  }
  try {
    validate(lib);
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  return lib;
}

void save_library(const BaseTreeLibrary& lib, const std::filesystem::path& path) {
  validate(lib);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << encode_library(lib);
  if (!f) throw IoError("write failed: " + path.string());
}

BaseTreeLibrary load_library(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return decode_library(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

namespace {

void check_range(const Range& r, const char* name, double min_allowed = -INFINITY) {
  if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
    throw InvalidArgument(std::string("synth params: degenerate range ") + name + " (min > max)");
  }
  if (r.lo < min_allowed) {
    throw InvalidArgument(std::string("synth params: range ") + name + " below allowed minimum");
  }
}

// Linear taper with mild multiplicative noise, forced monotone.
std::vector<double> tapered_radii(Rng& rng, int n, double base, double tip_fraction) {
  std::vector<double> r(static_cast<std::size_t>(n));
  double running = base;
  for (int i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / (n - 1);
    double v = base * (1.0 - (1.0 - tip_fraction) * s);
    if (i > 0) v *= 1.0 + 0.03 * std::clamp(rng.normal(), -2.0, 2.0);
    running = std::min(running, v);
    r[static_cast<std::size_t>(i)] = running;
  }
  return r;
}

OrganCurve synth_trunk(Rng& rng, const SynthParams& p) {
  const double height = rng.uniform(p.trunk_height.lo, p.trunk_height.hi);
  const double base_r = rng.uniform(p.trunk_base_radius.lo, p.trunk_base_radius.hi);
  const double tip_f = rng.uniform(p.trunk_tip_fraction.lo, p.trunk_tip_fraction.hi);
  const int n = p.trunk_samples;
  const double dz = height / (n - 1);

  OrganCurve c;
  c.kind = OrganKind::Trunk;
  Vec3 pos{};
  c.centerline.push_back(pos);
  for (int i = 1; i < n; ++i) {
    pos.x += rng.normal(0.0, p.trunk_lean_sigma * dz);
    pos.y += rng.normal(0.0, p.trunk_lean_sigma * dz);
    pos.z = dz * i;
    c.centerline.push_back(pos);
  }
  c.radii = tapered_radii(rng, n, base_r, tip_f);
  return c;
}

BaseBranch synth_branch(Rng& rng, const SynthParams& p) {
  const double length = rng.uniform(p.branch_length.lo, p.branch_length.hi);
  const double base_r = rng.uniform(p.branch_base_radius.lo, p.branch_base_radius.hi);
  const double tip_f = rng.uniform(p.branch_tip_fraction.lo, p.branch_tip_fraction.hi);
  const double pitch0 = deg_to_rad(rng.uniform(p.branch_elevation_deg.lo, p.branch_elevation_deg.hi));
  const double droop = rng.uniform(p.branch_droop.lo, p.branch_droop.hi);
  const int n = p.branch_samples;
  const double step = length / (n - 1);

  BaseBranch b;
  b.curve.kind = OrganKind::Branch;
  Vec3 pos{};
  double yaw = 0.0;
  b.curve.centerline.push_back(pos);
  for (int k = 0; k + 1 < n; ++k) {
    const double pitch = pitch0 - droop * static_cast<double>(k) / std::max(1, n - 2);
    yaw += rng.normal(0.0, 0.04);
    const Vec3 dir{std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch)};
    pos += dir * step;
    b.curve.centerline.push_back(pos);
  }
  b.curve.radii = tapered_radii(rng, n, base_r, tip_f);
  b.attach_height = rng.uniform(p.branch_attach_height.lo, p.branch_attach_height.hi);
  b.azimuth = rng.uniform(0.0, kTwoPi);
  return b;
}

}  // namespace

BaseTreeLibrary synth_library(std::uint64_t seed, int n_trunks, int n_branches, const SynthParams& p) {
  if (n_trunks < 1) throw InvalidArgument("synth_library: n_trunks must be >= 1");
  if (n_branches < 1) throw InvalidArgument("synth_library: n_branches must be >= 1");
  check_range(p.trunk_height, "trunk_height", 0.0);
  check_range(p.trunk_base_radius, "trunk_base_radius", 0.0);
  check_range(p.trunk_tip_fraction, "trunk_tip_fraction", 0.0);
  check_range(p.branch_length, "branch_length", 0.0);
  check_range(p.branch_base_radius, "branch_base_radius", 0.0);
  check_range(p.branch_tip_fraction, "branch_tip_fraction", 0.0);
  check_range(p.branch_attach_height, "branch_attach_height", 0.0);
  check_range(p.branch_elevation_deg, "branch_elevation_deg", -90.0);
  check_range(p.branch_droop, "branch_droop");
  if (p.trunk_height.lo <= 0.0 || p.trunk_base_radius.lo <= 0.0 || p.branch_length.lo <= 0.0 ||
      p.branch_base_radius.lo <= 0.0 || p.trunk_tip_fraction.lo <= 0.0 ||
      p.branch_tip_fraction.lo <= 0.0 || p.trunk_tip_fraction.hi > 1.0 ||
      p.branch_tip_fraction.hi > 1.0) {
    throw InvalidArgument("synth params: lengths and radii must be positive, tip fractions in (0,1]");
  }
  if (p.trunk_samples < 2 || p.branch_samples < 3) {
    throw InvalidArgument("synth params: too few samples per organ");
  }

  BaseTreeLibrary lib;
  lib.provenance = "synthetic seed=" + std::to_string(seed);
  Rng trunk_rng(derive_seed(seed, 0, 1));
  for (int i = 0; i < n_trunks; ++i) lib.trunks.push_back(synth_trunk(trunk_rng, p));
  Rng branch_rng(derive_seed(seed, 0, 2));
  for (int i = 0; i < n_branches; ++i) lib.branches.push_back(synth_branch(branch_rng, p));
  return lib;
}

}  // namespace orchard
