#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "orchardsim/geometry.hpp"

namespace orchard {

enum class OrganKind : std::uint8_t { Trunk = 0, Branch = 1 };

/// Generalized cylinder: centerline samples with a radius per sample.
struct OrganCurve {
  std::vector<Vec3> centerline;
  std::vector<double> radii;
  OrganKind kind = OrganKind::Branch;

  std::size_t size() const { return centerline.size(); }
  bool operator==(const OrganCurve&) const = default;
};

/// Throws InvalidArgument with `where` prefixed when the curve has fewer than
/// two samples, mismatched radii, non-positive radii, repeated consecutive
/// points or zero arc length.
void validate(const OrganCurve& curve, const std::string& where = "organ");

double arc_length(const OrganCurve& curve);

/// Cumulative arc length at each sample (first entry 0).
std::vector<double> cumulative_arc_length(const OrganCurve& curve);

/// True if radii never increase from base to tip.
bool is_tapered(const OrganCurve& curve);

/// Base branch in its local frame: origin at the attachment point, growing
/// roughly along +x.
struct BaseBranch {
  OrganCurve curve;
  double attach_height = 0.0;  // meters above trunk base
  double azimuth = 0.0;        // radians, [0, 2pi)
  bool operator==(const BaseBranch&) const = default;
};

struct BaseTreeLibrary {
  std::vector<OrganCurve> trunks;
  std::vector<BaseBranch> branches;
  std::string provenance;
  bool operator==(const BaseTreeLibrary&) const = default;
};

constexpr int kLibraryVersion = 1;

void validate(const BaseTreeLibrary& lib);

std::string encode_library(const BaseTreeLibrary& lib);
BaseTreeLibrary decode_library(const std::string& text);
void save_library(const BaseTreeLibrary& lib, const std::filesystem::path& path);
BaseTreeLibrary load_library(const std::filesystem::path& path);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

/// Ranges used by synth_library. Defaults follow trellis-trained apple
/// dimensions; they are configuration, not constants.
struct SynthParams {
  Range trunk_height{2.5, 3.5};
  Range trunk_base_radius{0.03, 0.05};
  Range trunk_tip_fraction{0.2, 0.35};  // tip radius / base radius
  double trunk_lean_sigma = 0.02;       // lateral wander per unit height
  int trunk_samples = 24;

  Range branch_length{0.3, 1.2};
  Range branch_base_radius{0.005, 0.015};
  Range branch_tip_fraction{0.15, 0.35};
  Range branch_attach_height{0.5, 3.0};
  Range branch_elevation_deg{-5.0, 25.0};  // initial pitch above horizontal
  Range branch_droop{0.2, 0.8};            // total downward turn, radians
  int branch_samples = 16;

  bool operator==(const SynthParams&) const = default;
};

/// Synthetic stand-in for a library measured from real trees.
/// Throws InvalidArgument on degenerate ranges or counts.
BaseTreeLibrary synth_library(std::uint64_t seed, int n_trunks, int n_branches,
                              const SynthParams& params = {});

}  // namespace orchard
