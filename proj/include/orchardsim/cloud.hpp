#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace orchard {

/// Stored point position (float32 meters, as written to disk).
struct Point3f {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  bool operator==(const Point3f&) const = default;
};

enum class Semantic : std::uint8_t { Trunk = 0, Branch = 1 };

constexpr int kNumSemanticClasses = 2;

struct LabeledPoint {
  Point3f position;
  Semantic semantic = Semantic::Trunk;
  std::int32_t tree_id = 1;    // >= 1
  std::int32_t branch_id = 0;  // 0 for trunk points, >= 1 for branch instances
  bool operator==(const LabeledPoint&) const = default;
};

struct LabeledPointCloud {
  std::vector<LabeledPoint> points;
  std::uint64_t seed = 0;
  std::string generator;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool operator==(const LabeledPointCloud&) const = default;
};

/// Throws InvalidArgument naming the first point that breaks a label or
/// coordinate invariant.
void validate(const LabeledPoint& p, std::size_t index);
void validate(const LabeledPointCloud& cloud);

enum class CloudEncoding { Ascii, BinaryLittleEndian };

/// PLY-compatible labeled cloud. Binary records are 21 bytes:
/// x,y,z float32 | semantic uint8 | tree_id int32 | branch_id int32.
void write_cloud(const LabeledPointCloud& cloud, const std::filesystem::path& path,
                 CloudEncoding encoding = CloudEncoding::BinaryLittleEndian);
std::string encode_cloud(const LabeledPointCloud& cloud,
                         CloudEncoding encoding = CloudEncoding::BinaryLittleEndian);

LabeledPointCloud read_cloud(const std::filesystem::path& path);
LabeledPointCloud decode_cloud(const std::string& bytes);

constexpr std::size_t kBinaryRecordSize = 21;

}  // namespace orchard
