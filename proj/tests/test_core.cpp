#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "orchardsim/cloud.hpp"
#include "orchardsim/error.hpp"
#include "orchardsim/io.hpp"
#include "orchardsim/parallel.hpp"
#include "orchardsim/rng.hpp"
#include "orchardsim/voxel.hpp"

using namespace orchard;

namespace {

LabeledPointCloud random_cloud(std::size_t n, std::uint64_t seed, float extent = 1.0f) {
  Rng rng(seed);
  LabeledPointCloud c;
  c.seed = seed;
  c.generator = "test random cloud";
  for (std::size_t i = 0; i < n; ++i) {
    LabeledPoint p;
    p.position = {static_cast<float>(rng.uniform(-extent, extent)), static_cast<float>(rng.uniform(-extent, extent)),
                  static_cast<float>(rng.uniform(0.0, extent))};
    p.tree_id = static_cast<std::int32_t>(rng.uniform_int(1, 10));
    if (rng.bernoulli(0.4)) {
      p.semantic = Semantic::Branch;
      p.branch_id = static_cast<std::int32_t>(rng.uniform_int(1, 100));
    }
    c.points.push_back(p);
  }
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "orchardsim_test_core";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Rng, DeriveSeedSeparatesStreamsAndIndices) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t stream = 0; stream < 4; ++stream) {
    for (std::uint64_t i = 0; i < 256; ++i) seen.insert(derive_seed(42, i, stream));
  }
  EXPECT_EQ(seen.size(), 4u * 256u);
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
}

TEST(Rng, UniformIntStaysInRangeAndCoversIt) {
  Rng rng(5);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = rng.uniform_int(-3, 3);
    ASSERT_GE(v, -3);
    ASSERT_LE(v, 3);
    ++hist[static_cast<std::size_t>(v + 3)];
  }
  for (int h : hist) EXPECT_GT(h, 800);
}

TEST(Rng, NormalHasUnitMoments) {
  Rng rng(9);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Parallel, ResultsIndependentOfJobCount) {
  auto run = [](int jobs) {
    std::vector<std::uint64_t> out(1000);
    parallel_for(out.size(), jobs, [&](std::size_t i) { out[i] = Rng(derive_seed(7, i)).next_u64(); });
    return out;
  };
  EXPECT_EQ(run(1), run(4));
  EXPECT_EQ(run(1), run(13));
}

TEST(Parallel, RethrowsLowestFailingIndex) {
  try {
    parallel_for(100, 4, [](std::size_t i) {
      if (i == 17 || i == 60) throw std::runtime_error("unit " + std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "unit 17");
  }
}

// ---------------------------------------------------------------------------

TEST(CloudValidate, TrunkIffBranchIdZero) {
  LabeledPoint p;
  p.semantic = Semantic::Trunk;
  p.branch_id = 3;
  EXPECT_THROW(validate(p, 0), InvalidArgument);
  p.semantic = Semantic::Branch;
  p.branch_id = 0;
  EXPECT_THROW(validate(p, 0), InvalidArgument);
  p.branch_id = 1;
  EXPECT_NO_THROW(validate(p, 0));
  p.tree_id = 0;
  EXPECT_THROW(validate(p, 0), InvalidArgument);
  p.tree_id = 1;
  p.position.x = std::nanf("");
  EXPECT_THROW(validate(p, 0), InvalidArgument);
}

TEST(CloudIo, BinaryRoundTripIsBitExact) {
  const auto c = random_cloud(5000, 11);
  const std::string bytes = encode_cloud(c, CloudEncoding::BinaryLittleEndian);
  const auto back = decode_cloud(bytes);
  ASSERT_EQ(back.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    ASSERT_EQ(std::memcmp(&back.points[i].position, &c.points[i].position, sizeof(Point3f)), 0);
  }
  EXPECT_EQ(back, c);
  EXPECT_EQ(encode_cloud(back, CloudEncoding::BinaryLittleEndian), bytes);
}

TEST(CloudIo, AsciiRoundTripIsValueExact) {
  auto c = random_cloud(2000, 12, 50.0f);
  c.points[0].position = {1e-30f, -3.4e38f, 0.1f};
  const auto back = decode_cloud(encode_cloud(c, CloudEncoding::Ascii));
  EXPECT_EQ(back, c);
}

TEST(CloudIo, FileRoundTripBothEncodings) {
  const auto c = random_cloud(300, 13);
  for (auto enc : {CloudEncoding::Ascii, CloudEncoding::BinaryLittleEndian}) {
    const auto path = temp_path(enc == CloudEncoding::Ascii ? "a.ply" : "b.ply");
    write_cloud(c, path, enc);
    EXPECT_EQ(read_cloud(path), c);
  }
}

TEST(CloudIo, BinarySizeIsHeaderPlus21BytesPerPoint) {
  const auto c = random_cloud(1000, 14);
  const std::string bytes = encode_cloud(c, CloudEncoding::BinaryLittleEndian);
  const std::size_t header = bytes.find("end_header\n") + std::strlen("end_header\n");
  EXPECT_EQ(bytes.size() - header, 1000u * 21u);
  EXPECT_EQ(kBinaryRecordSize, 3u * 4u + 1u + 4u + 4u);
}

TEST(CloudIo, HeaderCarriesSeedAndGenerator) {
  LabeledPointCloud c = random_cloud(3, 15);
  c.seed = 18446744073709551615ULL;
  c.generator = "unit test generator";
  const std::string bytes = encode_cloud(c, CloudEncoding::Ascii);
  EXPECT_NE(bytes.find("comment seed=18446744073709551615\n"), std::string::npos);
  EXPECT_NE(bytes.find("comment generator=unit test generator\n"), std::string::npos);
  EXPECT_EQ(decode_cloud(bytes).seed, c.seed);
}

TEST(CloudIo, UnknownSemanticNamesRecordBinary) {
  const auto c = random_cloud(10, 16);
  std::string bytes = encode_cloud(c, CloudEncoding::BinaryLittleEndian);
  const std::size_t header = bytes.find("end_header\n") + std::strlen("end_header\n");
  bytes[header + 4 * 21 + 12] = 7;
  try {
    decode_cloud(bytes);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("record 4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("semantic"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset " + std::to_string(header + 4 * 21)), std::string::npos) << msg;
  }
}

TEST(CloudIo, UnknownSemanticNamesRecordAscii) {
  const std::string text =
      "ply\nformat ascii 1.0\ncomment seed=1\ncomment generator=x\nelement vertex 2\nproperty float x\n"
      "property float y\nproperty float z\nproperty uchar semantic\nproperty int tree_id\nproperty int branch_id\n"
      "end_header\n0 0 0 0 1 0\n0 0 0 7 1 0\n";
  try {
    decode_cloud(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos) << e.what();
  }
}

TEST(CloudIo, TruncatedAndMalformedInputsAreParseErrors) {
  const auto c = random_cloud(10, 17);
  const std::string bytes = encode_cloud(c, CloudEncoding::BinaryLittleEndian);
  EXPECT_THROW(decode_cloud(bytes.substr(0, bytes.size() - 5)), ParseError);
  EXPECT_THROW(decode_cloud(bytes + "xx"), ParseError);
  EXPECT_THROW(decode_cloud("plx\n"), ParseError);
  EXPECT_THROW(decode_cloud(""), ParseError);
  std::string wrong_prop = bytes;
  wrong_prop.replace(wrong_prop.find("property int tree_id"), 20, "property int tree_ix");
  EXPECT_THROW(decode_cloud(wrong_prop), ParseError);
}

TEST(CloudIo, LabelInvariantCheckedOnParse) {
  LabeledPointCloud c = random_cloud(5, 18);
  std::string bytes = encode_cloud(c, CloudEncoding::BinaryLittleEndian);
  const std::size_t header = bytes.find("end_header\n") + std::strlen("end_header\n");
  const std::int32_t zero = 0;
  std::memcpy(&bytes[header + 2 * 21 + 13], &zero, 4);  // tree_id = 0
  EXPECT_THROW(decode_cloud(bytes), ParseError);
}

TEST(CloudIo, MissingFileIsIoError) {
  EXPECT_THROW(read_cloud(temp_path("does_not_exist.ply")), IoError);
}

// ---------------------------------------------------------------------------

namespace {

// Independent oracle: std::floor in double, collected in a std::set.
std::set<VoxelIndex> oracle_voxels(const LabeledPointCloud& c, double size) {
  std::set<VoxelIndex> s;
  for (const auto& p : c.points) {
    s.insert({static_cast<std::int32_t>(std::floor(static_cast<double>(p.position.x) / size)),
              static_cast<std::int32_t>(std::floor(static_cast<double>(p.position.y) / size)),
              static_cast<std::int32_t>(std::floor(static_cast<double>(p.position.z) / size))});
  }
  return s;
}

LabeledPointCloud cloud_of(const std::vector<Point3f>& pts) {
  LabeledPointCloud c;
  for (const auto& p : pts) c.points.push_back({p, Semantic::Trunk, 1, 0});
  return c;
}

}  // namespace

TEST(Voxelize, FourPointsShareOneVoxel) {
  const auto c = cloud_of({{0.001f, 0.002f, 0.003f}, {0.009f, 0.0f, 0.0f}, {0.0f, 0.0099f, 0.005f}, {0.005f, 0.005f, 0.005f}});
  const VoxelGrid g = voxelize(c, 0.02);
  EXPECT_EQ(g.occupied_count(), 1u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.voxel_of_point(i), (VoxelIndex{0, 0, 0}));
}

TEST(Voxelize, TwoPointsTwoVoxels) {
  const VoxelGrid g = voxelize(cloud_of({{0.0f, 0.0f, 0.0f}, {0.03f, 0.0f, 0.0f}}), 0.02);
  EXPECT_EQ(g.occupied_count(), 2u);
  EXPECT_EQ(g.voxel_of_point(0), (VoxelIndex{0, 0, 0}));
  EXPECT_EQ(g.voxel_of_point(1), (VoxelIndex{1, 0, 0}));
}

TEST(Voxelize, BoundaryGoesToHigherIndexAndNegativesFloor) {
  const VoxelGrid g = voxelize(cloud_of({{0.5f, -0.5f, -0.25f}, {-0.0001f, 0.0f, 1.0f}}), 0.25);
  EXPECT_EQ(g.voxel_of_point(0), (VoxelIndex{2, -2, -1}));
  EXPECT_EQ(g.voxel_of_point(1), (VoxelIndex{-1, 0, 4}));
}

TEST(Voxelize, MatchesHashSetOracleOnUniformCube) {
  const auto c = random_cloud(10000, 21, 0.5f);
  const VoxelGrid g = voxelize(c, 0.05);
  const auto oracle = oracle_voxels(c, 0.05);
  EXPECT_EQ(g.occupied_count(), oracle.size());
  std::set<VoxelIndex> got(g.voxels.begin(), g.voxels.end());
  EXPECT_EQ(got, oracle);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& p = c.points[i].position;
    const VoxelIndex expect{static_cast<std::int32_t>(std::floor(static_cast<double>(p.x) / 0.05)),
                            static_cast<std::int32_t>(std::floor(static_cast<double>(p.y) / 0.05)),
                            static_cast<std::int32_t>(std::floor(static_cast<double>(p.z) / 0.05))};
    ASSERT_EQ(g.voxel_of_point(i), expect) << "point " << i;
  }
  EXPECT_LE(g.occupied_count(), g.point_count());
}

TEST(Voxelize, PermutationCovariant) {
  const auto c = random_cloud(3000, 22, 0.3f);
  std::vector<std::size_t> perm(c.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(3);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  LabeledPointCloud shuffled;
  for (std::size_t i : perm) shuffled.points.push_back(c.points[i]);
  const VoxelGrid a = voxelize(c, 0.02);
  const VoxelGrid b = voxelize(shuffled, 0.02);
  EXPECT_EQ(std::set<VoxelIndex>(a.voxels.begin(), a.voxels.end()), std::set<VoxelIndex>(b.voxels.begin(), b.voxels.end()));
  for (std::size_t k = 0; k < perm.size(); ++k) ASSERT_EQ(b.voxel_of_point(k), a.voxel_of_point(perm[k]));
}

TEST(Voxelize, Errors) {
  try {
    voxelize(LabeledPointCloud{}, 0.1);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "empty input");
  }
  const auto c = random_cloud(3, 23);
  for (double bad : {0.0, -0.1, std::nan("")}) {
    try {
      voxelize(c, bad);
      FAIL();
    } catch (const InvalidArgument& e) {
      EXPECT_STREQ(e.what(), "invalid voxel size");
    }
  }
}

TEST(Voxelize, ScalarVoxelIndexAgreesWithGrid) {
  const auto c = random_cloud(500, 24, 3.0f);
  const VoxelGrid g = voxelize(c, 0.07);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(voxel_index(c.points[i].position, 0.07), g.voxel_of_point(i));
}

TEST(Io, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
