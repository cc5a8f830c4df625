#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string_view>

#include "orchardsim/cloud.hpp"
#include "orchardsim/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary cloud I/O assumes a little-endian host");

namespace orchard {

void validate(const LabeledPoint& p, std::size_t index) {
  const auto where = [&] { return "point " + std::to_string(index) + ": "; };
  if (!std::isfinite(p.position.x) || !std::isfinite(p.position.y) ||
      !std::isfinite(p.position.z)) {
    throw InvalidArgument(where() + "non-finite coordinate");
  }
  const auto sem = static_cast<unsigned>(p.semantic);
  if (sem > 1) throw InvalidArgument(where() + "semantic value " + std::to_string(sem) + " not in {0,1}");
  if (p.tree_id < 1) throw InvalidArgument(where() + "tree_id must be >= 1");
  if (p.branch_id < 0) throw InvalidArgument(where() + "branch_id must be >= 0");
  if ((p.semantic == Semantic::Trunk) != (p.branch_id == 0)) {
    throw InvalidArgument(where() + "trunk points must have branch_id 0 and branch points branch_id >= 1");
  }
}

void validate(const LabeledPointCloud& cloud) {
  for (std::size_t i = 0; i < cloud.points.size(); ++i) validate(cloud.points[i], i);
}

namespace {

void append_float(std::string& out, float v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

template <typename T>
void append_raw(std::string& out, const T& v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

std::string header(const LabeledPointCloud& cloud, CloudEncoding enc) {
  if (cloud.generator.find_first_of("\r\n") != std::string::npos) {
    throw InvalidArgument("generator string must be a single line");
  }
  std::string h = "ply\n";
  h += enc == CloudEncoding::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n";
  h += "comment seed=" + std::to_string(cloud.seed) + "\n";
  h += "comment generator=" + cloud.generator + "\n";
  h += "element vertex " + std::to_string(cloud.points.size()) + "\n";
  h +=
      "property float x\n"
      "property float y\n"
      "property float z\n"
      "property uchar semantic\n"
      "property int tree_id\n"
      "property int branch_id\n"
      "end_header\n";
  return h;
}

struct PropertySpec {
  const char* name;
  const char* type_a;
  const char* type_b;
};

constexpr PropertySpec kProperties[] = {
    {"x", "float", "float32"},        {"y", "float", "float32"},     {"z", "float", "float32"},
    {"semantic", "uchar", "uint8"},   {"tree_id", "int", "int32"},   {"branch_id", "int", "int32"},
};

[[noreturn]] void fail(std::size_t offset, const std::string& what) {
  throw ParseError("byte offset " + std::to_string(offset) + ": " + what);
}

[[noreturn]] void fail_record(std::size_t record, std::size_t offset, const std::string& what) {
  throw ParseError("record " + std::to_string(record) + " (byte offset " + std::to_string(offset) +
                   "): " + what);
}

void check_record(const LabeledPoint& p, unsigned raw_semantic, std::size_t record,
                  std::size_t offset) {
  if (raw_semantic > 1) {
    fail_record(record, offset, "unknown semantic value " + std::to_string(raw_semantic));
  }
  try {
    validate(p, record);
  } catch (const InvalidArgument& e) {
    fail_record(record, offset, e.what());
  }
}

}  // namespace

std::string encode_cloud(const LabeledPointCloud& cloud, CloudEncoding encoding) {
  std::string out = header(cloud, encoding);
  if (encoding == CloudEncoding::BinaryLittleEndian) {
    out.reserve(out.size() + cloud.points.size() * kBinaryRecordSize);
    for (const auto& p : cloud.points) {
      append_raw(out, p.position.x);
      append_raw(out, p.position.y);
      append_raw(out, p.position.z);
      append_raw(out, static_cast<std::uint8_t>(p.semantic));
      append_raw(out, p.tree_id);
      append_raw(out, p.branch_id);
    }
  } else {
    for (const auto& p : cloud.points) {
      append_float(out, p.position.x);
      out += ' ';
      append_float(out, p.position.y);
      out += ' ';
      append_float(out, p.position.z);
      out += ' ';
      out += std::to_string(static_cast<unsigned>(p.semantic));
      out += ' ';
      out += std::to_string(p.tree_id);
      out += ' ';
      out += std::to_string(p.branch_id);
      out += '\n';
    }
  }
  return out;
}

void write_cloud(const LabeledPointCloud& cloud, const std::filesystem::path& path,
                 CloudEncoding encoding) {
  const std::string bytes = encode_cloud(cloud, encoding);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

LabeledPointCloud decode_cloud(const std::string& bytes) {
  const std::string_view data(bytes);
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) -> std::size_t {
    const std::size_t start = pos;
    const std::size_t nl = data.find('\n', pos);
    if (nl == std::string_view::npos) fail(start, "unterminated header line");
    line = data.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = nl + 1;
    return start;
  };

  LabeledPointCloud cloud;
  std::string_view line;
  std::size_t at = next_line(line);
  if (line != "ply") fail(at, "missing 'ply' magic");

  bool have_format = false;
  bool binary = false;
  bool have_count = false;
  std::size_t count = 0;
  std::size_t prop = 0;
  for (;;) {
    at = next_line(line);
    if (line == "end_header") break;
    std::istringstream ls{std::string(line)};
    std::string word;
    ls >> word;
    if (word == "comment") {
      const std::string_view body = line.substr(std::min(line.size(), std::size_t{8}));
      if (body.starts_with("seed=")) {
        const auto v = body.substr(5);
        const auto res = std::from_chars(v.data(), v.data() + v.size(), cloud.seed);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size()) fail(at, "bad seed comment");
      } else if (body.starts_with("generator=")) {
        cloud.generator = std::string(body.substr(10));
      }
    } else if (word == "format") {
      std::string kind, version;
      ls >> kind >> version;
      if (kind == "ascii") {
        binary = false;
      } else if (kind == "binary_little_endian") {
        binary = true;
      } else {
        fail(at, "unsupported format '" + kind + "'");
      }
      if (version != "1.0") fail(at, "unsupported format version '" + version + "'");
      have_format = true;
    } else if (word == "element") {
      std::string name;
      long long n = -1;
      ls >> name >> n;
      if (name != "vertex" || have_count) fail(at, "expected a single 'element vertex <n>'");
      if (!ls || n < 0) fail(at, "bad vertex count");
      count = static_cast<std::size_t>(n);
      have_count = true;
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      if (!have_count) fail(at, "property before element");
      if (prop >= std::size(kProperties)) fail(at, "unexpected extra property '" + name + "'");
      const auto& want = kProperties[prop];
      if (name != want.name || (type != want.type_a && type != want.type_b)) {
        fail(at, "expected 'property " + std::string(want.type_a) + " " + want.name + "', got '" +
                     std::string(line) + "'");
      }
      ++prop;
    } else {
      fail(at, "unknown header keyword '" + word + "'");
    }
  }
  if (!have_format) fail(pos, "missing format line");
  if (!have_count) fail(pos, "missing vertex element");
  if (prop != std::size(kProperties)) fail(pos, "incomplete property list");

  cloud.points.resize(count);
  if (binary) {
    const std::size_t need = count * kBinaryRecordSize;
    if (data.size() - pos < need) {
      const std::size_t full = (data.size() - pos) / kBinaryRecordSize;
      fail_record(full, pos + full * kBinaryRecordSize,
                  "truncated payload: expected " + std::to_string(need) + " bytes, found " +
                      std::to_string(data.size() - pos));
    }
    if (data.size() - pos > need) fail(pos + need, "trailing bytes after payload");
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t off = pos + i * kBinaryRecordSize;
      const char* r = data.data() + off;
      LabeledPoint& p = cloud.points[i];
      std::uint8_t sem = 0;
      std::memcpy(&p.position.x, r, 4);
      std::memcpy(&p.position.y, r + 4, 4);
      std::memcpy(&p.position.z, r + 8, 4);
      std::memcpy(&sem, r + 12, 1);
      std::memcpy(&p.tree_id, r + 13, 4);
      std::memcpy(&p.branch_id, r + 17, 4);
      p.semantic = static_cast<Semantic>(sem);
      check_record(p, sem, i, off);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t off = pos;
      const std::size_t nl = data.find('\n', pos);
      if (nl == std::string_view::npos && pos >= data.size()) {
        fail_record(i, off, "truncated payload: expected " + std::to_string(count) + " records");
      }
      const std::size_t end = nl == std::string_view::npos ? data.size() : nl;
      const char* s = data.data() + pos;
      const char* e = data.data() + end;
      pos = nl == std::string_view::npos ? data.size() : nl + 1;

      LabeledPoint& p = cloud.points[i];
      auto skip_ws = [&] {
        while (s < e && (*s == ' ' || *s == '\t' || *s == '\r')) ++s;
      };
      auto read_num = [&](auto& out, const char* field) {
        skip_ws();
        const auto res = std::from_chars(s, e, out);
        if (res.ec != std::errc()) fail_record(i, off, std::string("bad ") + field + " field");
        s = res.ptr;
      };
      unsigned sem = 0;
      read_num(p.position.x, "x");
      read_num(p.position.y, "y");
      read_num(p.position.z, "z");
      read_num(sem, "semantic");
      read_num(p.tree_id, "tree_id");
      read_num(p.branch_id, "branch_id");
      skip_ws();
      if (s != e) fail_record(i, off, "unexpected trailing fields");
      p.semantic = static_cast<Semantic>(sem > 255 ? 255 : sem);
      check_record(p, sem, i, off);
    }
    while (pos < data.size() && (data[pos] == '\n' || data[pos] == '\r' || data[pos] == ' ')) ++pos;
    if (pos != data.size()) fail(pos, "trailing data after last record");
  }
  return cloud;
}

LabeledPointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return decode_cloud(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace orchard
