#include "gtforge/pointcloud.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gtforge/spatial_grid.hpp"

namespace gtforge {

PointCloud::PointCloud(std::vector<LidarPoint> points, std::string source_path)
    : points_(std::move(points)), source_path_(std::move(source_path)) {
  for (const LidarPoint& p : points_) {
    if (!p.position.allFinite()) throw FormatError("non-finite point coordinate");
    if (p.echo_index < 1) throw FormatError("echo index must be >= 1");
    bounds_.extend(p.position);
  }
}

std::vector<double> PointCloud::heights() const {
  std::vector<double> z;
  z.reserve(points_.size());
  for (const LidarPoint& p : points_) z.push_back(p.position.z());
  return z;
}

CloudFormat cloud_format_from_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::kXyz;
  if (ext == ".ply") return CloudFormat::kPly;
  if (ext == ".las") return CloudFormat::kLas;
  throw UnsupportedFormat("unknown point cloud extension '" + ext + "'");
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

// Whitespace-separated number tokens on one line.
bool parse_number(std::string_view& rest, double& out) {
  std::size_t i = 0;
  while (i < rest.size() && is_space(rest[i])) ++i;
  if (i == rest.size()) return false;
  const char* first = rest.data() + i;
  const auto [ptr, ec] = std::from_chars(first, rest.data() + rest.size(), out);
  if (ec != std::errc() || (ptr != rest.data() + rest.size() && !is_space(*ptr))) return false;
  rest.remove_prefix(static_cast<std::size_t>(ptr - rest.data()));
  return true;
}

bool only_space(std::string_view s) {
  return std::all_of(s.begin(), s.end(), is_space);
}

LidarPoint make_point(double x, double y, double z, double echo, std::optional<float> intensity,
                      std::uint64_t offset) {
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) throw ParseError("non-finite coordinate", offset);
  if (!(echo >= 1.0) || echo > 255.0 || echo != std::floor(echo)) throw ParseError("invalid echo index", offset);
  return LidarPoint{Vec3(x, y, z), static_cast<std::uint8_t>(echo), intensity};
}

PointCloud load_xyz(const std::filesystem::path& path) {
  const std::string buf = slurp(path);
  std::vector<LidarPoint> points;
  std::size_t pos = 0;
  while (pos < buf.size()) {
    std::size_t eol = buf.find('\n', pos);
    if (eol == std::string::npos) eol = buf.size();
    std::string_view line(buf.data() + pos, eol - pos);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (!only_space(line)) {
      double v[5];
      int n = 0;
      std::string_view rest = line;
      while (n < 5 && parse_number(rest, v[n])) ++n;
      if (n < 3 || !only_space(rest)) throw ParseError("malformed xyz line", pos);
      const double echo = n >= 4 ? v[3] : 1.0;
      std::optional<float> intensity;
      if (n == 5) intensity = static_cast<float>(v[4]);
      points.push_back(make_point(v[0], v[1], v[2], echo, intensity, pos));
    }
    pos = eol + 1;
  }
  return PointCloud(std::move(points), path.string());
}

enum class PlyType { kInt8, kUInt8, kInt16, kUInt16, kInt32, kUInt32, kFloat32, kFloat64 };

std::optional<PlyType> ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::kInt8;
  if (name == "uchar" || name == "uint8") return PlyType::kUInt8;
  if (name == "short" || name == "int16") return PlyType::kInt16;
  if (name == "ushort" || name == "uint16") return PlyType::kUInt16;
  if (name == "int" || name == "int32") return PlyType::kInt32;
  if (name == "uint" || name == "uint32") return PlyType::kUInt32;
  if (name == "float" || name == "float32") return PlyType::kFloat32;
  if (name == "double" || name == "float64") return PlyType::kFloat64;
  return std::nullopt;
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::kInt8:
    case PlyType::kUInt8: return 1;
    case PlyType::kInt16:
    case PlyType::kUInt16: return 2;
    case PlyType::kInt32:
    case PlyType::kUInt32:
    case PlyType::kFloat32: return 4;
    case PlyType::kFloat64: return 8;
  }
  return 0;
}

template <typename T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<T>(bytes);
  }
  return v;
}

double read_binary(PlyType t, const char* p) {
  switch (t) {
    case PlyType::kInt8: return load_le<std::int8_t>(p);
    case PlyType::kUInt8: return load_le<std::uint8_t>(p);
    case PlyType::kInt16: return load_le<std::int16_t>(p);
    case PlyType::kUInt16: return load_le<std::uint16_t>(p);
    case PlyType::kInt32: return load_le<std::int32_t>(p);
    case PlyType::kUInt32: return load_le<std::uint32_t>(p);
    case PlyType::kFloat32: return load_le<float>(p);
    case PlyType::kFloat64: return load_le<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
};

PointCloud load_ply(const std::filesystem::path& path) {
  const std::string buf = slurp(path);
  if (buf.compare(0, 4, "ply\n") != 0 && buf.compare(0, 5, "ply\r\n") != 0) throw ParseError("missing 'ply' magic", 0);

  std::size_t pos = 0;
  bool ascii = false;
  bool have_format = false;
  bool in_vertex = false;
  bool seen_element = false;
  std::uint64_t vertex_count = 0;
  std::vector<PlyProperty> props;
  bool header_done = false;

  while (pos < buf.size()) {
    std::size_t eol = buf.find('\n', pos);
    if (eol == std::string::npos) throw ParseError("unterminated PLY header", pos);
    std::string line(buf, pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t line_start = pos;
    pos = eol + 1;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "ply" || word == "comment" || word == "obj_info" || word.empty()) continue;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") ascii = true;
      else if (fmt == "binary_little_endian") ascii = false;
      else throw UnsupportedFormat("PLY format '" + fmt + "' is not supported");
      have_format = true;
    } else if (word == "element") {
      std::string name;
      std::uint64_t count = 0;
      if (!(ls >> name >> count)) throw ParseError("malformed element line", line_start);
      if (name == "vertex") {
        if (seen_element) throw UnsupportedFormat("PLY vertex element must come first");
        vertex_count = count;
        in_vertex = true;
      } else {
        in_vertex = false;
      }
      seen_element = true;
    } else if (word == "property") {
      std::string type;
      ls >> type;
      if (!in_vertex) continue;
      if (type == "list") throw UnsupportedFormat("list properties on vertices are not supported");
      std::string name;
      ls >> name;
      const auto t = ply_type(type);
      if (!t) throw ParseError("unknown PLY property type '" + type + "'", line_start);
      props.push_back({name, *t});
    } else if (word == "end_header") {
      header_done = true;
      break;
    } else {
      throw ParseError("unexpected PLY header keyword '" + word + "'", line_start);
    }
  }
  if (!header_done || !have_format) throw ParseError("incomplete PLY header", pos);

  int ix = -1, iy = -1, iz = -1, iecho = -1, iint = -1;
  for (std::size_t i = 0; i < props.size(); ++i) {
    const std::string& n = props[i].name;
    const int k = static_cast<int>(i);
    if (n == "x") ix = k;
    else if (n == "y") iy = k;
    else if (n == "z") iz = k;
    else if (n == "return_number" || n == "echo" || n == "echo_index") iecho = k;
    else if (n == "intensity" || n == "scalar_intensity") iint = k;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw FormatError("PLY vertex element lacks x, y, z");

  std::vector<LidarPoint> points;
  points.reserve(vertex_count);
  std::vector<double> values(props.size());

  auto emit = [&](std::uint64_t offset) {
    std::optional<float> intensity;
    if (iint >= 0) intensity = static_cast<float>(values[static_cast<std::size_t>(iint)]);
    const double echo = iecho >= 0 ? values[static_cast<std::size_t>(iecho)] : 1.0;
    points.push_back(make_point(values[static_cast<std::size_t>(ix)], values[static_cast<std::size_t>(iy)],
                                values[static_cast<std::size_t>(iz)], echo, intensity, offset));
  };

  if (ascii) {
    for (std::uint64_t v = 0; v < vertex_count; ++v) {
      if (pos >= buf.size()) throw ParseError("truncated PLY body", pos);
      std::size_t eol = buf.find('\n', pos);
      if (eol == std::string::npos) eol = buf.size();
      std::string_view rest(buf.data() + pos, eol - pos);
      for (double& value : values)
        if (!parse_number(rest, value)) throw ParseError("malformed PLY vertex line", pos);
      emit(pos);
      pos = eol + 1;
    }
  } else {
    std::size_t stride = 0;
    for (const PlyProperty& p : props) stride += ply_size(p.type);
    for (std::uint64_t v = 0; v < vertex_count; ++v) {
      if (pos + stride > buf.size()) throw ParseError("truncated PLY body", pos);
      std::size_t off = pos;
      for (std::size_t i = 0; i < props.size(); ++i) {
        values[i] = read_binary(props[i].type, buf.data() + off);
        off += ply_size(props[i].type);
      }
      emit(pos);
      pos += stride;
    }
  }
  return PointCloud(std::move(points), path.string());
}

// LAS 1.0-1.4 public header, point data record formats 0-3.
PointCloud load_las(const std::filesystem::path& path) {
  const std::string buf = slurp(path);
  if (buf.size() < 227) throw ParseError("LAS header truncated", buf.size());
  if (buf.compare(0, 4, "LASF") != 0) throw ParseError("missing 'LASF' magic", 0);
  const char* d = buf.data();
  const auto offset_to_points = load_le<std::uint32_t>(d + 96);
  const auto format = static_cast<std::uint8_t>(d[104]);
  const auto record_length = load_le<std::uint16_t>(d + 105);
  std::uint64_t count = load_le<std::uint32_t>(d + 107);
  const double scale[3] = {load_le<double>(d + 131), load_le<double>(d + 139), load_le<double>(d + 147)};
  const double offset[3] = {load_le<double>(d + 155), load_le<double>(d + 163), load_le<double>(d + 171)};
  const auto version_minor = static_cast<std::uint8_t>(d[25]);
  if (count == 0 && version_minor >= 4 && buf.size() >= 255) count = load_le<std::uint64_t>(d + 247);

  if ((format & 0x3f) > 3) throw UnsupportedFormat("LAS point format " + std::to_string(format & 0x3f));
  if (format & 0x80) throw UnsupportedFormat("compressed LAS (LAZ) is not supported");
  if (record_length < 20) throw ParseError("LAS point record too short", 105);

  std::vector<LidarPoint> points;
  points.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t at = offset_to_points + i * record_length;
    if (at + record_length > buf.size()) throw ParseError("truncated LAS point data", at);
    const char* r = d + at;
    const double x = load_le<std::int32_t>(r) * scale[0] + offset[0];
    const double y = load_le<std::int32_t>(r + 4) * scale[1] + offset[1];
    const double z = load_le<std::int32_t>(r + 8) * scale[2] + offset[2];
    const auto intensity = load_le<std::uint16_t>(r + 12);
    const int ret = static_cast<std::uint8_t>(r[14]) & 0x07;
    points.push_back(make_point(x, y, z, ret == 0 ? 1.0 : ret, static_cast<float>(intensity), at));
  }
  return PointCloud(std::move(points), path.string());
}

}  // namespace

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  switch (format) {
    case CloudFormat::kXyz: return load_xyz(path);
    case CloudFormat::kPly: return load_ply(path);
    case CloudFormat::kLas: return load_las(path);
  }
  throw UnsupportedFormat("unknown cloud format");
}

PointCloud load_cloud(const std::filesystem::path& path) { return load_cloud(path, cloud_format_from_path(path)); }

void write_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyEncoding encoding) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const bool with_intensity =
      !cloud.empty() && std::all_of(cloud.points().begin(), cloud.points().end(),
                                    [](const LidarPoint& p) { return p.intensity.has_value(); });
  out << "ply\nformat " << (encoding == PlyEncoding::kAscii ? "ascii" : "binary_little_endian") << " 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\nproperty uchar return_number\n";
  if (with_intensity) out << "property float intensity\n";
  out << "end_header\n";
  if (encoding == PlyEncoding::kAscii) {
    out << std::setprecision(17);
    for (const LidarPoint& p : cloud.points()) {
      out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' '
          << static_cast<int>(p.echo_index);
      if (with_intensity) out << ' ' << std::setprecision(9) << *p.intensity << std::setprecision(17);
      out << '\n';
    }
  } else {
    static_assert(std::endian::native == std::endian::little, "binary PLY writer assumes a little-endian host");
    for (const LidarPoint& p : cloud.points()) {
      const double xyz[3] = {p.position.x(), p.position.y(), p.position.z()};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
      out.put(static_cast<char>(p.echo_index));
      if (with_intensity) {
        const float v = *p.intensity;
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (const LidarPoint& p : cloud.points()) {
    out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' ' << static_cast<int>(p.echo_index);
    if (p.intensity) out << ' ' << std::setprecision(9) << *p.intensity << std::setprecision(17);
    out << '\n';
  }
}

PointCloud keep_first_echo(const PointCloud& cloud) {
  std::vector<LidarPoint> kept;
  kept.reserve(cloud.size());
  std::copy_if(cloud.points().begin(), cloud.points().end(), std::back_inserter(kept),
               [](const LidarPoint& p) { return p.echo_index == 1; });
  return PointCloud(std::move(kept), cloud.source_path());
}

PointCloud remove_isolated(const PointCloud& cloud, double radius) {
  if (!(radius > 0.0)) throw DegenerateInput("isolation radius must be positive");
  std::vector<Vec3> pos;
  pos.reserve(cloud.size());
  for (const LidarPoint& p : cloud.points()) pos.push_back(p.position);
  const UniformGrid grid(pos, radius);
  const double r2 = radius * radius;

  std::vector<LidarPoint> kept;
  kept.reserve(cloud.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    bool has_neighbor = false;
    grid.for_each_near(pos[i], [&](std::uint32_t j) {
      if (!has_neighbor && j != i && (pos[j] - pos[i]).squaredNorm() <= r2) has_neighbor = true;
    });
    if (has_neighbor) kept.push_back(cloud[i]);
  }
  return PointCloud(std::move(kept), cloud.source_path());
}

}  // namespace gtforge
