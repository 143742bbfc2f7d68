#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <fstream>

#include "gtforge/errors.hpp"
#include "gtforge/pointcloud.hpp"
#include "test_util.hpp"

using namespace gtforge;
using namespace testutil;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

PointCloud cloud_of(const std::vector<Vec3>& pts, const std::vector<int>& echoes = {}) {
  std::vector<LidarPoint> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    LidarPoint p;
    p.position = pts[i];
    p.echo_index = echoes.empty() ? 1 : static_cast<std::uint8_t>(echoes[i]);
    out.push_back(p);
  }
  return PointCloud(out);
}

// O(n^2) reference for the isolation filter.
std::vector<Vec3> brute_isolated(const std::vector<Vec3>& pts, double r) {
  std::vector<Vec3> kept;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i != j && (pts[i] - pts[j]).squaredNorm() <= r * r) {
        kept.push_back(pts[i]);
        break;
      }
    }
  }
  return kept;
}

std::vector<Vec3> positions(const PointCloud& c) {
  std::vector<Vec3> out;
  for (const LidarPoint& p : c.points()) out.push_back(p.position);
  return out;
}

template <typename T>
void put(std::string& buf, std::size_t at, T v) {
  std::memcpy(buf.data() + at, &v, sizeof(T));
}

std::string las_file(std::uint8_t minor, std::uint8_t format, const std::vector<std::array<std::int32_t, 3>>& xyz,
                     const std::vector<std::uint8_t>& returns) {
  const std::uint16_t header = minor >= 4 ? 375 : 227;
  const std::uint16_t record = 20;
  std::string buf(header + record * xyz.size(), '\0');
  std::memcpy(buf.data(), "LASF", 4);
  buf[24] = 1;
  buf[25] = static_cast<char>(minor);
  put<std::uint16_t>(buf, 94, header);
  put<std::uint32_t>(buf, 96, header);
  buf[104] = static_cast<char>(format);
  put<std::uint16_t>(buf, 105, record);
  put<std::uint32_t>(buf, 107, minor >= 4 ? 0u : static_cast<std::uint32_t>(xyz.size()));
  put<double>(buf, 131, 0.01);
  put<double>(buf, 139, 0.01);
  put<double>(buf, 147, 0.001);
  put<double>(buf, 155, 1000.0);
  put<double>(buf, 163, 2000.0);
  put<double>(buf, 171, 0.0);
  if (minor >= 4) put<std::uint64_t>(buf, 247, xyz.size());
  for (std::size_t i = 0; i < xyz.size(); ++i) {
    const std::size_t at = header + i * record;
    put<std::int32_t>(buf, at, xyz[i][0]);
    put<std::int32_t>(buf, at + 4, xyz[i][1]);
    put<std::int32_t>(buf, at + 8, xyz[i][2]);
    put<std::uint16_t>(buf, at + 12, static_cast<std::uint16_t>(100 + i));
    buf[at + 14] = static_cast<char>(returns[i]);
  }
  return buf;
}

}  // namespace

TEST_CASE("xyz: three lines") {
  const auto dir = temp_dir("xyz");
  write_text(dir / "a.xyz", "# header\n1 2 3\n-4 5.5 6\n\n7 -8 9 2 0.5\n");
  const PointCloud c = load_cloud(dir / "a.xyz");
  REQUIRE(c.size() == 3);
  CHECK(c.bounds().min() == Vec3(-4, -8, 3));
  CHECK(c.bounds().max() == Vec3(7, 5.5, 9));
  CHECK(c[0].echo_index == 1);
  CHECK(c[2].echo_index == 2);
  REQUIRE(c[2].intensity.has_value());
  CHECK(*c[2].intensity == 0.5f);
}

TEST_CASE("xyz: malformed input reports the byte offset") {
  const auto dir = temp_dir("xyz_bad");
  write_text(dir / "bad.xyz", "1 2 3\n4 5\n");
  try {
    load_cloud(dir / "bad.xyz");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset() == 6);
  }
  write_text(dir / "nan.xyz", "1 2 nan\n");
  CHECK_THROWS(load_cloud(dir / "nan.xyz"));
}

TEST_CASE("ply: binary and ascii twins agree") {
  const auto dir = temp_dir("ply");
  std::mt19937_64 rng(1);
  std::vector<LidarPoint> pts;
  for (int i = 0; i < 1000; ++i) {
    LidarPoint p;
    p.position = Vec3(uniform(rng, -1e3, 1e3), uniform(rng, -1e3, 1e3), uniform(rng, 0, 100));
    p.echo_index = static_cast<std::uint8_t>(1 + rng() % 3);
    p.intensity = static_cast<float>(uniform(rng, 0, 1));
    pts.push_back(p);
  }
  const PointCloud cloud(pts);
  write_ply(dir / "bin.ply", cloud, PlyEncoding::kBinaryLittleEndian);
  write_ply(dir / "asc.ply", cloud, PlyEncoding::kAscii);
  const PointCloud b = load_cloud(dir / "bin.ply");
  const PointCloud a = load_cloud(dir / "asc.ply");
  CHECK(b == cloud);
  CHECK(a == cloud);
}

TEST_CASE("ply: float32 properties and truncation") {
  const auto dir = temp_dir("ply32");
  std::string body;
  const float v[6] = {1.5f, 2.5f, 3.5f, -1.0f, 0.0f, 2.0f};
  body.append(reinterpret_cast<const char*>(v), sizeof(v));
  const std::string header =
      "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nend_header\n";
  write_text(dir / "f.ply", header + body);
  const PointCloud c = load_cloud(dir / "f.ply");
  REQUIRE(c.size() == 2);
  CHECK(c[1].position == Vec3(-1, 0, 2));
  write_text(dir / "t.ply", header + body.substr(0, 20));
  try {
    load_cloud(dir / "t.ply");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset() == header.size() + 12);
  }
  write_text(dir / "be.ply", "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n");
  CHECK_THROWS_AS(load_cloud(dir / "be.ply"), UnsupportedFormat);
}

TEST_CASE("las: formats 0-3, 1.4 counts, LAZ rejected") {
  const auto dir = temp_dir("las");
  const std::vector<std::array<std::int32_t, 3>> xyz = {{100, 200, 3000}, {-50, 0, 12345}};
  write_text(dir / "a.las", las_file(2, 1, xyz, {1, 2}));
  const PointCloud c = load_cloud(dir / "a.las");
  REQUIRE(c.size() == 2);
  CHECK(c[0].position.x() == doctest::Approx(1001.0));
  CHECK(c[0].position.y() == doctest::Approx(2002.0));
  CHECK(c[0].position.z() == doctest::Approx(3.0));
  CHECK(c[1].echo_index == 2);
  CHECK(*c[1].intensity == 101.0f);

  write_text(dir / "b.las", las_file(4, 3, xyz, {1, 1}));
  CHECK(load_cloud(dir / "b.las").size() == 2);
  write_text(dir / "laz.las", las_file(2, 0x81, xyz, {1, 1}));
  CHECK_THROWS_AS(load_cloud(dir / "laz.las"), UnsupportedFormat);
  write_text(dir / "f6.las", las_file(2, 6, xyz, {1, 1}));
  CHECK_THROWS_AS(load_cloud(dir / "f6.las"), UnsupportedFormat);
  std::string trunc = las_file(2, 1, xyz, {1, 1});
  trunc.resize(trunc.size() - 5);
  write_text(dir / "t.las", trunc);
  CHECK_THROWS_AS(load_cloud(dir / "t.las"), ParseError);
  write_text(dir / "nomagic.las", std::string(300, 'x'));
  CHECK_THROWS_AS(load_cloud(dir / "nomagic.las"), ParseError);
  CHECK_THROWS_AS(load_cloud(dir / "x.laz"), UnsupportedFormat);
}

TEST_CASE("keep_first_echo") {
  const PointCloud c = cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)}, {1, 2, 1, 3});
  const PointCloud f = keep_first_echo(c);
  REQUIRE(f.size() == 2);
  CHECK(f[0].position.x() == 0);
  CHECK(f[1].position.x() == 2);
  CHECK(keep_first_echo(f) == f);
  const PointCloud all = cloud_of({Vec3(0, 0, 0), Vec3(1, 1, 1)});
  CHECK(keep_first_echo(all) == all);
  CHECK(keep_first_echo(PointCloud()).empty());
}

TEST_CASE("remove_isolated examples") {
  const PointCloud c = cloud_of({Vec3(0, 0, 0), Vec3(2.9, 0, 0), Vec3(100, 0, 0)});
  const PointCloud f = remove_isolated(c);
  REQUIRE(f.size() == 2);
  CHECK(f[1].position.x() == 2.9);

  std::vector<Vec3> grid;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) grid.emplace_back(i, j, 0);
  CHECK(remove_isolated(cloud_of(grid)).size() == 100);
  CHECK(remove_isolated(cloud_of({Vec3(1, 2, 3)})).empty());
  CHECK_THROWS(remove_isolated(c, 0.0));
}

TEST_CASE("remove_isolated: boundary is inclusive and the test is 3D") {
  CHECK(remove_isolated(cloud_of({Vec3(0, 0, 0), Vec3(3.0, 0, 0)})).size() == 2);
  CHECK(remove_isolated(cloud_of({Vec3(0, 0, 0), Vec3(0, 0, 3.01)})).empty());
  CHECK(remove_isolated(cloud_of({Vec3(0, 0, 0), Vec3(1.7, 1.7, 1.7)})).size() == 2);
  CHECK(remove_isolated(cloud_of({Vec3(0, 0, 0), Vec3(1.8, 1.8, 1.8)})).empty());
}

TEST_CASE("remove_isolated agrees with brute force and is idempotent") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Vec3> pts;
    const int n = 1000 + 1000 * trial;
    for (int i = 0; i < n; ++i)
      pts.emplace_back(uniform(rng, 0, 400), uniform(rng, -20, 380), uniform(rng, -5, 15));
    const double r = uniform(rng, 2.0, 6.0);
    const PointCloud once = remove_isolated(cloud_of(pts), r);
    CHECK(positions(once) == brute_isolated(pts, r));
    CHECK(remove_isolated(once, r) == once);
  }
}

TEST_CASE("cloud writers round trip through xyz") {
  const auto dir = temp_dir("xyzrt");
  const PointCloud c = cloud_of({Vec3(0.1, 0.2, 0.3), Vec3(1e6 + 0.125, -2.5, 7)}, {1, 2});
  write_xyz(dir / "c.xyz", c);
  CHECK(load_cloud(dir / "c.xyz") == c);
}
