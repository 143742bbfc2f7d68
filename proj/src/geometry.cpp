#include "gtforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace gtforge {

double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

OrientedCamera::OrientedCamera(double focal, Vec2 principal_point, int width, int height, Mat3 rotation,
                               Vec3 center)
    : focal_(focal),
      principal_point_(std::move(principal_point)),
      width_(width),
      height_(height),
      rotation_(std::move(rotation)),
      center_(std::move(center)) {
  if (!(focal_ > 0.0) || !std::isfinite(focal_)) throw InvalidCamera("focal must be positive");
  if (width_ <= 0 || height_ <= 0) throw InvalidCamera("image size must be positive");
  if (!(principal_point_.x() >= 0.0 && principal_point_.x() <= width_ && principal_point_.y() >= 0.0 &&
        principal_point_.y() <= height_))
    throw InvalidCamera("principal point outside the image");
  if (!rotation_.allFinite() || orthonormality_error(rotation_) >= 1e-9 || rotation_.determinant() < 0.0)
    throw InvalidCamera("rotation is not a proper orthonormal matrix");
  if (!center_.allFinite()) throw InvalidCamera("center is not finite");
}

Vec3 OrientedCamera::pixel_ray(const Vec2& pixel) const {
  const Vec3 cam_dir((pixel.x() - principal_point_.x()) / focal_, (pixel.y() - principal_point_.y()) / focal_, 1.0);
  return (rotation_.transpose() * cam_dir).normalized();
}

Eigen::Matrix3d OrientedCamera::intrinsics() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = focal_;
  k(1, 1) = focal_;
  k(0, 2) = principal_point_.x();
  k(1, 2) = principal_point_.y();
  return k;
}

Projection project(const Vec3& world, const OrientedCamera& cam) {
  const Vec3 p = cam.to_camera(world);
  if (!(p.z() > 0.0)) throw PointBehindCamera("point has non-positive depth");
  const double f = cam.focal();
  return {Vec2(f * p.x() / p.z() + cam.principal_point().x(), f * p.y() / p.z() + cam.principal_point().y()),
          p.z()};
}

EpipolarGeometry rectify_pair(const OrientedCamera& left, const OrientedCamera& right) {
  const Vec3 base = right.center() - left.center();
  const double b = base.norm();
  if (b < 1e-9) throw CoincidentCenters("optical centers coincide");

  const Vec3 x_axis = base / b;
  Vec3 mean_view = left.view_direction() + right.view_direction();
  if (mean_view.norm() < 1e-12) mean_view = left.view_direction();
  Vec3 z_axis = mean_view - mean_view.dot(x_axis) * x_axis;
  if (z_axis.norm() < 1e-12) throw CoincidentCenters("baseline is parallel to the viewing direction");
  z_axis.normalize();
  const Vec3 y_axis = z_axis.cross(x_axis);

  Mat3 rect;
  rect.row(0) = x_axis.transpose();
  rect.row(1) = y_axis.transpose();
  rect.row(2) = z_axis.transpose();

  const double focal = 0.5 * (left.focal() + right.focal());
  const Vec2 pp = 0.5 * (left.principal_point() + right.principal_point());
  const int width = std::max(left.width(), right.width());
  const int height = std::max(left.height(), right.height());

  EpipolarGeometry g;
  g.left = OrientedCamera(focal, pp, width, height, rect, left.center());
  g.right = OrientedCamera(focal, pp, width, height, rect, right.center());
  g.baseline = b;
  g.rect_rotation_left = rect * left.rotation().transpose();
  g.rect_rotation_right = rect * right.rotation().transpose();
  return g;
}

RectifiedProjection project_rectified(const Vec3& world, const EpipolarGeometry& geom) {
  const Projection l = project(world, geom.left);
  const Projection r = project(world, geom.right);
  return {l.pixel, r.pixel, l.depth};
}

double base_height_ratio(const EpipolarGeometry& geom, double mean_ground_elevation) {
  const double altitude = 0.5 * (geom.left.center().z() + geom.right.center().z());
  const double height = altitude - mean_ground_elevation;
  if (!(height > 0.0)) throw NonPositiveHeight("cameras are not above the ground elevation");
  return geom.baseline / height;
}

double median_elevation(std::vector<double> heights) {
  if (heights.empty()) throw DegenerateInput("median of an empty set");
  const auto mid = heights.begin() + static_cast<std::ptrdiff_t>(heights.size() / 2);
  std::nth_element(heights.begin(), mid, heights.end());
  if (heights.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(heights.begin(), mid);
  return 0.5 * (lower + upper);
}

namespace {

double signed_area(const std::vector<Vec2>& poly) {
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    acc += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * acc;
}

double cross(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// Sutherland-Hodgman against a convex counter-clockwise clip polygon.
std::vector<Vec2> clip_convex(std::vector<Vec2> subject, const std::vector<Vec2>& clip) {
  for (std::size_t i = 0; i < clip.size() && !subject.empty(); ++i) {
    const Vec2& a = clip[i];
    const Vec2& b = clip[(i + 1) % clip.size()];
    std::vector<Vec2> out;
    out.reserve(subject.size() + 2);
    for (std::size_t j = 0; j < subject.size(); ++j) {
      const Vec2& p = subject[j];
      const Vec2& q = subject[(j + 1) % subject.size()];
      const double sp = cross(a, b, p);
      const double sq = cross(a, b, q);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

}  // namespace

double FootprintPolygon::area() const { return std::abs(signed_area(vertices)); }

FootprintPolygon footprint(const OrientedCamera& cam, double ground_height) {
  const double w = cam.width();
  const double h = cam.height();
  const std::array<Vec2, 4> corners = {Vec2(0, 0), Vec2(w, 0), Vec2(w, h), Vec2(0, h)};
  FootprintPolygon poly;
  for (const Vec2& c : corners) {
    const Vec3 dir = cam.pixel_ray(c);
    if (std::abs(dir.z()) < 1e-12) throw RayParallelToGround("image corner ray is parallel to the ground");
    const double t = (ground_height - cam.center().z()) / dir.z();
    if (!(t > 0.0)) throw RayParallelToGround("image corner ray does not reach the ground");
    const Vec3 hit = cam.center() + t * dir;
    poly.vertices.emplace_back(hit.x(), hit.y());
  }
  if (signed_area(poly.vertices) < 0.0) std::reverse(poly.vertices.begin(), poly.vertices.end());
  return poly;
}

double overlap_fraction(const FootprintPolygon& a, const FootprintPolygon& b) {
  const double area_a = a.area();
  if (!(area_a > 0.0)) return 0.0;
  const std::vector<Vec2> inter = clip_convex(a.vertices, b.vertices);
  if (inter.size() < 3) return 0.0;
  return std::clamp(std::abs(signed_area(inter)) / area_a, 0.0, 1.0);
}

Mat3 rectifying_homography(const OrientedCamera& cam, const EpipolarGeometry& geom, Side side) {
  const OrientedCamera& rect_cam = side == Side::kLeft ? geom.left : geom.right;
  const Mat3& rect_rotation = side == Side::kLeft ? geom.rect_rotation_left : geom.rect_rotation_right;
  return cam.intrinsics() * rect_rotation.transpose() * rect_cam.intrinsics().inverse();
}

RectifiedImage resample_rectified(const ImageF& image, const OrientedCamera& cam, const EpipolarGeometry& geom,
                                  Side side) {
  if (image.width() != cam.width() || image.height() != cam.height())
    throw SizeMismatch("image dimensions do not match the camera");
  const OrientedCamera& rect_cam = side == Side::kLeft ? geom.left : geom.right;
  const Mat3 hom = rectifying_homography(cam, geom, side);

  RectifiedImage out{ImageF(rect_cam.width(), rect_cam.height(), 0.0f), Mask(rect_cam.width(), rect_cam.height(), 0)};
  const int w = image.width();
  const int h = image.height();

  auto snap = [](double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
  };

  for (int v = 0; v < rect_cam.height(); ++v) {
    for (int u = 0; u < rect_cam.width(); ++u) {
      const Vec3 src = hom * Vec3(u, v, 1.0);
      if (!(src.z() > 0.0)) continue;
      const double sx = snap(src.x() / src.z());
      const double sy = snap(src.y() / src.z());
      if (!(sx >= 0.0 && sy >= 0.0 && sx <= w - 1 && sy <= h - 1)) continue;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      float value;
      if (fx == 0.0 && fy == 0.0) {
        value = image(x0, y0);
      } else {
        const int x1 = std::min(x0 + 1, w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double top = (1.0 - fx) * image(x0, y0) + fx * image(x1, y0);
        const double bottom = (1.0 - fx) * image(x0, y1) + fx * image(x1, y1);
        value = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
      out.image(u, v) = value;
      out.valid(u, v) = 1;
    }
  }
  return out;
}

OrientedCamera read_pose(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    const auto pp = j.at("principal_point").get<std::vector<double>>();
    const auto size = j.at("image_size").get<std::vector<int>>();
    const auto rot = j.at("rotation").get<std::vector<double>>();
    const auto center = j.at("center").get<std::vector<double>>();
    if (pp.size() != 2 || size.size() != 2 || rot.size() != 9 || center.size() != 3)
      throw FormatError("pose file " + path.string() + " has wrongly sized arrays");
    Mat3 r;
    for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = rot[static_cast<std::size_t>(i)];
    return OrientedCamera(j.at("focal").get<double>(), Vec2(pp[0], pp[1]), size[0], size[1], r,
                          Vec3(center[0], center[1], center[2]));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("pose file " + path.string() + ": " + e.what());
  }
}

void write_pose(const std::filesystem::path& path, const OrientedCamera& cam) {
  nlohmann::ordered_json j;
  j["focal"] = cam.focal();
  j["principal_point"] = {cam.principal_point().x(), cam.principal_point().y()};
  j["image_size"] = {cam.width(), cam.height()};
  std::vector<double> rot(9);
  for (int i = 0; i < 9; ++i) rot[static_cast<std::size_t>(i)] = cam.rotation()(i / 3, i % 3);
  j["rotation"] = rot;
  j["center"] = {cam.center().x(), cam.center().y(), cam.center().z()};
  j["units"] = {{"focal", "pixels"}, {"center", "meters"}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pose file " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace gtforge
