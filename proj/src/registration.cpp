#include "gtforge/registration.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>
#include <fstream>
#include <limits>

#include "gtforge/parallel.hpp"
#include "gtforge/spatial_grid.hpp"
#include "json.hpp"

namespace gtforge {

std::vector<GcpCorrespondence> match_gcp(std::span<const TiePoint> tiepoints, const PointCloud& cloud,
                                         double max_dist) {
  std::vector<GcpCorrespondence> out;
  if (cloud.empty() || tiepoints.empty() || !(max_dist > 0.0)) return out;
  std::vector<Vec3> pos;
  pos.reserve(cloud.size());
  for (const LidarPoint& p : cloud.points()) pos.push_back(p.position);
  const UniformGrid grid(pos, max_dist);
  const double limit = max_dist * max_dist;

  for (std::size_t t = 0; t < tiepoints.size(); ++t) {
    const Vec3& q = tiepoints[t].position;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_index = 0;
    grid.for_each_near(q, [&](std::uint32_t j) {
      const double d2 = (pos[j] - q).squaredNorm();
      if (d2 < best || (d2 == best && j < best_index)) {
        best = d2;
        best_index = j;
      }
    });
    if (best <= limit) out.push_back({t, best_index, pos[best_index], std::sqrt(best)});
  }
  return out;
}

Eigen::VectorXd reprojection_residuals(const OrientedCamera& cam, std::span<const Vec3> points,
                                       std::span<const Vec2> observed) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(2 * points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Projection p = project(points[i], cam);
    r.segment<2>(static_cast<Eigen::Index>(2 * i)) = p.pixel - observed[i];
  }
  return r;
}

Eigen::MatrixXd reprojection_jacobian(const OrientedCamera& cam, std::span<const Vec3> points) {
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(2 * points.size()), 6);
  const double f = cam.focal();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 p = cam.to_camera(points[i]);
    if (!(p.z() > 0.0)) throw PointBehindCamera("GCP behind the camera");
    Eigen::Matrix<double, 2, 3> dproj;
    dproj << f / p.z(), 0.0, -f * p.x() / (p.z() * p.z()), 0.0, f / p.z(), -f * p.y() / (p.z() * p.z());
    Mat3 skew;
    skew << 0.0, -p.z(), p.y(), p.z(), 0.0, -p.x(), -p.y(), p.x(), 0.0;
    const auto row = static_cast<Eigen::Index>(2 * i);
    jac.block<2, 3>(row, 0) = dproj * (-skew);
    jac.block<2, 3>(row, 3) = dproj * (-cam.rotation());
  }
  return jac;
}

OrientedCamera apply_pose_increment(const OrientedCamera& cam, const Eigen::Matrix<double, 6, 1>& delta) {
  const Vec3 w = delta.head<3>();
  const double angle = w.norm();
  Mat3 rot = cam.rotation();
  if (angle > 0.0) rot = Eigen::AngleAxisd(angle, w / angle).toRotationMatrix() * rot;
  rot = Eigen::Quaterniond(rot).normalized().toRotationMatrix();
  return OrientedCamera(cam.focal(), cam.principal_point(), cam.width(), cam.height(), rot,
                        cam.center() + delta.tail<3>());
}

OrientedCamera resect(const OrientedCamera& cam, std::span<const Vec3> gcps, std::span<const Vec2> observations,
                      const ResectionOptions& options) {
  if (gcps.size() != observations.size()) throw InsufficientGcps("GCP and observation counts differ");
  if (gcps.size() < 4) throw InsufficientGcps("resection needs at least 4 GCPs, got " + std::to_string(gcps.size()));

  auto cost_of = [&](const OrientedCamera& c) {
    for (const Vec3& g : gcps)
      if (!(c.to_camera(g).z() > 0.0)) return std::numeric_limits<double>::infinity();
    return reprojection_residuals(c, gcps, observations).squaredNorm();
  };

  OrientedCamera current = cam;
  double cost = cost_of(current);
  if (!std::isfinite(cost)) throw PointBehindCamera("GCP behind the initial camera");
  double lambda = options.initial_lambda;
  int rejections = 0;

  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd r = reprojection_residuals(current, gcps, observations);
    const Eigen::MatrixXd jac = reprojection_jacobian(current, gcps);
    const Eigen::Matrix<double, 6, 6> normal = jac.transpose() * jac;
    const Eigen::Matrix<double, 6, 1> grad = jac.transpose() * r;

    Eigen::Matrix<double, 6, 6> damped = normal;
    for (int k = 0; k < 6; ++k) damped(k, k) += lambda * std::max(normal(k, k), 1e-12);
    const Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(damped);
    if (ldlt.info() != Eigen::Success) throw SolverDiverged("normal equations are singular");
    const Eigen::Matrix<double, 6, 1> step = ldlt.solve(-grad);
    if (!step.allFinite()) throw SolverDiverged("non-finite resection step");
    if (step.norm() < options.step_tolerance) break;

    const OrientedCamera candidate = apply_pose_increment(current, step);
    const double new_cost = cost_of(candidate);
    if (new_cost <= cost) {
      current = candidate;
      cost = new_cost;
      lambda = std::max(lambda / 10.0, 1e-12);
      rejections = 0;
    } else {
      // a rise at the round-off floor means we are already at the minimum
      if (new_cost - cost <= 1e-12 * cost) break;
      lambda *= 10.0;
      if (++rejections >= options.max_rejections) throw SolverDiverged("residual grew for consecutive damped steps");
    }
  }
  return current;
}

std::optional<Vec3> triangulate(const TiePoint& tp, std::span<const OrientedCamera> cams) {
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (const Observation& o : tp.observations) {
    const OrientedCamera& cam = cams[o.camera];
    const Vec3 d = cam.pixel_ray(o.pixel);
    const Mat3 proj = Mat3::Identity() - d * d.transpose();
    a += proj;
    b += proj * cam.center();
  }
  const Eigen::FullPivLU<Mat3> lu(a);
  if (tp.observations.size() < 2 || lu.rank() < 3) return std::nullopt;
  return lu.solve(b);
}

namespace {

std::vector<TiePoint> retriangulated(std::span<const TiePoint> tiepoints, std::span<const OrientedCamera> cams) {
  std::vector<TiePoint> out(tiepoints.begin(), tiepoints.end());
  for (TiePoint& tp : out)
    if (const auto x = triangulate(tp, cams)) tp.position = *x;
  return out;
}

double rmse_of(std::span<const TiePoint> tiepoints, const std::vector<GcpCorrespondence>& gcps) {
  if (gcps.empty()) return std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (const GcpCorrespondence& g : gcps) acc += (tiepoints[g.tiepoint_index].position - g.lidar_point).squaredNorm();
  return std::sqrt(acc / static_cast<double>(gcps.size()));
}

PoseDelta delta_between(const OrientedCamera& a, const OrientedCamera& b) {
  const Eigen::AngleAxisd aa(b.rotation() * a.rotation().transpose());
  return {aa.angle() * 180.0 / M_PI, (b.center() - a.center()).norm()};
}

}  // namespace

RegistrationResult refine_registration(std::span<const OrientedCamera> cams, std::span<const TiePoint> tiepoints,
                                       const PointCloud& cloud, const RegistrationConfig& cfg) {
  if (cloud.empty()) throw NoCorrespondences("LiDAR cloud is empty");
  for (const TiePoint& tp : tiepoints)
    for (const Observation& o : tp.observations)
      if (o.camera >= cams.size()) throw ConfigError("tie point references unknown camera " + std::to_string(o.camera));

  std::vector<OrientedCamera> current(cams.begin(), cams.end());
  RegistrationReport report;

  std::vector<TiePoint> tps = retriangulated(tiepoints, current);
  std::vector<GcpCorrespondence> gcps = match_gcp(tps, cloud, cfg.max_gcp_distance);
  if (gcps.empty()) throw NoCorrespondences("no tie point lies within max_gcp_distance of the cloud");
  double rmse_prev = rmse_of(tps, gcps);
  report.initial_rmse = rmse_prev;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    std::vector<OrientedCamera> next(current);
    parallel_for(current.size(), cfg.workers, [&](std::size_t begin, std::size_t end) {
      for (std::size_t k = begin; k < end; ++k) {
        std::vector<Vec3> world;
        std::vector<Vec2> pixels;
        for (const GcpCorrespondence& g : gcps)
          for (const Observation& o : tps[g.tiepoint_index].observations)
            if (o.camera == k) {
              world.push_back(g.lidar_point);
              pixels.push_back(o.pixel);
            }
        next[k] = resect(current[k], world, pixels, cfg.resection);
      }
    });

    std::vector<TiePoint> next_tps = retriangulated(tiepoints, next);
    std::vector<GcpCorrespondence> next_gcps = match_gcp(next_tps, cloud, cfg.max_gcp_distance);
    const double rmse = rmse_of(next_tps, next_gcps);

    if (!(rmse <= rmse_prev)) {
      report.rmse_history.push_back(rmse_prev);
      report.converged = true;
      break;
    }
    current = std::move(next);
    tps = std::move(next_tps);
    gcps = std::move(next_gcps);
    report.rmse_history.push_back(rmse);
    const double improvement = (rmse_prev - rmse) / std::max(rmse_prev, std::numeric_limits<double>::min());
    rmse_prev = rmse;
    if (rmse < cfg.abs_tol || improvement < cfg.rel_tol) {
      report.converged = true;
      break;
    }
  }
  report.iterations = static_cast<int>(report.rmse_history.size());
  for (std::size_t k = 0; k < current.size(); ++k) report.pose_deltas.push_back(delta_between(cams[k], current[k]));
  return {std::move(current), std::move(report)};
}

std::vector<TiePoint> read_tiepoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tie point file " + path.string());
  std::vector<TiePoint> out;
  try {
    nlohmann::json j;
    in >> j;
    for (const auto& item : j.at("tiepoints")) {
      TiePoint tp;
      const auto p = item.at("position").get<std::vector<double>>();
      if (p.size() != 3) throw FormatError("tie point position must have 3 values");
      tp.position = Vec3(p[0], p[1], p[2]);
      for (const auto& o : item.at("observations")) {
        const auto px = o.at("pixel").get<std::vector<double>>();
        if (px.size() != 2) throw FormatError("observation pixel must have 2 values");
        tp.observations.push_back({o.at("camera").get<std::size_t>(), Vec2(px[0], px[1])});
      }
      if (tp.observations.size() < 2) throw FormatError("tie point needs at least 2 observations");
      out.push_back(std::move(tp));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("tie point file " + path.string() + ": " + e.what());
  }
  return out;
}

void write_tiepoints(const std::filesystem::path& path, std::span<const TiePoint> tiepoints) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const TiePoint& tp : tiepoints) {
    nlohmann::ordered_json item;
    item["position"] = {tp.position.x(), tp.position.y(), tp.position.z()};
    item["observations"] = nlohmann::ordered_json::array();
    for (const Observation& o : tp.observations)
      item["observations"].push_back({{"camera", o.camera}, {"pixel", {o.pixel.x(), o.pixel.y()}}});
    arr.push_back(std::move(item));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::ordered_json{{"tiepoints", arr}}.dump(1) << '\n';
}

void write_registration_report(const std::filesystem::path& path, const RegistrationReport& report,
                               std::span<const std::string> camera_ids) {
  nlohmann::ordered_json j;
  j["iterations"] = report.iterations;
  j["converged"] = report.converged;
  j["initial_rmse_m"] = report.initial_rmse;
  j["rmse_history_m"] = report.rmse_history;
  j["cameras"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < report.pose_deltas.size(); ++k) {
    j["cameras"].push_back({{"id", k < camera_ids.size() ? camera_ids[k] : std::to_string(k)},
                            {"rotation_delta_deg", report.pose_deltas[k].rotation_deg},
                            {"translation_delta_m", report.pose_deltas[k].translation_m}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace gtforge
