#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <span>
#include <vector>

#include "gtforge/geometry.hpp"
#include "gtforge/pointcloud.hpp"

namespace gtforge {

struct Observation {
  std::size_t camera = 0;
  Vec2 pixel = Vec2::Zero();
};

/// A photogrammetric tie point and the image measurements that define it.
struct TiePoint {
  Vec3 position = Vec3::Zero();
  std::vector<Observation> observations;
};

struct GcpCorrespondence {
  std::size_t tiepoint_index = 0;
  std::size_t lidar_index = 0;
  Vec3 lidar_point = Vec3::Zero();
  double distance = 0.0;
};

/// Nearest LiDAR point per tie point; pairs farther than max_dist are dropped.
/// Equidistant neighbors resolve to the lowest cloud index.
std::vector<GcpCorrespondence> match_gcp(std::span<const TiePoint> tiepoints, const PointCloud& cloud, double max_dist);

/// Stacked reprojection residuals (projected - observed), 2 per point.
Eigen::VectorXd reprojection_residuals(const OrientedCamera& cam, std::span<const Vec3> points,
                                       std::span<const Vec2> observed);

/// d(residual)/d(pose) at the current pose for the local parametrization
/// R = exp([w]x) R0, C = C0 + dc. Columns: w (3), dc (3).
Eigen::MatrixXd reprojection_jacobian(const OrientedCamera& cam, std::span<const Vec3> points);

/// Applies a local pose increment (w, dc) as defined above.
OrientedCamera apply_pose_increment(const OrientedCamera& cam, const Eigen::Matrix<double, 6, 1>& delta);

struct ResectionOptions {
  int max_iterations = 50;
  double step_tolerance = 1e-10;
  double initial_lambda = 1e-3;
  int max_rejections = 5;
};

/// Levenberg-damped Gauss-Newton on the 6-dof exterior orientation, intrinsics
/// fixed. Throws InsufficientGcps (< 4 points) or SolverDiverged.
OrientedCamera resect(const OrientedCamera& cam, std::span<const Vec3> gcps, std::span<const Vec2> observations,
                      const ResectionOptions& options = {});

/// Least-squares intersection of the observation rays (midpoint of closest
/// approach for two rays). Returns nullopt for parallel rays.
std::optional<Vec3> triangulate(const TiePoint& tp, std::span<const OrientedCamera> cams);

struct PoseDelta {
  double rotation_deg = 0.0;
  double translation_m = 0.0;
};

struct RegistrationReport {
  int iterations = 0;
  std::vector<double> rmse_history;  // one entry per iteration, meters
  double initial_rmse = 0.0;
  bool converged = false;
  std::vector<PoseDelta> pose_deltas;  // final vs input, per camera
};

struct RegistrationConfig {
  double max_gcp_distance = 1.0;
  double rel_tol = 1e-3;
  double abs_tol = 1e-9;  // RMSE below this counts as converged
  int max_iters = 10;
  int workers = 1;
  ResectionOptions resection;
};

struct RegistrationResult {
  std::vector<OrientedCamera> cameras;
  RegistrationReport report;
};

/// Retriangulate -> match GCPs -> resect every camera -> measure RMSE, until the
/// relative RMSE improvement drops below rel_tol or max_iters is reached.
/// Iterations that would raise the RMSE are rejected and end the loop.
RegistrationResult refine_registration(std::span<const OrientedCamera> cams, std::span<const TiePoint> tiepoints,
                                       const PointCloud& cloud, const RegistrationConfig& cfg = {});

/// Tie point file: JSON array of {"position": [x,y,z], "observations": [{"camera": i, "pixel": [x,y]}]}.
std::vector<TiePoint> read_tiepoints(const std::filesystem::path& path);
void write_tiepoints(const std::filesystem::path& path, std::span<const TiePoint> tiepoints);

void write_registration_report(const std::filesystem::path& path, const RegistrationReport& report,
                               std::span<const std::string> camera_ids);

}  // namespace gtforge
