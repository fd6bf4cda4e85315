#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace baa::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Rigid transform x -> R x + t. Camera poses are world-from-camera.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  // max |R^T R - I| < tol and det R > 0
  bool is_valid(double tol = 1e-9) const;
};

Pose compose(const Pose& a, const Pose& b);  // a * b
Pose inverse(const Pose& p);

// Pinhole camera. Pixel (u, v) denotes the ray through that pixel's centre:
// x = (u - cx) / fx, y = (v - cy) / fy, z = 1.
struct Intrinsics {
  double fx = 1, fy = 1;
  double cx = 0, cy = 0;
  std::size_t width = 0, height = 0;

  void validate() const;
};

enum class Frame { world, camera };

struct PointCloud {
  Points points;
  Frame frame = Frame::world;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

PointCloud apply(const Pose& p, const PointCloud& pc);

// Row-major H x W depth (z-distance along the optical axis).
struct DepthMap {
  std::size_t width = 0, height = 0;
  std::vector<float> values;

  float at(std::size_t u, std::size_t v) const { return values[v * width + u]; }
};

// Pixel coordinates sampled for strided cell (gx, gy): the pixel at offset
// stride/2 inside the cell.
inline double cell_pixel(std::size_t g, std::size_t stride) {
  return static_cast<double>(g * stride + stride / 2);
}

// World-frame points for the strided grid, row-major over grid cells.
PointCloud unproject(const DepthMap& depth, const Intrinsics& k, const Pose& world_from_camera, std::size_t stride);

// Unit-depth rays (z = 1) of the strided grid in camera coordinates.
Points grid_rays(const Intrinsics& k, std::size_t stride);

Eigen::Vector2d project(const Vec3& camera_point, const Intrinsics& k);

// Weighted least-squares rigid transform (no scale) taking src onto dst,
// minimising sum w_i |R src_i + t - dst_i|^2. Throws DegenerateGeometry when
// the weighted configuration has rank < 2.
Pose umeyama_align(const Points& src, const Points& dst, std::span<const double> weights);
Pose umeyama_align(const Points& src, const Points& dst);

struct Trajectory {
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
  Points positions(std::size_t count) const;
};

// Mean positional error over frames 1..n. Requires n + 1 poses in each.
double ape(const Trajectory& gt, const Trajectory& est, std::size_t n);

struct AlignedError {
  double value = 0;
  bool fallback = false;  // alignment was degenerate; frame-0 anchoring used
};

// RMSE of positions over frames 0..n after a single best rigid alignment of
// est onto gt.
AlignedError ate(const Trajectory& gt, const Trajectory& est, std::size_t n);

// RMSE over frames 0..n without any alignment.
double rmse_unaligned(const Trajectory& gt, const Trajectory& est, std::size_t n);

// Text format: one pose per line, 12 reals, row-major 3x4 [R | t].
std::string format_poses(const Trajectory& traj);
Trajectory parse_poses(const std::string& text);
void write_poses(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_poses(const std::filesystem::path& path);

// Rotation about the world z axis by yaw, with the camera looking along the
// heading (camera x right, y down, z forward; world z up).
Mat3 camera_rotation(double yaw, double pitch = 0.0);

}  // namespace baa::geometry
