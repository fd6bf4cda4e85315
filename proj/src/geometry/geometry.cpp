#include "baa/geometry/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "baa/common/error.hpp"

namespace baa::geometry {

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && rotation.determinant() > 0;
}

Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose inverse(const Pose& p) {
  const Mat3 rt = p.rotation.transpose();
  return {rt, -rt * p.translation};
}

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw InvalidInput("intrinsics: focal lengths must be positive");
  if (cx < 0 || cy < 0 || cx >= static_cast<double>(width) || cy >= static_cast<double>(height)) {
    throw InvalidInput("intrinsics: principal point outside the image");
  }
}

PointCloud apply(const Pose& p, const PointCloud& pc) {
  PointCloud out;
  out.frame = Frame::world;
  out.points = (pc.points * p.rotation.transpose()).rowwise() + p.translation.transpose();
  return out;
}

Points grid_rays(const Intrinsics& k, std::size_t stride) {
  if (stride == 0 || k.width % stride != 0 || k.height % stride != 0) {
    throw InvalidInput("grid_rays: stride " + std::to_string(stride) + " does not divide " +
                       std::to_string(k.width) + "x" + std::to_string(k.height));
  }
  const std::size_t gw = k.width / stride, gh = k.height / stride;
  Points rays(static_cast<Eigen::Index>(gw * gh), 3);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const auto i = static_cast<Eigen::Index>(gy * gw + gx);
      rays(i, 0) = (cell_pixel(gx, stride) - k.cx) / k.fx;
      rays(i, 1) = (cell_pixel(gy, stride) - k.cy) / k.fy;
      rays(i, 2) = 1.0;
    }
  return rays;
}

PointCloud unproject(const DepthMap& depth, const Intrinsics& k, const Pose& world_from_camera, std::size_t stride) {
  if (depth.width != k.width || depth.height != k.height || depth.values.size() != k.width * k.height) {
    throw InvalidInput("unproject: depth map size does not match intrinsics");
  }
  Points rays = grid_rays(k, stride);
  const std::size_t gw = k.width / stride;
  for (Eigen::Index i = 0; i < rays.rows(); ++i) {
    const std::size_t gx = static_cast<std::size_t>(i) % gw, gy = static_cast<std::size_t>(i) / gw;
    const double z = depth.at(gx * stride + stride / 2, gy * stride + stride / 2);
    if (!std::isfinite(z) || z <= 0) {
      throw InvalidInput("unproject: non-positive or non-finite depth at grid cell (" + std::to_string(gx) + "," +
                         std::to_string(gy) + ")");
    }
    rays.row(i) *= z;
  }
  PointCloud cam{std::move(rays), Frame::camera};
  return apply(world_from_camera, cam);
}

Eigen::Vector2d project(const Vec3& p, const Intrinsics& k) {
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

Pose umeyama_align(const Points& src, const Points& dst, std::span<const double> weights) {
  const auto n = src.rows();
  if (dst.rows() != n || static_cast<Eigen::Index>(weights.size()) != n) {
    throw InvalidInput("umeyama_align: " + std::to_string(n) + " source points, " + std::to_string(dst.rows()) +
                       " targets, " + std::to_string(weights.size()) + " weights");
  }
  if (n < 3) throw DegenerateGeometry("umeyama_align: need at least 3 points");
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0) || !std::isfinite(w)) throw InvalidInput("umeyama_align: weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0)) throw DegenerateGeometry("umeyama_align: total weight is zero");

  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    mu_s += weights[i] * src.row(i).transpose();
    mu_d += weights[i] * dst.row(i).transpose();
  }
  mu_s /= total;
  mu_d /= total;
  Mat3 cov = Mat3::Zero(), scatter = Mat3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 ds = src.row(i).transpose() - mu_s;
    const Vec3 dd = dst.row(i).transpose() - mu_d;
    cov += weights[i] * dd * ds.transpose();
    scatter += weights[i] * ds * ds.transpose();
  }
  cov /= total;
  scatter /= total;

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  const Eigen::JacobiSVD<Mat3> ssvd(scatter);
  const Vec3 ss = ssvd.singularValues();
  const double rel = 1e-12;
  if (!(ss(0) > 0) || ss(1) <= rel * ss(0) || !(sv(0) > 0) || sv(1) <= rel * sv(0)) {
    throw DegenerateGeometry("umeyama_align: weighted configuration has rank < 2");
  }
  Mat3 d = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2, 2) = -1;
  Pose out;
  out.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  out.translation = mu_d - out.rotation * mu_s;
  return out;
}

Pose umeyama_align(const Points& src, const Points& dst) {
  std::vector<double> w(static_cast<std::size_t>(src.rows()), 1.0);
  return umeyama_align(src, dst, w);
}

Points Trajectory::positions(std::size_t count) const {
  Points p(static_cast<Eigen::Index>(count), 3);
  for (std::size_t i = 0; i < count; ++i) p.row(static_cast<Eigen::Index>(i)) = poses.at(i).translation.transpose();
  return p;
}

namespace {
void check_lengths(const Trajectory& gt, const Trajectory& est, std::size_t n, const char* op) {
  if (gt.size() < n + 1 || est.size() < n + 1) {
    throw InvalidInput(std::string(op) + ": need " + std::to_string(n + 1) + " poses, got " +
                       std::to_string(gt.size()) + " ground truth and " + std::to_string(est.size()) + " estimated");
  }
}
}  // namespace

double ape(const Trajectory& gt, const Trajectory& est, std::size_t n) {
  if (n == 0) throw InvalidInput("ape: n must be >= 1");
  check_lengths(gt, est, n, "ape");
  double acc = 0;
  for (std::size_t i = 1; i <= n; ++i) acc += (est.poses[i].translation - gt.poses[i].translation).norm();
  return acc / static_cast<double>(n);
}

double rmse_unaligned(const Trajectory& gt, const Trajectory& est, std::size_t n) {
  check_lengths(gt, est, n, "rmse");
  double acc = 0;
  for (std::size_t i = 0; i <= n; ++i) acc += (est.poses[i].translation - gt.poses[i].translation).squaredNorm();
  return std::sqrt(acc / static_cast<double>(n + 1));
}

AlignedError ate(const Trajectory& gt, const Trajectory& est, std::size_t n) {
  check_lengths(gt, est, n, "ate");
  const Points g = gt.positions(n + 1), e = est.positions(n + 1);
  try {
    const Pose align = umeyama_align(e, g);
    double acc = 0;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      acc += (align.apply(e.row(i).transpose()) - g.row(i).transpose()).squaredNorm();
    }
    return {std::sqrt(acc / static_cast<double>(n + 1)), false};
  } catch (const DegenerateGeometry&) {
    return {rmse_unaligned(gt, est, n), true};
  }
}

std::string format_poses(const Trajectory& traj) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& p : traj.poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) os << p.rotation(r, c) << ' ';
      os << p.translation(r) << (r == 2 ? '\n' : ' ');
    }
  }
  return os.str();
}

Trajectory parse_poses(const std::string& text) {
  Trajectory t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double v[12];
    for (double& x : v) {
      if (!(ls >> x)) throw InvalidInput("pose file line " + std::to_string(lineno) + ": expected 12 reals");
    }
    Pose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[r * 4 + c];
      p.translation(r) = v[r * 4 + 3];
    }
    t.poses.push_back(p);
  }
  return t;
}

void write_poses(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << format_poses(traj);
}

Trajectory read_poses(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_poses(ss.str());
}

Mat3 camera_rotation(double yaw, double pitch) {
  const Vec3 forward(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch));
  const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return r;
}

}  // namespace baa::geometry
