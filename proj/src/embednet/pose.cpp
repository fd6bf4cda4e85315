#include <cmath>

#include "baa/common/error.hpp"
#include "baa/embednet/embednet.hpp"

namespace baa::embednet {

PoseEstimate estimate_pose(const Eigen::MatrixXd& inferred, const Points& rays, const Points& buffer_points,
                           std::span<const char> buffer_valid, const Pose& initial, const PoseSolverOptions& opt) {
  const Eigen::Index m = inferred.rows(), b = inferred.cols();
  if (rays.rows() != m || buffer_points.rows() != b || static_cast<Eigen::Index>(buffer_valid.size()) != b) {
    throw InvalidInput("estimate_pose: inconsistent correspondence, ray and buffer sizes");
  }

  PoseEstimate out;
  out.used.assign(static_cast<std::size_t>(m), 0);
  std::vector<Eigen::Index> rows;
  std::vector<geometry::Vec3> targets;
  std::vector<double> weights;
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::Index best = -1;
    double p_best = -1;
    for (Eigen::Index i = 0; i < b; ++i) {
      if (buffer_valid[static_cast<std::size_t>(i)] && inferred(j, i) > p_best) {
        p_best = inferred(j, i);
        best = i;
      }
    }
    if (best < 0 || p_best < opt.confidence_floor) continue;
    geometry::Vec3 x = buffer_points.row(best).transpose();
    if (opt.soft_window > 0) {
      geometry::Vec3 acc = geometry::Vec3::Zero();
      double mass = 0;
      for (Eigen::Index i = 0; i < b; ++i) {
        if (!buffer_valid[static_cast<std::size_t>(i)]) continue;
        if ((buffer_points.row(i) - buffer_points.row(best)).norm() > opt.soft_window) continue;
        acc += inferred(j, i) * buffer_points.row(i).transpose();
        mass += inferred(j, i);
      }
      x = acc / mass;
    }
    out.used[static_cast<std::size_t>(j)] = 1;
    rows.push_back(j);
    targets.push_back(x);
    weights.push_back(p_best);
  }
  out.confident = rows.size();
  if (rows.size() < 3) {
    throw LowConfidence("estimate_pose: " + std::to_string(rows.size()) + " rows above confidence floor " +
                        std::to_string(opt.confidence_floor));
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  Points world(n, 3), cam(n, 3);
  for (Eigen::Index r = 0; r < n; ++r) world.row(r) = targets[static_cast<std::size_t>(r)].transpose();

  // Object-space iteration: project each matched point onto its line of
  // sight under the current estimate, then re-align.
  Pose pose = initial;
  try {
    for (out.iterations = 1; out.iterations <= opt.max_iterations; ++out.iterations) {
      for (Eigen::Index r = 0; r < n; ++r) {
        const geometry::Vec3 v = rays.row(rows[static_cast<std::size_t>(r)]).transpose();
        const geometry::Vec3 q = pose.rotation.transpose() * (world.row(r).transpose() - pose.translation);
        cam.row(r) = (v * (v.dot(q) / v.squaredNorm())).transpose();
      }
      const Pose next = geometry::umeyama_align(cam, world, weights);
      const double dr = (next.rotation - pose.rotation).cwiseAbs().maxCoeff();
      const double dt = (next.translation - pose.translation).cwiseAbs().maxCoeff();
      pose = next;
      if (dr < opt.tolerance && dt < opt.tolerance * std::max(1.0, pose.translation.norm())) break;
    }
  } catch (const DegenerateGeometry& e) {
    throw LowConfidence(std::string("estimate_pose: ") + e.what());
  }
  out.iterations = std::min(out.iterations, opt.max_iterations);

  out.pose = pose;
  out.camera_points = Points::Zero(m, 3);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index j = rows[static_cast<std::size_t>(r)];
    const geometry::Vec3 v = rays.row(j).transpose();
    const geometry::Vec3 q = pose.rotation.transpose() * (world.row(r).transpose() - pose.translation);
    out.camera_points.row(j) = (v * (v.dot(q) / v.squaredNorm())).transpose();
  }
  return out;
}

}  // namespace baa::embednet
