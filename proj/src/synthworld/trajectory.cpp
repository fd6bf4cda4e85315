#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <random>

#include "baa/common/error.hpp"
#include "baa/synthworld/synthworld.hpp"
#include "grid.hpp"

namespace baa::synthworld {
namespace detail {

NavGrid::NavGrid(const Scene& scene, double cell) : scene_(scene), cell_(cell) {
  x0_ = scene.room.lo.x();
  y0_ = scene.room.lo.y();
  nx_ = static_cast<int>(std::ceil((scene.room.hi.x() - x0_) / cell));
  ny_ = static_cast<int>(std::ceil((scene.room.hi.y() - y0_) / cell));
  free_.assign(static_cast<std::size_t>(nx_ * ny_), 0);
  for (int j = 0; j < ny_; ++j)
    for (int i = 0; i < nx_; ++i) {
      const Vec3 c = centre(i, j, 0);
      free_[index(i, j)] = scene.is_navigable(c.x(), c.y()) ? 1 : 0;
    }
}

Vec3 NavGrid::centre(int i, int j, double z) const { return {x0_ + (i + 0.5) * cell_, y0_ + (j + 0.5) * cell_, z}; }

Cell NavGrid::cell_of(double x, double y) const {
  return {static_cast<int>(std::floor((x - x0_) / cell_)), static_cast<int>(std::floor((y - y0_) / cell_))};
}

namespace {
constexpr int kDi[8] = {1, -1, 0, 0, 1, 1, -1, -1};
constexpr int kDj[8] = {0, 0, 1, -1, 1, -1, 1, -1};
}  // namespace

std::vector<int> NavGrid::components(int& largest, std::size_t& largest_size) const {
  std::vector<int> label(free_.size(), -1);
  largest = -1;
  largest_size = 0;
  int next = 0;
  std::vector<Cell> stack;
  for (int j = 0; j < ny_; ++j)
    for (int i = 0; i < nx_; ++i) {
      if (!free(i, j) || label[index(i, j)] >= 0) continue;
      std::size_t size = 0;
      stack.push_back({i, j});
      label[index(i, j)] = next;
      while (!stack.empty()) {
        const Cell c = stack.back();
        stack.pop_back();
        ++size;
        for (int d = 0; d < 4; ++d) {
          const int a = c.i + kDi[d], b = c.j + kDj[d];
          if (free(a, b) && label[index(a, b)] < 0) {
            label[index(a, b)] = next;
            stack.push_back({a, b});
          }
        }
      }
      if (size > largest_size) {
        largest_size = size;
        largest = next;
      }
      ++next;
    }
  return label;
}

std::vector<Cell> NavGrid::shortest_path(Cell from, Cell to) const {
  if (!free(from.i, from.j) || !free(to.i, to.j)) return {};
  const std::size_t n = free_.size();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<int> prev(n, -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  dist[index(from.i, from.j)] = 0;
  open.push({0, index(from.i, from.j)});
  const int goal = index(to.i, to.j);
  while (!open.empty()) {
    const auto [d, id] = open.top();
    open.pop();
    if (d > dist[id]) continue;
    if (id == goal) break;
    const int ci = id % nx_, cj = id / nx_;
    for (int k = 0; k < 8; ++k) {
      const int a = ci + kDi[k], b = cj + kDj[k];
      if (!free(a, b)) continue;
      if (k >= 4 && (!free(a, cj) || !free(ci, b))) continue;
      const double nd = d + (k >= 4 ? std::numbers::sqrt2 : 1.0);
      const int nid = index(a, b);
      if (nd < dist[nid]) {
        dist[nid] = nd;
        prev[nid] = id;
        open.push({nd, nid});
      }
    }
  }
  if (prev[goal] < 0 && goal != index(from.i, from.j)) return {};
  std::vector<Cell> path;
  for (int id = goal; id >= 0; id = prev[id]) path.push_back({id % nx_, id / nx_});
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace detail

namespace {

using Vec2 = Eigen::Vector2d;

// Exact test: the outline is convex, so both endpoints inside suffice; each
// obstacle is checked by slab clipping the segment.
bool line_of_sight(const Scene& scene, const Vec2& a, const Vec2& b) {
  if (!scene.is_navigable(a.x(), a.y()) || !scene.is_navigable(b.x(), b.y())) return false;
  const Vec2 d = b - a;
  for (const auto& r : scene.obstacles) {
    double t0 = 0, t1 = 1;
    bool miss = false;
    const double lo[2] = {r.x0, r.y0}, hi[2] = {r.x1, r.y1};
    for (int k = 0; k < 2 && !miss; ++k) {
      if (d[k] == 0) {
        if (a[k] < lo[k] || a[k] > hi[k]) miss = true;
        continue;
      }
      double u0 = (lo[k] - a[k]) / d[k], u1 = (hi[k] - a[k]) / d[k];
      if (u0 > u1) std::swap(u0, u1);
      t0 = std::max(t0, u0);
      t1 = std::min(t1, u1);
      if (t0 > t1) miss = true;
    }
    if (!miss) return false;
  }
  return true;
}

// Grid path from a to b, shortened by greedy line-of-sight pulling.
std::vector<Vec2> plan(const Scene& scene, const detail::NavGrid& grid, const Vec2& a, const Vec2& b) {
  const auto ca = grid.cell_of(a.x(), a.y()), cb = grid.cell_of(b.x(), b.y());
  const auto cells = grid.shortest_path(ca, cb);
  if (cells.empty()) throw GenerationError("sample_trajectory: no navigable path between waypoints");
  std::vector<Vec2> raw{a};
  for (std::size_t i = 1; i + 1 < cells.size(); ++i) {
    const Vec3 c = grid.centre(cells[i].i, cells[i].j, 0);
    raw.emplace_back(c.x(), c.y());
  }
  raw.push_back(b);
  std::vector<Vec2> pulled{raw.front()};
  std::size_t anchor = 0;
  while (anchor + 1 < raw.size()) {
    std::size_t next = anchor + 1;
    for (std::size_t k = raw.size() - 1; k > anchor + 1; --k) {
      if (line_of_sight(scene, raw[anchor], raw[k])) {
        next = k;
        break;
      }
    }
    pulled.push_back(raw[next]);
    anchor = next;
  }
  return pulled;
}

double wrap_angle(double a) {
  while (a > std::numbers::pi) a -= 2 * std::numbers::pi;
  while (a < -std::numbers::pi) a += 2 * std::numbers::pi;
  return a;
}

// Samples `count` poses at fixed arc-length spacing along the polyline
// (or up to its end when count is 0), yaw rate-limited toward the heading.
std::vector<Pose> walk(const Scene& scene, const std::vector<Vec2>& line, std::size_t count,
                       const TrajectoryParams& params) {
  std::vector<double> cumulative{0};
  for (std::size_t i = 1; i < line.size(); ++i) cumulative.push_back(cumulative.back() + (line[i] - line[i - 1]).norm());
  const double total = cumulative.back();
  std::vector<double> stations;
  if (count == 0) {
    for (double s = 0; s < total - 1e-9; s += params.step) stations.push_back(s);
    stations.push_back(total);
  } else {
    for (std::size_t i = 0; i < count; ++i) stations.push_back(std::min(total, params.step * static_cast<double>(i)));
  }

  std::vector<Pose> poses;
  double yaw = 0;
  std::size_t seg = 0;
  for (std::size_t n = 0; n < stations.size(); ++n) {
    const double s = stations[n];
    while (seg + 2 < line.size() && cumulative[seg + 1] <= s) ++seg;
    // Skip zero-length segments when looking up the heading.
    std::size_t hseg = seg;
    while (hseg + 2 < line.size() && (line[hseg + 1] - line[hseg]).norm() < 1e-9) ++hseg;
    const Vec2 dir = line[hseg + 1] - line[hseg];
    const double seg_len = cumulative[seg + 1] - cumulative[seg];
    const double frac = seg_len > 0 ? (s - cumulative[seg]) / seg_len : 0.0;
    const Vec2 p = line[seg] + frac * (line[seg + 1] - line[seg]);
    const double heading = dir.norm() > 1e-9 ? std::atan2(dir.y(), dir.x()) : yaw;
    if (n == 0) {
      yaw = heading;
    } else {
      const double delta = std::clamp(wrap_angle(heading - yaw), -params.max_yaw_step, params.max_yaw_step);
      yaw = wrap_angle(yaw + delta);
    }
    poses.push_back({geometry::camera_rotation(yaw, params.pitch), Vec3(p.x(), p.y(), scene.camera_height)});
  }
  return poses;
}

}  // namespace

std::vector<Pose> trajectory_between(const Scene& scene, const Vec3& start, const Vec3& goal,
                                     const TrajectoryParams& params) {
  if (!scene.is_navigable(start.x(), start.y()) || !scene.is_navigable(goal.x(), goal.y())) {
    throw InvalidInput("trajectory_between: endpoints must be navigable");
  }
  detail::NavGrid grid(scene, params.grid_cell);
  return walk(scene, plan(scene, grid, start.head<2>(), goal.head<2>()), 0, params);
}

std::vector<Pose> sample_trajectory(const Scene& scene, std::size_t length, std::uint64_t seed,
                                    const TrajectoryParams& params) {
  if (length < 2) throw InvalidInput("sample_trajectory: length must be >= 2");
  detail::NavGrid grid(scene, params.grid_cell);
  int largest = -1;
  std::size_t size = 0;
  const auto labels = grid.components(largest, size);
  if (largest < 0) throw GenerationError("sample_trajectory: scene has no navigable cells");
  std::vector<Vec2> candidates;
  for (int j = 0; j < grid.ny(); ++j)
    for (int i = 0; i < grid.nx(); ++i)
      if (labels[grid.index(i, j)] == largest) {
        const Vec3 c = grid.centre(i, j, 0);
        candidates.emplace_back(c.x(), c.y());
      }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  const double needed = params.step * static_cast<double>(length - 1);
  std::vector<Vec2> line{candidates[pick(rng)]};
  double total = 0;
  for (int leg = 0; total < needed; ++leg) {
    if (leg > 10000) throw GenerationError("sample_trajectory: could not accumulate enough path length");
    Vec2 goal = candidates[pick(rng)];
    for (int tries = 0; tries < 100 && (goal - line.back()).norm() < params.min_goal_distance; ++tries) {
      goal = candidates[pick(rng)];
    }
    if ((goal - line.back()).norm() < 1e-9) continue;
    const auto part = plan(scene, grid, line.back(), goal);
    for (std::size_t i = 1; i < part.size(); ++i) {
      total += (part[i] - line.back()).norm();
      line.push_back(part[i]);
    }
  }
  return walk(scene, line, length, params);
}

}  // namespace baa::synthworld
