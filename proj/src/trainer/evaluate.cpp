#include <cmath>
#include <limits>
#include <random>
#include <nlohmann/json.hpp>

#include "baa/common/error.hpp"
#include "baa/common/rng.hpp"
#include "baa/trainer/trainer.hpp"

namespace baa::trainer {

using embednet::kBufferSize;
using embednet::kStride;
using geometry::Pose;

TrajectoryReport score_trajectory(const Trajectory& gt, const Trajectory& est, std::size_t max_length) {
  if (gt.size() < 2 || gt.size() != est.size()) throw InvalidInput("score_trajectory: need matching trajectories of 2+ poses");
  const std::size_t horizon = std::min(max_length, gt.size() - 1);
  TrajectoryReport r;
  for (std::size_t n = 1; n <= horizon; ++n) r.ape_curve.push_back(geometry::ape(gt, est, n));
  r.ape5 = r.ape_curve[std::min<std::size_t>(5, horizon) - 1];
  r.ape50 = r.ape_curve.back();
  const auto a = geometry::ate(gt, est, horizon);
  r.ate50 = a.value;
  r.ate_fallback = a.fallback;
  r.estimate = est;
  return r;
}

EvalReport aggregate(std::vector<TrajectoryReport> reports) {
  EvalReport out;
  if (reports.empty()) return out;
  std::size_t horizon = reports.front().ape_curve.size();
  for (const auto& r : reports) horizon = std::min(horizon, r.ape_curve.size());
  out.ape_curve.assign(horizon, 0.0);
  for (const auto& r : reports) {
    out.ape5 += r.ape5;
    out.ape50 += r.ape50;
    out.ate50 += r.ate50;
    out.fallback_count += r.fallbacks;
    for (std::size_t n = 0; n < horizon; ++n) out.ape_curve[n] += r.ape_curve[n];
  }
  const double m = static_cast<double>(reports.size());
  out.ape5 /= m;
  out.ape50 /= m;
  out.ate50 /= m;
  for (auto& v : out.ape_curve) v /= m;
  out.per_trajectory = std::move(reports);
  return out;
}

geometry::Points fill_unmatched(const geometry::Points& camera_points, std::vector<char>& used, const geometry::Points& rays,
                                std::size_t grid_w) {
  geometry::Points out = camera_points;
  const auto n = static_cast<std::size_t>(out.rows());
  const auto original = used;
  for (std::size_t j = 0; j < n; ++j) {
    if (original[j]) continue;
    std::size_t best = n;
    long best_d = std::numeric_limits<long>::max();
    for (std::size_t i = 0; i < n; ++i) {
      if (!original[i]) continue;
      const long du = static_cast<long>(i % grid_w) - static_cast<long>(j % grid_w);
      const long dv = static_cast<long>(i / grid_w) - static_cast<long>(j / grid_w);
      if (du * du + dv * dv < best_d) best_d = du * du + dv * dv, best = i;
    }
    if (best == n) continue;
    const auto jj = static_cast<Eigen::Index>(j);
    out.row(jj) = rays.row(jj) * (out(static_cast<Eigen::Index>(best), 2) / rays(jj, 2));
    used[j] = 1;
  }
  return out;
}

Trajectory run_odometry(EmbedNet<float>& net, const std::vector<FrameSample>& frames, const Pose& anchor,
                        const geometry::DepthMap& anchor_depth, const Intrinsics& k, const TrainConfig& config,
                        std::size_t* fallbacks) {
  if (frames.empty()) throw InvalidInput("run_odometry: no frames");
  std::vector<const FrameSample*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  const auto grids = embednet::embed(net, ptrs);
  const std::size_t stride = net.stride();
  const auto rays = geometry::grid_rays(k, stride);

  embednet::FrameBuffer buffer(kBufferSize);
  {
    embednet::BufferEntry e;
    e.embeddings = grids[0].vectors;
    e.points = geometry::unproject(anchor_depth, k, anchor, stride).points;
    e.valid.assign(static_cast<std::size_t>(e.points.rows()), 1);
    e.pose = anchor;
    buffer.push(std::move(e));
  }

  Trajectory est;
  est.poses.push_back(anchor);
  std::size_t fb = 0;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    const Pose& last = est.poses[t - 1];
    const Pose prior =
        t >= 2 ? geometry::compose(last, geometry::compose(geometry::inverse(est.poses[t - 2]), last)) : last;
    const auto c = embednet::infer_correspondence(grids[t], buffer, config.temperature);
    Pose pose = prior;
    try {
      const auto r = embednet::estimate_pose(c, rays, buffer.stacked_points(), buffer.stacked_valid(), prior,
                                             config.eval.solver);
      if (!r.pose.is_valid(1e-6) || !r.pose.translation.allFinite()) throw LowConfidence("non-finite pose");
      pose = r.pose;
      embednet::BufferEntry e;
      e.embeddings = grids[t].vectors;
      e.valid = r.used;
      const auto cam = config.eval.fill_unmatched ? fill_unmatched(r.camera_points, e.valid, rays, frames[t].width / stride)
                                                  : r.camera_points;
      e.points = geometry::apply(pose, geometry::PointCloud{cam, geometry::Frame::camera}).points;
      e.pose = pose;
      buffer.push(std::move(e));
    } catch (const LowConfidence&) {
      ++fb;
    }
    est.poses.push_back(pose);
  }
  if (fallbacks) *fallbacks = fb;
  return est;
}

EvalReport evaluate(EmbedNet<float>& net, const SequenceDataset& test, const Intrinsics& k, const TrainConfig& config) {
  if (test.ground_truth.size() != test.sequences.size() || test.anchor_depth.size() != test.sequences.size()) {
    throw InvalidInput("evaluate: " + test.name + " lacks ground truth or anchor depth for every sequence");
  }
  std::vector<TrajectoryReport> reports;
  for (std::size_t i = 0; i < test.sequences.size(); ++i) {
    const auto& gt = test.ground_truth[i];
    std::size_t fb = 0;
    const auto est = run_odometry(net, test.sequences[i], gt.poses.at(0), test.anchor_depth[i], k, config, &fb);
    auto r = score_trajectory(gt, est, config.eval.max_length);
    r.fallbacks = fb;
    reports.push_back(std::move(r));
  }
  return aggregate(std::move(reports));
}

EvalReport evaluate_static(const SequenceDataset& test, std::size_t max_length) {
  std::vector<TrajectoryReport> reports;
  for (const auto& gt : test.ground_truth) {
    Trajectory est;
    est.poses.assign(gt.size(), gt.poses.at(0));
    reports.push_back(score_trajectory(gt, est, max_length));
  }
  return aggregate(std::move(reports));
}

namespace {

struct Window {
  const geometry::Points& buffer_points;
  const embednet::Matrix& buffer_embeddings;
  const geometry::Points& points;
  const embednet::Matrix& embeddings;
  const GtCorrespondence& gt;
};

// Calls fn for every full-buffer window of every sequence, in order.
template <typename Fn>
void for_each_window(EmbedNet<float>& net, const SequenceDataset& source, const Intrinsics& k, double radius,
                     const char* who, Fn&& fn) {
  const std::size_t stride = net.stride();
  for (const auto& seq : source.sequences) {
    if (seq.size() <= kBufferSize) continue;
    std::vector<const FrameSample*> ptrs;
    std::vector<geometry::Points> world;
    for (const auto& f : seq) {
      if (!f.depth || !f.pose) throw InvalidInput(std::string(who) + ": " + source.name + " frame without depth or pose");
      ptrs.push_back(&f);
      world.push_back(geometry::unproject(*f.depth, k, *f.pose, stride).points);
    }
    const auto grids = embednet::embed(net, ptrs);
    const auto cells = world[0].rows();
    for (std::size_t t = kBufferSize; t < seq.size(); ++t) {
      geometry::Points buf_pts(cells * static_cast<Eigen::Index>(kBufferSize), 3);
      embednet::Matrix buf_emb(buf_pts.rows(), grids[t].vectors.cols());
      for (std::size_t i = 0; i < kBufferSize; ++i) {
        const auto r0 = static_cast<Eigen::Index>(i) * cells;
        buf_pts.middleRows(r0, cells) = world[t - kBufferSize + i];
        buf_emb.middleRows(r0, cells) = grids[t - kBufferSize + i].vectors;
      }
      const auto gt = embednet::build_gt_correspondence(buf_pts, world[t], radius);
      fn(Window{buf_pts, buf_emb, world[t], grids[t].vectors, gt});
    }
  }
}

}  // namespace

double top1_accuracy(EmbedNet<float>& net, const SequenceDataset& source, const Intrinsics& k, double radius,
                     double temperature) {
  std::size_t correct = 0, total = 0;
  for_each_window(net, source, k, radius, "top1_accuracy", [&](const Window& w) {
    const auto c = embednet::infer_correspondence(w.embeddings, w.buffer_embeddings, temperature);
    for (Eigen::Index j = 0; j < w.points.rows(); ++j) {
      if (w.gt.match[static_cast<std::size_t>(j)] < 0) continue;
      Eigen::Index best = 0;
      c.row(j).maxCoeff(&best);
      ++total;
      if ((w.buffer_points.row(best) - w.points.row(j)).norm() <= radius) ++correct;
    }
  });
  if (total == 0) throw UndefinedLoss("top1_accuracy: no matchable rows");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double cosine_triplet_accuracy(EmbedNet<float>& net, const SequenceDataset& source, const Intrinsics& k, double radius,
                               std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x7219));
  std::size_t wins = 0, total = 0;
  auto cosine = [](const auto& a, const auto& b) { return double(a.dot(b)) / std::max(1e-12, double(a.norm() * b.norm())); };
  for_each_window(net, source, k, radius, "cosine_triplet_accuracy", [&](const Window& w) {
    std::uniform_int_distribution<Eigen::Index> pick(0, w.buffer_points.rows() - 1);
    for (Eigen::Index j = 0; j < w.points.rows(); ++j) {
      const int m = w.gt.match[static_cast<std::size_t>(j)];
      if (m < 0) continue;
      // Negative: a buffer cell farther than twice the radius from the anchor.
      Eigen::Index neg = -1;
      for (int attempt = 0; attempt < 64 && neg < 0; ++attempt) {
        const auto i = pick(rng);
        if ((w.buffer_points.row(i) - w.points.row(j)).norm() > 2 * radius) neg = i;
      }
      if (neg < 0) continue;
      const auto a = w.embeddings.row(j);
      ++total;
      if (cosine(a, w.buffer_embeddings.row(m)) > cosine(a, w.buffer_embeddings.row(neg))) ++wins;
    }
  });
  if (total == 0) throw UndefinedLoss("cosine_triplet_accuracy: no matchable rows");
  return static_cast<double>(wins) / static_cast<double>(total);
}

embednet::Histogram split_histogram(EmbedNet<float>& net, const SequenceDataset& split, double temperature) {
  std::vector<const FrameSample*> ptrs;
  for (const auto& seq : split.sequences)
    for (const auto& f : seq) ptrs.push_back(&f);
  for (const auto& f : split.images) ptrs.push_back(&f);
  const auto grids = embednet::embed(net, ptrs);
  return embednet::exclusivity_histogram(grids, temperature);
}

std::string metrics_json(const EvalReport& report, std::uint64_t seed, const std::string& config_hash) {
  nlohmann::ordered_json j;
  j["ape5"] = report.ape5;
  j["ape50"] = report.ape50;
  j["ate50"] = report.ate50;
  j["per_trajectory"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.per_trajectory.size(); ++i) {
    const auto& r = report.per_trajectory[i];
    nlohmann::ordered_json t;
    t["index"] = i;
    t["ape5"] = r.ape5;
    t["ape50"] = r.ape50;
    t["ate50"] = r.ate50;
    t["ate_fallback"] = r.ate_fallback;
    t["fallbacks"] = r.fallbacks;
    j["per_trajectory"].push_back(t);
  }
  j["fallback_count"] = report.fallback_count;
  j["ape_curve"] = report.ape_curve;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  return j.dump(2) + "\n";
}

}  // namespace baa::trainer
