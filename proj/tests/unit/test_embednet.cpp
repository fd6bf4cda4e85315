#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "baa/common/error.hpp"
#include "baa/embednet/embednet.hpp"
#include "doctest.h"

using namespace baa;
using namespace baa::embednet;

namespace {

FrameSample flat_frame(float v, std::size_t size = 32) {
  FrameSample f;
  f.width = f.height = size;
  f.image.assign(size * size * 3, v);
  return f;
}

FrameSample noise_frame(std::uint64_t seed, std::size_t size = 32) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  FrameSample f = flat_frame(0, size);
  for (auto& v : f.image) v = u(rng);
  return f;
}

geometry::DepthMap random_depth(std::uint64_t seed, const Intrinsics& k) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(1500, 4000);
  geometry::DepthMap d{k.width, k.height, {}};
  for (std::size_t i = 0; i < k.width * k.height; ++i) d.values.push_back(u(rng));
  return d;
}

Points random_points(std::mt19937_64& rng, int n, double extent) {
  std::uniform_real_distribution<double> u(-extent, extent);
  Points p(n, 3);
  for (int i = 0; i < n; ++i) p.row(i) << u(rng), u(rng), u(rng);
  return p;
}

Pose pose_at(double yaw_deg, const geometry::Vec3& t) {
  return {geometry::camera_rotation(yaw_deg * M_PI / 180.0, 0.0), t};
}

double max_pose_diff(const Pose& a, const Pose& b) {
  return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(), (a.translation - b.translation).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("embedding grid shape and determinism") {
  EmbedNet<float> net(EmbedNetConfig{}, 4);
  CHECK(net.stride() == kStride);
  const auto a = noise_frame(1);
  const auto g1 = embed(net, a), g2 = embed(net, a);
  CHECK(g1.vectors.rows() == 64);
  CHECK(g1.vectors.cols() == 16);
  CHECK(g1.vectors == g2.vectors);

  EmbedNet<float> twin(EmbedNetConfig{}, 4);
  CHECK(embed(twin, a).vectors == g1.vectors);

  const auto zeros = embed(net, flat_frame(0)), ones = embed(net, flat_frame(1));
  CHECK((zeros.vectors - ones.vectors).cwiseAbs().maxCoeff() > 1e-4f);

  // Batched and single-frame inference agree.
  const auto b = noise_frame(2);
  const FrameSample* both[] = {&a, &b};
  const auto batch = embed(net, both);
  CHECK((batch[1].vectors - embed(net, b).vectors).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("to_batch rejects mismatched frames") {
  const auto a = flat_frame(0, 32), b = flat_frame(0, 16);
  const FrameSample* frames[] = {&a, &b};
  CHECK_THROWS_AS(to_batch<float>(frames, 32, 32), InvalidInput);
}

TEST_CASE("ground-truth correspondence cases") {
  const auto k = synthworld::desk_intrinsics(32, 28);
  FrameSample f = flat_frame(0.5);
  f.depth = random_depth(3, k);
  f.pose = pose_at(30, {100, 200, 1200});

  SUBCASE("identical frames match cell to cell") {
    const FrameSample* frames[] = {&f, &f};
    const auto gt = build_gt_correspondence(frames, k, 50.0);
    CHECK(gt.rows == 64);
    CHECK(gt.cols == 64);
    CHECK(gt.active() == 64);
    for (std::size_t j = 0; j < 64; ++j) CHECK(gt.match[j] == static_cast<int>(j));
    CHECK(gt.dense().sum() == doctest::Approx(64));
  }
  SUBCASE("unseen geometry is fully masked") {
    FrameSample far = f;
    far.pose->translation += geometry::Vec3(20000, 0, 0);
    const FrameSample* frames[] = {&f, &far};
    CHECK(build_gt_correspondence(frames, k, 200.0).active() == 0);
  }
  SUBCASE("frames without depth are rejected") {
    FrameSample bare = flat_frame(0.5);
    const FrameSample* frames[] = {&f, &bare};
    CHECK_THROWS_AS(build_gt_correspondence(frames, k, 50.0), InvalidInput);
  }
}

TEST_CASE("ground-truth correspondence matches brute force") {
  std::mt19937_64 rng(17);
  const Points buffer = random_points(rng, 256, 1000), current = random_points(rng, 64, 1000);
  const double radius = 150;
  const auto gt = build_gt_correspondence(buffer, current, radius);
  for (int j = 0; j < 64; ++j) {
    int best = -1;
    double best_d = 1e300;
    for (int i = 0; i < 256; ++i) {
      const double d = std::sqrt(std::pow(buffer(i, 0) - current(j, 0), 2) + std::pow(buffer(i, 1) - current(j, 1), 2) +
                                 std::pow(buffer(i, 2) - current(j, 2), 2));
      if (d < best_d) best_d = d, best = i;
    }
    CHECK(gt.match[static_cast<std::size_t>(j)] == (best_d <= radius ? best : -1));
  }
}

TEST_CASE("correspondence radius is half a cell footprint at median depth") {
  const auto k = synthworld::desk_intrinsics(32, 28);
  FrameSample f = flat_frame(0);
  f.depth = geometry::DepthMap{32, 32, std::vector<float>(32 * 32, 2800.0f)};
  const FrameSample* frames[] = {&f};
  CHECK(correspondence_radius(frames, k) == doctest::Approx(200.0));
}

TEST_CASE("inferred correspondence") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0, 1);
  Matrix buffer(10, 4), current(3, 4);
  for (Eigen::Index i = 0; i < buffer.size(); ++i) buffer.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < current.size(); ++i) current.data()[i] = n(rng);

  SUBCASE("rows are probability vectors matching a direct oracle") {
    const auto c = infer_correspondence(current, buffer, 0.7);
    for (Eigen::Index j = 0; j < 3; ++j) {
      double z = 0;
      std::vector<double> e(10);
      for (Eigen::Index i = 0; i < 10; ++i) z += e[i] = std::exp(-(current.row(j).cast<double>() - buffer.row(i).cast<double>()).squaredNorm() / 0.7);
      for (Eigen::Index i = 0; i < 10; ++i) CHECK(c(j, i) == doctest::Approx(e[i] / z).epsilon(1e-9));
    }
  }
  SUBCASE("duplicated buffer vector splits the mass") {
    Matrix b(2, 4);
    b.row(0) = current.row(0);
    b.row(1) = current.row(0);
    const auto c = infer_correspondence(current.topRows(1), b);
    CHECK(c(0, 0) == doctest::Approx(0.5));
    CHECK(c(0, 1) == doctest::Approx(0.5));
  }
  SUBCASE("separated embeddings approach a permutation") {
    Matrix b = 100.0f * buffer;
    const auto c = infer_correspondence(b.topRows(3), b);
    for (Eigen::Index j = 0; j < 3; ++j) CHECK(c(j, j) > 1 - 1e-9);
  }
  CHECK_THROWS_AS(infer_correspondence(current, Matrix(0, 4)), InvalidInput);
  CHECK_THROWS_AS(infer_correspondence(current, Matrix(3, 5)), InvalidInput);
}

TEST_CASE("cross-entropy values") {
  GtCorrespondence gt{2, 4, {0, 1}};
  Eigen::MatrixXd perfect = Eigen::MatrixXd::Zero(2, 4);
  perfect(0, 0) = perfect(1, 1) = 1;
  CHECK(ce_loss(gt, perfect) == doctest::Approx(0.0));
  CHECK(ce_loss(gt, Eigen::MatrixXd::Constant(2, 4, 0.25)) == doctest::Approx(std::log(4.0)));

  Eigen::MatrixXd mixed = Eigen::MatrixXd::Constant(2, 4, 0.25);
  mixed.row(0) << 0.5, 0.25, 0.125, 0.125;
  CHECK(ce_loss(gt, mixed) == doctest::Approx((std::log(2.0) + std::log(4.0)) / 2));

  // Zero probability on the match hits the floor.
  Eigen::MatrixXd wrong = Eigen::MatrixXd::Zero(2, 4);
  wrong(0, 3) = wrong(1, 3) = 1;
  CHECK(ce_loss(gt, wrong) == doctest::Approx(-std::log(1e-12)));

  SUBCASE("masked rows do not contribute") {
    GtCorrespondence masked{3, 4, {0, -1, 1}};
    Eigen::MatrixXd a(3, 4), b(3, 4);
    a << 0.5, 0.5, 0, 0, 0.25, 0.25, 0.25, 0.25, 0.1, 0.6, 0.2, 0.1;
    b = a;
    b.row(1) << 1, 0, 0, 0;
    CHECK(ce_loss(masked, a) == doctest::Approx(ce_loss(masked, b)));
    CHECK(ce_loss(masked, a) == doctest::Approx((-std::log(0.5) - std::log(0.6)) / 2));
  }
  CHECK_THROWS_AS(ce_loss(GtCorrespondence{2, 4, {-1, -1}}, perfect), UndefinedLoss);
  CHECK_THROWS_AS(ce_loss(gt, Eigen::MatrixXd::Zero(3, 4)), InvalidInput);
}

TEST_CASE("tape cross-entropy agrees with the reference") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 1);
  Matrix cur(5, 3), buf(7, 3);
  for (Eigen::Index i = 0; i < cur.size(); ++i) cur.data()[i] = static_cast<float>(n(rng));
  for (Eigen::Index i = 0; i < buf.size(); ++i) buf.data()[i] = static_cast<float>(n(rng));
  const GtCorrespondence gt{5, 7, {0, -1, 6, 2, -1}};
  tensor::Tape<double> tape(false);
  auto as_var = [&](const Matrix& m) {
    tensor::Tensor<double> t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    for (Eigen::Index i = 0; i < m.size(); ++i) t[static_cast<std::size_t>(i)] = m.data()[i];
    return tape.constant(t);
  };
  const double summed = ce_loss_sum(as_var(cur), as_var(buf), gt, 2.0).value().item();
  CHECK(summed / gt.active() == doctest::Approx(ce_loss(gt, infer_correspondence(cur, buf, 2.0))).epsilon(1e-6));
}

TEST_CASE("frame buffer keeps the newest entries") {
  FrameBuffer fb(2);
  for (int i = 0; i < 3; ++i) {
    BufferEntry e;
    e.embeddings = Matrix::Constant(4, 2, static_cast<float>(i));
    e.points = Points::Constant(4, 3, i);
    e.valid.assign(4, static_cast<char>(i % 2));
    fb.push(std::move(e));
  }
  CHECK(fb.size() == 2);
  CHECK(fb.at(0).embeddings(0, 0) == 1);
  CHECK(fb.newest().embeddings(0, 0) == 2);
  CHECK(fb.stacked_embeddings().rows() == 8);
  CHECK(fb.stacked_points()(7, 0) == 2);
  CHECK(fb.stacked_valid() == std::vector<char>{1, 1, 1, 1, 0, 0, 0, 0});
  BufferEntry wide;
  wide.embeddings = Matrix::Zero(4, 3);
  CHECK_THROWS_AS(fb.push(wide), InvalidInput);
}

TEST_CASE("pose recovery from exact correspondences") {
  const auto k = synthworld::desk_intrinsics(32, 28);
  const auto rays = geometry::grid_rays(k, kStride);
  const auto depth = random_depth(21, k);
  const Pose previous = pose_at(40, {500, -300, 1200});
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(64, 64);
  const std::vector<char> valid(64, 1);

  SUBCASE("copied frame") {
    const auto world = geometry::unproject(depth, k, previous, kStride).points;
    const auto est = estimate_pose(identity, rays, world, valid, previous);
    CHECK(max_pose_diff(est.pose, previous) < 1e-6);
    CHECK(est.confident == 64);
  }
  SUBCASE("step forward and turn") {
    const Pose current = pose_at(45, previous.translation + geometry::Vec3(150, 60, 0));
    const auto world = geometry::unproject(depth, k, current, kStride).points;
    const auto est = estimate_pose(identity, rays, world, valid, previous);
    CHECK(max_pose_diff(est.pose, current) < 1e-6);
    const auto cam = geometry::unproject(depth, k, Pose::identity(), kStride).points;
    CHECK((est.camera_points - cam).cwiseAbs().maxCoeff() < 1e-4);
  }
  SUBCASE("too few confident rows") {
    const auto world = geometry::unproject(depth, k, previous, kStride).points;
    CHECK_THROWS_AS(estimate_pose(Eigen::MatrixXd::Constant(64, 64, 1.0 / 64), rays, world, valid, previous),
                    LowConfidence);
    std::vector<char> two(64, 0);
    two[0] = two[1] = 1;
    CHECK_THROWS_AS(estimate_pose(identity, rays, world, two, previous), LowConfidence);
  }
  SUBCASE("size mismatch") {
    CHECK_THROWS_AS(estimate_pose(identity, rays, Points::Zero(10, 3), valid, previous), InvalidInput);
  }
}

TEST_CASE("exclusivity values and histogram") {
  const Matrix same = Matrix::Zero(8, 4);
  for (double v : exclusivity_values(same)) CHECK(v == doctest::Approx(1.0 - 1.0 / 8));

  Matrix apart(4, 4);
  apart.setIdentity();
  apart *= 100.0f;
  for (double v : exclusivity_values(apart)) CHECK(v < 1e-12);

  // Two vectors at squared distance 1: 1 - 1/(1 + e^-1).
  Matrix pair(2, 1);
  pair << 0, 1;
  CHECK(exclusivity_values(pair)[0] == doctest::Approx(1 - 1 / (1 + std::exp(-1.0))));

  const std::vector<EmbeddingGrid> grids{{same, kStride}, {apart, kStride}};
  const auto h = exclusivity_histogram(grids);
  CHECK(h.total == 12);
  CHECK(h.counts.size() == kHistogramBins);
  CHECK(h.counts[0] == 4);
  CHECK(h.counts[static_cast<std::size_t>(0.875 * kHistogramBins)] == 8);
  CHECK(h.mass_below(0.5) == doctest::Approx(4.0 / 12));
  CHECK(h.to_csv().rfind("bin_left,count\n0,4\n", 0) == 0);
}

TEST_CASE("network gradients match finite differences in double precision") {
  const EmbedNetConfig cfg{3, 2, 3, 1, 4};
  EmbedNet<double> net(cfg, 6);
  const auto a = noise_frame(31, 8), b = noise_frame(32, 8);
  const FrameSample* frames[] = {&a, &b};
  const auto x = to_batch<double>(frames, 8, 8);
  const GtCorrespondence gt{16, 16, {0, 1, 2, 3, -1, 5, 6, 7, 8, -1, 10, 11, 12, 13, 14, 15}};
  auto loss = [&](tensor::Tape<double>& tape) {
    auto y = net.forward(tape, tape.constant(x), true);
    return ce_loss_sum(tensor::slice(y, 16, 32), tensor::slice(y, 0, 16), gt);
  };
  const auto res = testing::grad_check(net.parameters(), loss, 1e-5, 24);
  CHECK(res.max_rel_error < 1e-5);

  // f32 and f64 forwards agree once the weights are shared. Batch statistics
  // avoid the running averages the check above has already moved.
  EmbedNet<float> single(cfg, 6);
  tensor::copy_values(net.parameters(), single.parameters());
  tensor::Tape<float> tf(false);
  tensor::Tape<double> td(false);
  const auto yf = single.forward(tf, tf.constant(to_batch<float>(frames, 8, 8)), true).value();
  const auto yd = net.forward(td, td.constant(x), true).value();
  double diff = 0;
  for (std::size_t i = 0; i < yd.size(); ++i) diff = std::max(diff, std::abs(yd[i] - static_cast<double>(yf[i])));
  CHECK(diff < 1e-4);
}
