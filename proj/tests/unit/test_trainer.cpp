#include <algorithm>
#include <cmath>
#include <filesystem>

#include "baa/common/error.hpp"
#include "baa/trainer/trainer.hpp"
#include "doctest.h"

using namespace baa;
using namespace baa::trainer;

namespace {

synthworld::DatasetConfig tiny_data_config() {
  synthworld::DatasetConfig c;
  c.n_source_sequences = 6;
  c.n_target_images = 16;
  c.n_test_trajectories = 2;
  c.test_length = 9;
  c.source_scenes = {1000, 2};
  c.target_scenes = {2000, 2};
  c.test_scenes = {3000, 2};
  return c;
}

const synthworld::Datasets& tiny_data() {
  static const auto d = synthworld::build_datasets(tiny_data_config());
  return d;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.pretrain.epochs = 2;
  c.pretrain.batch = 3;
  c.adapt.epochs = 2;
  c.adapt.batch = 8;
  c.adapt.ce_sequences = 2;
  c.seed = 5;
  return c;
}

bool same_parameters(RunState& a, RunState& b) {
  auto pa = a.net.parameters(), pb = b.net.parameters();
  auto da = a.disc_parameters(), db = b.disc_parameters();
  pa.insert(pa.end(), da.begin(), da.end());
  pb.insert(pb.end(), db.begin(), db.end());
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!std::ranges::equal(pa[i]->value.values(), pb[i]->value.values())) return false;
  auto ba = a.net.buffers(), bb = b.net.buffers();
  for (std::size_t i = 0; i < ba.size(); ++i)
    if (!std::ranges::equal(ba[i].tensor->values(), bb[i].tensor->values())) return false;
  return true;
}

bool same_log(const std::vector<LogRow>& a, const std::vector<LogRow>& b) { return log_csv(a) == log_csv(b); }

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("baa_test_trainer_" + name);
  std::filesystem::remove_all(p);
  return p;
}

AdaptBatch small_batch(const synthworld::Datasets& d, const std::vector<SequenceGt>& gts) {
  AdaptBatch b;
  for (std::size_t i = 0; i < 4; ++i) {
    b.source.push_back(&d.source_train.sequences[i][0]);
    b.target.push_back(&d.target_train.images[i]);
  }
  b.ce_sequences.push_back(&d.source_train.sequences[0]);
  b.ce_gt.push_back(&gts[0]);
  return b;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  CHECK(TrainConfig{}.deviations().empty());

  auto c = TrainConfig{};
  c.adapt.disc_lr = 2e-4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.adapt.gen_lr = 2e-4 / 3;
  CHECK_NOTHROW(c.validate());
  CHECK(c.deviations().size() == 2);

  c = TrainConfig{};
  c.adam_beta1 = 0.9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.weights.alpha = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.disc.in_channels = 8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.pretrain.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(RunState{c}, ConfigError);
  CHECK(tiny_train_config().deviations().size() == 4);
}

TEST_CASE("scoring a ground-truth-fed trajectory gives zero error") {
  const auto& gt = tiny_data().source_test.ground_truth.at(0);
  const auto r = score_trajectory(gt, gt, 50);
  CHECK(r.ape5 == 0.0);
  CHECK(r.ape50 == 0.0);
  CHECK(r.ate50 == doctest::Approx(0.0));
  CHECK(r.ape_curve.size() == gt.size() - 1);

  const auto st = evaluate_static(tiny_data().source_test, 50);
  CHECK(st.per_trajectory.size() == 2);
  CHECK(st.ape50 > 0);
  CHECK(st.ape_curve.size() == 8);
  CHECK(st.ape_curve.back() == doctest::Approx(st.ape50));
}

TEST_CASE("evaluation report is complete and finite") {
  RunState s(tiny_train_config());
  const auto& d = tiny_data();
  const auto rep = evaluate(s.net, d.target_test, d.intrinsics, s.config);
  REQUIRE(rep.per_trajectory.size() == d.target_test.sequences.size());
  for (const auto& r : rep.per_trajectory) {
    CHECK(std::isfinite(r.ape5));
    CHECK(std::isfinite(r.ape50));
    CHECK(std::isfinite(r.ate50));
    CHECK(r.estimate.size() == d.config.test_length);
    CHECK(r.fallbacks < d.config.test_length);
  }
  const auto json = metrics_json(rep, 5, "abc");
  for (const char* key : {"\"ape5\"", "\"ape50\"", "\"ate50\"", "\"per_trajectory\"", "\"fallback_count\"", "\"seed\"",
                          "\"config_hash\""})
    CHECK(json.find(key) != std::string::npos);

  const double radius = dataset_radius(d.source_train, d.intrinsics);
  const double top1 = top1_accuracy(s.net, d.source_test, d.intrinsics, radius);
  CHECK(top1 >= 0);
  CHECK(top1 <= 1);
}

TEST_CASE("pretraining lowers the loss and is deterministic") {
  const auto& d = tiny_data();
  const double radius = dataset_radius(d.source_train, d.intrinsics);
  auto cfg = tiny_train_config();
  cfg.pretrain.epochs = 4;
  RunState a(cfg), b(cfg);
  pretrain(a, d.source_train, d.intrinsics, radius);
  pretrain(b, d.source_train, d.intrinsics, radius);
  CHECK(a.pretrain_epoch == 4);
  CHECK(a.log.size() == 8);
  CHECK(a.log.back().ce < a.log.front().ce);
  CHECK(same_parameters(a, b));
  CHECK(same_log(a.log, b.log));

  auto other = cfg;
  other.seed = 6;
  RunState c(other);
  pretrain(c, d.source_train, d.intrinsics, radius);
  CHECK_FALSE(same_parameters(a, c));
}

TEST_CASE("checkpoint and restore continue the run exactly") {
  const auto& d = tiny_data();
  const double radius = dataset_radius(d.source_train, d.intrinsics);
  const auto cfg = tiny_train_config();

  RunState straight(cfg);
  pretrain(straight, d.source_train, d.intrinsics, radius);
  adapt(straight, d.source_train, d.target_train, d.intrinsics, radius);

  const auto dir = scratch("resume");
  {
    RunState first(cfg);
    Hooks h;
    h.until_epoch = 1;
    pretrain(first, d.source_train, d.intrinsics, radius, h);
    CHECK(first.pretrain_epoch == 1);
    save_checkpoint(dir / "a", first);
  }
  {
    RunState second(cfg);
    load_checkpoint(dir / "a", second);
    pretrain(second, d.source_train, d.intrinsics, radius);
    Hooks h;
    h.until_epoch = 1;
    adapt(second, d.source_train, d.target_train, d.intrinsics, radius, Direction::both, h);
    save_checkpoint(dir / "b", second);
  }
  RunState third(cfg);
  load_checkpoint(dir / "b", third);
  adapt(third, d.source_train, d.target_train, d.intrinsics, radius);
  CHECK(third.adapt_epoch == 2);
  CHECK(same_parameters(straight, third));
  CHECK(same_log(straight.log, third.log));
  CHECK(straight.step == third.step);

  RunState missing(cfg);
  CHECK_THROWS_AS(load_checkpoint(dir / "nothing", missing), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradient-flow isolation during adaptation") {
  const auto& d = tiny_data();
  const double radius = dataset_radius(d.source_train, d.intrinsics);
  const auto gts = precompute_gt(d.source_train, d.intrinsics, radius);
  RunState s(tiny_train_config());
  const auto b = small_batch(d, gts);

  GradientProbe probe;
  const auto row = adapt_step(s, b, Direction::both, &probe);
  CHECK(probe.net_after_disc == 0.0);
  CHECK(probe.disc_after_disc > 0.0);
  CHECK(probe.disc_after_gen == 0.0);
  CHECK(probe.net_after_gen > 0.0);
  CHECK(std::isfinite(row.v_dts));
  CHECK(std::isfinite(row.v_dst));
  CHECK(std::isfinite(row.gen));
  CHECK(row.v_f == doctest::Approx(row.gen + 0.1 * row.ce).epsilon(1e-5));

  // Without the adversarial term F still learns from CE alone, and the
  // discriminators stay untouched by it.
  auto cfg = tiny_train_config();
  RunState only_ce(cfg);
  AdaptBatch no_ce = b;
  no_ce.ce_sequences.clear();
  no_ce.ce_gt.clear();
  adapt_step(only_ce, no_ce, Direction::both, &probe);
  CHECK(probe.disc_after_gen == 0.0);
}

TEST_CASE("uni-directional steps only move their own discriminator") {
  const auto& d = tiny_data();
  const double radius = dataset_radius(d.source_train, d.intrinsics);
  const auto gts = precompute_gt(d.source_train, d.intrinsics, radius);
  const auto b = small_batch(d, gts);
  for (auto dir : {Direction::s2t, Direction::t2s}) {
    RunState s(tiny_train_config());
    auto snapshot = [](adversary::Discriminator<float>& disc) {
      std::vector<std::vector<float>> v;
      for (auto* p : disc.parameters()) v.emplace_back(p->value.values().begin(), p->value.values().end());
      return v;
    };
    const auto ts0 = snapshot(s.d_ts), st0 = snapshot(s.d_st);
    const auto row = adapt_step(s, b, dir);
    if (dir == Direction::s2t) {
      CHECK(snapshot(s.d_ts) == ts0);
      CHECK(snapshot(s.d_st) != st0);
      CHECK(std::isnan(row.v_dts));
    } else {
      CHECK(snapshot(s.d_st) == st0);
      CHECK(snapshot(s.d_ts) != ts0);
      CHECK(std::isnan(row.v_dst));
    }
  }
}

TEST_CASE("divergence guard halts and dumps state") {
  const auto& d = tiny_data();
  const double radius = dataset_radius(d.source_train, d.intrinsics);
  auto cfg = tiny_train_config();
  cfg.adapt.divergence_limit = 1e-9;
  RunState s(cfg);
  const auto dir = scratch("diverged");
  Hooks h;
  h.divergence_dump = dir;
  CHECK_THROWS_AS(adapt(s, d.source_train, d.target_train, d.intrinsics, radius, Direction::both, h), Divergence);
  CHECK(std::filesystem::exists(dir / "optimizer_state.json"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("training log csv") {
  LogRow r;
  r.phase = "pretrain";
  r.epoch = 1;
  r.step = 7;
  r.ce = 0.5;
  r.v_f = 0.5;
  CHECK(log_csv({r}) == "phase,epoch,step,v_dts,v_dst,gen,ce,v_f\npretrain,1,7,,,,0.5,0.5\n");
}

TEST_CASE("unmatched cells inherit the nearest matched depth") {
  // 3x2 grid; only cells 0 (depth 1000) and 5 (depth 3000) matched.
  geometry::Points rays(6, 3), cam = geometry::Points::Zero(6, 3);
  for (int j = 0; j < 6; ++j) rays.row(j) << 0.1 * (j % 3), -0.2 * (j / 3), 1.0;
  cam.row(0) = rays.row(0) * 1000;
  cam.row(5) = rays.row(5) * 3000;
  std::vector<char> used{1, 0, 0, 0, 0, 1};
  const auto out = fill_unmatched(cam, used, rays, 3);
  CHECK(std::ranges::all_of(used, [](char u) { return u == 1; }));
  const double expected[] = {1000, 1000, 3000, 1000, 3000, 3000};
  for (int j = 0; j < 6; ++j) {
    CAPTURE(j);
    CHECK(out(j, 2) == doctest::Approx(expected[j]));
    CHECK((out.row(j) - rays.row(j) * expected[j]).norm() < 1e-9);
  }

  std::vector<char> none(6, 0);
  const auto same = fill_unmatched(cam, none, rays, 3);
  CHECK(same == cam);
  CHECK(std::ranges::none_of(none, [](char u) { return u == 1; }));
}

TEST_CASE("cosine triplet accuracy is a seeded fraction") {
  RunState s(tiny_train_config());
  const auto& d = tiny_data();
  const double r = dataset_radius(d.source_train, d.intrinsics);
  const double a = cosine_triplet_accuracy(s.net, d.source_test, d.intrinsics, r, 3);
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);
  CHECK(cosine_triplet_accuracy(s.net, d.source_test, d.intrinsics, r, 3) == a);
}
