#pragma once

// Two-phase schedule: source pretraining of F on the correspondence loss,
// then balanced adversarial adaptation. Also the odometry evaluation used
// for every reported metric, and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "baa/adversary/adversary.hpp"
#include "baa/embednet/embednet.hpp"
#include "baa/geometry/geometry.hpp"
#include "baa/synthworld/synthworld.hpp"
#include "baa/tensor/adam.hpp"

namespace baa::trainer {

using adversary::Direction;
using embednet::EmbedNet;
using embednet::GtCorrespondence;
using geometry::Intrinsics;
using geometry::Trajectory;
using synthworld::FrameSample;
using synthworld::SequenceDataset;

struct PretrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch = 16;  // sequences per step
};

struct AdaptConfig {
  std::size_t batch = 32;  // source frames and target frames per step, each
  std::size_t epochs = 10;
  double disc_lr = 3e-4;
  double gen_lr = 1e-4;
  std::size_t ce_sequences = 4;  // source sequences per step for the CE term
  double divergence_limit = 1e4;
};

struct EvalConfig {
  embednet::PoseSolverOptions solver;
  std::size_t max_length = 50;  // APE curve and ATE horizon
  bool fill_unmatched = true;   // buffer unmatched cells at their nearest matched cell's depth
};

struct TrainConfig {
  embednet::EmbedNetConfig net;
  adversary::DiscriminatorConfig disc;
  PretrainConfig pretrain;
  AdaptConfig adapt;
  EvalConfig eval;
  adversary::BalanceWeights weights;
  double lambda_ce = 0.1;
  double temperature = 1.0;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  std::uint64_t seed = 1;

  // Throws ConfigError. Enforces the 3:1 discriminator to generator learning
  // rate ratio and the Adam momentum terms; sizes only need to be positive.
  void validate() const;
  // Human-readable notes for every schedule size that differs from the
  // defaults above (shortened smoke runs and the like).
  std::vector<std::string> deviations() const;
};

inline constexpr double kRatioTolerance = 1e-9;

struct LogRow {
  std::string phase;  // "pretrain" or "adapt"
  std::size_t epoch = 0, step = 0;
  double v_dts = std::numeric_limits<double>::quiet_NaN();
  double v_dst = std::numeric_limits<double>::quiet_NaN();
  double gen = std::numeric_limits<double>::quiet_NaN();
  double ce = std::numeric_limits<double>::quiet_NaN();
  double v_f = std::numeric_limits<double>::quiet_NaN();
};

// phase,epoch,step,v_dts,v_dst,gen,ce,v_f with empty cells for NaN.
std::string log_csv(const std::vector<LogRow>& rows);

struct RunState {
  TrainConfig config;
  EmbedNet<float> net;
  adversary::Discriminator<float> d_ts, d_st;
  tensor::AdamState<float> pretrain_adam, gen_adam, disc_adam;
  std::size_t pretrain_epoch = 0, adapt_epoch = 0;
  std::size_t step = 0;
  std::vector<LogRow> log;

  explicit RunState(const TrainConfig& config);
  RunState(const RunState&) = delete;
  RunState& operator=(const RunState&) = delete;

  std::vector<tensor::Parameter<float>*> disc_parameters();
};

// Checkpoint directory: one container per parameter and BatchNorm buffer,
// Adam moments beside them, scalars in optimizer_state.json and the metric
// log in log.json. load_checkpoint expects a state built from the same config.
void save_checkpoint(const std::filesystem::path& dir, RunState& state);
void load_checkpoint(const std::filesystem::path& dir, RunState& state);

struct Hooks {
  std::function<void(const LogRow&)> on_step;
  std::function<void(const std::string& phase, std::size_t epoch)> on_epoch;
  // Stop once this many epochs of the phase have completed (resume later).
  std::optional<std::size_t> until_epoch;
  // Where to dump the state when the divergence guard fires.
  std::optional<std::filesystem::path> divergence_dump;
};

// Ground truth for every (sequence, current frame t >= 1), with the previous
// min(t, kBufferSize) frames as the buffer.
using SequenceGt = std::vector<GtCorrespondence>;
std::vector<SequenceGt> precompute_gt(const SequenceDataset& source, const Intrinsics& k, double radius);

double dataset_radius(const SequenceDataset& source, const Intrinsics& k);

// Minimises the correspondence cross-entropy on source sequences.
void pretrain(RunState& state, const SequenceDataset& source_train, const Intrinsics& k, double radius,
              const Hooks& hooks = {});

struct AdaptBatch {
  std::vector<const FrameSample*> source, target;
  std::vector<const std::vector<FrameSample>*> ce_sequences;
  std::vector<const SequenceGt*> ce_gt;
};

// Gradient norms observed inside one adaptation step.
struct GradientProbe {
  double net_after_disc = 0;   // F after the discriminator update backward
  double disc_after_disc = 0;
  double disc_after_gen = 0;   // discriminators after the mapper backward
  double net_after_gen = 0;
};

// One alternating update: discriminators ascend their values on detached
// embeddings, then F descends GEN + lambda_ce * CE against frozen
// discriminators. Throws Divergence when |GEN| exceeds the limit.
LogRow adapt_step(RunState& state, const AdaptBatch& batch, Direction direction, GradientProbe* probe = nullptr);

// Balanced (Direction::both) or uni-directional adaptation.
void adapt(RunState& state, const SequenceDataset& source_train, const SequenceDataset& target_train,
           const Intrinsics& k, double radius, Direction direction = Direction::both, const Hooks& hooks = {});

struct TrajectoryReport {
  double ape5 = 0, ape50 = 0, ate50 = 0;
  bool ate_fallback = false;
  std::size_t fallbacks = 0;  // low-confidence frames solved by the motion prior
  std::vector<double> ape_curve;  // APE-n for n = 1 .. horizon
  Trajectory estimate;
};

struct EvalReport {
  double ape5 = 0, ape50 = 0, ate50 = 0;  // means over trajectories
  std::size_t fallback_count = 0;
  std::vector<double> ape_curve;
  std::vector<TrajectoryReport> per_trajectory;
};

TrajectoryReport score_trajectory(const Trajectory& gt, const Trajectory& estimate, std::size_t max_length);
EvalReport aggregate(std::vector<TrajectoryReport> reports);

// Cells without a confident match take the camera depth (z) of the nearest
// matched cell on the grid, ties to the lowest index, and are marked used.
// Lets geometry entering the view become a match target for later frames.
geometry::Points fill_unmatched(const geometry::Points& camera_points, std::vector<char>& used,
                                const geometry::Points& rays, std::size_t grid_w);

// Frame 0 is anchored with its ground-truth pose and depth; later frames are
// localised against a FIFO buffer of reconstructed points. Low-confidence
// frames fall back to constant velocity and are not buffered.
Trajectory run_odometry(EmbedNet<float>& net, const std::vector<FrameSample>& frames, const geometry::Pose& anchor,
                        const geometry::DepthMap& anchor_depth, const Intrinsics& k, const TrainConfig& config,
                        std::size_t* fallbacks = nullptr);

EvalReport evaluate(EmbedNet<float>& net, const SequenceDataset& test, const Intrinsics& k, const TrainConfig& config);

// Dead reckoning with no measurements: every pose stays at the anchor.
EvalReport evaluate_static(const SequenceDataset& test, std::size_t max_length);

// Fraction of ground-truth-matchable rows whose argmax buffer point lies
// within `radius` of the current point, over every full-buffer window.
double top1_accuracy(EmbedNet<float>& net, const SequenceDataset& source, const Intrinsics& k, double radius,
                     double temperature = 1.0);

// Fraction of (anchor, co-located, distant) triplets over the same windows in
// which the anchor's cosine similarity to the co-located buffer vector beats
// that to a random buffer vector more than twice the radius away.
double cosine_triplet_accuracy(EmbedNet<float>& net, const SequenceDataset& source, const Intrinsics& k, double radius,
                               std::uint64_t seed = 1);

// Exclusivity histogram over every frame of a split.
embednet::Histogram split_histogram(EmbedNet<float>& net, const SequenceDataset& split, double temperature = 1.0);

// metrics.json body.
std::string metrics_json(const EvalReport& report, std::uint64_t seed, const std::string& config_hash);

}  // namespace baa::trainer
