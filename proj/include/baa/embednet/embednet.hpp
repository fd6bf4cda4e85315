#pragma once

// The mapping network F, correspondence matrices, the localisation loss and
// pose recovery from matched embeddings.

#include <Eigen/Core>
#include <cstddef>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "baa/geometry/geometry.hpp"
#include "baa/synthworld/synthworld.hpp"
#include "baa/tensor/layers.hpp"

namespace baa::embednet {

using geometry::Intrinsics;
using geometry::Points;
using geometry::Pose;
using synthworld::FrameSample;
using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

// Row-major float matrix, one embedding vector per row.
using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kBufferSize = 4;
inline constexpr std::size_t kStride = 4;

struct EmbedNetConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 8;
  std::size_t levels = 5;       // channels double per level: 8 .. 128
  std::size_t output_level = 2; // output resolution H / 2^output_level
  std::size_t embed_dim = 16;
};

// U-Net encoder-decoder. Every block is two (3x3 conv, BatchNorm, ReLU)
// stages; encoder blocks after the first open with a stride-2 conv. The
// decoder climbs back to `output_level` with 2x2 transposed convolutions and
// skip concatenation, then a 1x1 projection to embed_dim channels.
template <typename T>
class EmbedNet {
 public:
  EmbedNet() = default;
  EmbedNet(const EmbedNetConfig& config, std::uint64_t seed);

  // x[3, N, H, W] -> [N * H_r * W_r, embed_dim], frame-major then row-major
  // over grid cells.
  Var<T> forward(Tape<T>& tape, Var<T> x, bool training, bool frozen = false);

  std::vector<Parameter<T>*> parameters();
  std::vector<tensor::Buffer<T>> buffers();
  const EmbedNetConfig& config() const { return config_; }
  std::size_t stride() const { return std::size_t{1} << config_.output_level; }

 private:
  struct Stage {
    tensor::Conv2d<T> conv;
    tensor::BatchNorm<T> bn;
  };
  struct Block {
    Stage first, second;
  };
  Var<T> run(Tape<T>& tape, Block& b, Var<T> x, bool training, bool frozen);

  EmbedNetConfig config_;
  std::vector<Block> encoder_;
  std::vector<tensor::ConvTranspose2x2<T>> up_;
  std::vector<Block> decoder_;
  tensor::Conv2d<T> head_;
};

extern template class EmbedNet<float>;
extern template class EmbedNet<double>;

// HWC float images -> [3, N, H, W]. Throws InvalidInput on a size mismatch.
template <typename T>
Tensor<T> to_batch(std::span<const FrameSample* const> frames, std::size_t width, std::size_t height);

struct EmbeddingGrid {
  Matrix vectors;  // (H_r * W_r) x C
  std::size_t stride = kStride;
};

// Inference in eval mode; deterministic.
std::vector<EmbeddingGrid> embed(EmbedNet<float>& net, std::span<const FrameSample* const> frames);
EmbeddingGrid embed(EmbedNet<float>& net, const FrameSample& frame);

// Ground-truth correspondences: for each current grid point, the column of
// its nearest buffer point within `radius`, or -1 when masked.
struct GtCorrespondence {
  std::size_t rows = 0, cols = 0;
  std::vector<int> match;

  std::size_t active() const;
  Matrix dense() const;
};

// frames: buffer frames in order followed by the current frame. All need
// depth and pose.
GtCorrespondence build_gt_correspondence(std::span<const FrameSample* const> frames, const Intrinsics& k,
                                         double radius, std::size_t stride = kStride);
GtCorrespondence build_gt_correspondence(const Points& buffer_points, const Points& current_points, double radius);

// Half the world footprint of one grid cell at the median depth of `frames`.
double correspondence_radius(std::span<const FrameSample* const> frames, const Intrinsics& k,
                             std::size_t stride = kStride);

// Row j: softmax over buffer rows i of -||cur_j - buf_i||^2 / temperature.
Eigen::MatrixXd infer_correspondence(const Matrix& current, const Matrix& buffer, double temperature = 1.0);

// Mean over unmasked rows of -log C_f[j, match_j], log floored at 1e-12.
// Throws UndefinedLoss when every row is masked.
double ce_loss(const GtCorrespondence& gt, const Eigen::MatrixXd& inferred);

// Differentiable version on a tape: returns the summed (not averaged) loss
// over unmasked rows; callers divide by the active row count.
template <typename T>
Var<T> ce_loss_sum(Var<T> current, Var<T> buffer, const GtCorrespondence& gt, double temperature = 1.0);

struct BufferEntry {
  Matrix embeddings;
  Points points;              // world frame, one per grid cell
  std::vector<char> valid;    // points usable as match targets
  Pose pose;
};

// FIFO of the last kBufferSize frames.
class FrameBuffer {
 public:
  explicit FrameBuffer(std::size_t capacity = kBufferSize) : capacity_(capacity) {}

  void push(BufferEntry e);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const BufferEntry& at(std::size_t i) const { return entries_.at(i); }
  const BufferEntry& newest() const { return entries_.back(); }

  Matrix stacked_embeddings() const;
  Points stacked_points() const;
  std::vector<char> stacked_valid() const;

 private:
  std::size_t capacity_;
  std::deque<BufferEntry> entries_;
};

Eigen::MatrixXd infer_correspondence(const EmbeddingGrid& current, const FrameBuffer& buffer,
                                     double temperature = 1.0);

struct PoseSolverOptions {
  double confidence_floor = 0.2;
  // Soft match: probability-weighted mean of buffer points within this
  // distance of the argmax point. 0 uses the argmax point alone.
  double soft_window = 0;
  int max_iterations = 200;
  double tolerance = 1e-12;
};

struct PoseEstimate {
  Pose pose;
  Points camera_points;       // reconstructed current points, camera frame
  std::vector<char> used;     // rows that passed the confidence floor
  std::size_t confident = 0;
  int iterations = 0;
};

// Recovers the world-from-camera pose of the current frame from inferred
// correspondences. Current depths come from the matched buffer points: each
// point is projected onto the current pixel ray under the running pose
// estimate, and the weighted alignment is iterated to a fixed point from
// `initial`. Throws LowConfidence with fewer than 3 usable rows.
PoseEstimate estimate_pose(const Eigen::MatrixXd& inferred, const Points& current_rays, const Points& buffer_points,
                           std::span<const char> buffer_valid, const Pose& initial,
                           const PoseSolverOptions& options = {});

inline constexpr std::size_t kHistogramBins = 64;

struct Histogram {
  std::vector<std::size_t> counts = std::vector<std::size_t>(kHistogramBins, 0);
  std::vector<double> values;  // raw per-vector values, for exact mass queries
  std::size_t total = 0;

  // Fraction of values strictly below x.
  double mass_below(double x) const;
  std::string to_csv() const;  // bin_left,count
};

// Per-vector exclusivity value 1 - p_self, where p is the softmax over the
// image's negative squared distances including the vector itself.
std::vector<double> exclusivity_values(const Matrix& grid, double temperature = 1.0);
Histogram exclusivity_histogram(std::span<const EmbeddingGrid> grids, double temperature = 1.0);

}  // namespace baa::embednet
