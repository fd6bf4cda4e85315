#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "baa/common/error.hpp"
#include "baa/embednet/embednet.hpp"

namespace baa::embednet {

std::size_t GtCorrespondence::active() const {
  return static_cast<std::size_t>(std::count_if(match.begin(), match.end(), [](int m) { return m >= 0; }));
}

Matrix GtCorrespondence::dense() const {
  Matrix d = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t j = 0; j < rows; ++j)
    if (match[j] >= 0) d(static_cast<Eigen::Index>(j), match[j]) = 1;
  return d;
}

GtCorrespondence build_gt_correspondence(const Points& buffer, const Points& current, double radius) {
  GtCorrespondence gt;
  gt.rows = static_cast<std::size_t>(current.rows());
  gt.cols = static_cast<std::size_t>(buffer.rows());
  gt.match.assign(gt.rows, -1);
  const double r2 = radius * radius;
  for (Eigen::Index j = 0; j < current.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < buffer.rows(); ++i) {
      const double d = (buffer.row(i) - current.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        if (d <= r2) gt.match[static_cast<std::size_t>(j)] = static_cast<int>(i);
      }
    }
  }
  return gt;
}

namespace {
Points world_points(const FrameSample& f, const Intrinsics& k, std::size_t stride) {
  if (!f.depth || !f.pose) throw InvalidInput("correspondence: frame is missing depth or pose");
  return geometry::unproject(*f.depth, k, *f.pose, stride).points;
}
}  // namespace

GtCorrespondence build_gt_correspondence(std::span<const FrameSample* const> frames, const Intrinsics& k,
                                         double radius, std::size_t stride) {
  if (frames.size() < 2) throw InvalidInput("build_gt_correspondence: need at least one buffer frame and a current frame");
  const Points current = world_points(*frames.back(), k, stride);
  Points buffer(static_cast<Eigen::Index>(current.rows() * static_cast<Eigen::Index>(frames.size() - 1)), 3);
  for (std::size_t f = 0; f + 1 < frames.size(); ++f) {
    buffer.middleRows(static_cast<Eigen::Index>(f) * current.rows(), current.rows()) = world_points(*frames[f], k, stride);
  }
  return build_gt_correspondence(buffer, current, radius);
}

double correspondence_radius(std::span<const FrameSample* const> frames, const Intrinsics& k, std::size_t stride) {
  std::vector<float> depths;
  for (const auto* f : frames) {
    if (!f->depth) throw InvalidInput("correspondence_radius: frame without depth");
    for (std::size_t gy = 0; gy < k.height / stride; ++gy)
      for (std::size_t gx = 0; gx < k.width / stride; ++gx)
        depths.push_back(f->depth->at(gx * stride + stride / 2, gy * stride + stride / 2));
  }
  if (depths.empty()) throw InvalidInput("correspondence_radius: no frames");
  auto mid = depths.begin() + static_cast<std::ptrdiff_t>(depths.size() / 2);
  std::nth_element(depths.begin(), mid, depths.end());
  return 0.5 * static_cast<double>(stride) * static_cast<double>(*mid) / k.fx;
}

Eigen::MatrixXd infer_correspondence(const Matrix& current, const Matrix& buffer, double temperature) {
  if (buffer.rows() == 0) throw InvalidInput("infer_correspondence: empty buffer");
  if (current.cols() != buffer.cols()) throw InvalidInput("infer_correspondence: embedding widths differ");
  if (!(temperature > 0)) throw InvalidInput("infer_correspondence: temperature must be positive");
  const Eigen::MatrixXd cur = current.cast<double>(), buf = buffer.cast<double>();
  Eigen::MatrixXd out(cur.rows(), buf.rows());
  for (Eigen::Index j = 0; j < cur.rows(); ++j) {
    for (Eigen::Index i = 0; i < buf.rows(); ++i) out(j, i) = -(cur.row(j) - buf.row(i)).squaredNorm() / temperature;
    const double m = out.row(j).maxCoeff();
    out.row(j) = (out.row(j).array() - m).exp();
    out.row(j) /= out.row(j).sum();
  }
  return out;
}

double ce_loss(const GtCorrespondence& gt, const Eigen::MatrixXd& inferred) {
  if (static_cast<std::size_t>(inferred.rows()) != gt.rows || static_cast<std::size_t>(inferred.cols()) != gt.cols) {
    throw InvalidInput("ce_loss: matrix sizes differ");
  }
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < gt.rows; ++j) {
    if (gt.match[j] < 0) continue;
    acc -= std::log(std::max(inferred(static_cast<Eigen::Index>(j), gt.match[j]), 1e-12));
    ++n;
  }
  if (n == 0) throw UndefinedLoss("ce_loss: every row is masked");
  return acc / static_cast<double>(n);
}

template <typename T>
Var<T> ce_loss_sum(Var<T> current, Var<T> buffer, const GtCorrespondence& gt, double temperature) {
  const std::size_t m = current.shape().at(0), b = buffer.shape().at(0);
  if (m != gt.rows || b != gt.cols) throw InvalidInput("ce_loss_sum: correspondence does not match embeddings");
  auto logits = tensor::scale(tensor::pairwise_sq_dist(current, buffer), -1.0 / temperature);
  auto logp = tensor::log_softmax_rows(logits);
  Tensor<T> onehot({m, b});
  for (std::size_t j = 0; j < m; ++j)
    if (gt.match[j] >= 0) onehot[j * b + static_cast<std::size_t>(gt.match[j])] = T(1);
  return tensor::scale(tensor::sum(tensor::mul(logp, current.tape().constant(std::move(onehot)))), -1.0);
}

template Var<float> ce_loss_sum<float>(Var<float>, Var<float>, const GtCorrespondence&, double);
template Var<double> ce_loss_sum<double>(Var<double>, Var<double>, const GtCorrespondence&, double);

void FrameBuffer::push(BufferEntry e) {
  if (!entries_.empty() && e.embeddings.cols() != entries_.front().embeddings.cols()) {
    throw InvalidInput("FrameBuffer: embedding width changed");
  }
  entries_.push_back(std::move(e));
  while (entries_.size() > capacity_) entries_.pop_front();
}

Matrix FrameBuffer::stacked_embeddings() const {
  if (entries_.empty()) return {};
  const auto rows = entries_.front().embeddings.rows();
  Matrix out(rows * static_cast<Eigen::Index>(entries_.size()), entries_.front().embeddings.cols());
  for (std::size_t i = 0; i < entries_.size(); ++i) out.middleRows(static_cast<Eigen::Index>(i) * rows, rows) = entries_[i].embeddings;
  return out;
}

Points FrameBuffer::stacked_points() const {
  if (entries_.empty()) return {};
  const auto rows = entries_.front().points.rows();
  Points out(rows * static_cast<Eigen::Index>(entries_.size()), 3);
  for (std::size_t i = 0; i < entries_.size(); ++i) out.middleRows(static_cast<Eigen::Index>(i) * rows, rows) = entries_[i].points;
  return out;
}

std::vector<char> FrameBuffer::stacked_valid() const {
  std::vector<char> out;
  for (const auto& e : entries_) out.insert(out.end(), e.valid.begin(), e.valid.end());
  return out;
}

Eigen::MatrixXd infer_correspondence(const EmbeddingGrid& current, const FrameBuffer& buffer, double temperature) {
  if (buffer.empty()) throw InvalidInput("infer_correspondence: empty buffer");
  return infer_correspondence(current.vectors, buffer.stacked_embeddings(), temperature);
}

std::vector<double> exclusivity_values(const Matrix& grid, double temperature) {
  const Eigen::MatrixXd g = grid.cast<double>();
  std::vector<double> out;
  for (Eigen::Index j = 0; j < g.rows(); ++j) {
    Eigen::VectorXd logits(g.rows());
    for (Eigen::Index i = 0; i < g.rows(); ++i) logits(i) = -(g.row(j) - g.row(i)).squaredNorm() / temperature;
    const double m = logits.maxCoeff();
    const double z = (logits.array() - m).exp().sum();
    out.push_back(1.0 - std::exp(logits(j) - m) / z);
  }
  return out;
}

double Histogram::mass_below(double x) const {
  if (total == 0) return 0;
  return static_cast<double>(std::count_if(values.begin(), values.end(), [x](double v) { return v < x; })) /
         static_cast<double>(total);
}

std::string Histogram::to_csv() const {
  std::ostringstream os;
  os << "bin_left,count\n";
  for (std::size_t b = 0; b < counts.size(); ++b) os << static_cast<double>(b) / counts.size() << ',' << counts[b] << '\n';
  return os.str();
}

Histogram exclusivity_histogram(std::span<const EmbeddingGrid> grids, double temperature) {
  Histogram h;
  for (const auto& g : grids) {
    for (double v : exclusivity_values(g.vectors, temperature)) {
      const auto bin = std::min<std::size_t>(kHistogramBins - 1, static_cast<std::size_t>(std::max(0.0, v) * kHistogramBins));
      ++h.counts[bin];
      h.values.push_back(v);
      ++h.total;
    }
  }
  return h;
}

}  // namespace baa::embednet
