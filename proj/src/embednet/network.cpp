#include <cmath>

#include "baa/common/error.hpp"
#include "baa/embednet/embednet.hpp"

namespace baa::embednet {

namespace {
constexpr double kReluGain = 1.4142135623730951;
}

template <typename T>
EmbedNet<T>::EmbedNet(const EmbedNetConfig& c, std::uint64_t seed) : config_(c) {
  if (c.levels < 1 || c.output_level >= c.levels || c.base_channels < 1 || c.embed_dim < 1) {
    throw InvalidInput("EmbedNet: invalid architecture config");
  }
  std::mt19937_64 rng(seed);
  auto ch = [&](std::size_t l) { return c.base_channels << l; };
  auto stage = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t stride) {
    return Stage{tensor::Conv2d<T>(name + ".conv", in, out, 3, {stride, 1}, false, kReluGain, rng),
                 tensor::BatchNorm<T>(name + ".bn", out)};
  };
  for (std::size_t l = 0; l < c.levels; ++l) {
    const std::string name = "enc" + std::to_string(l);
    const std::size_t in = l == 0 ? c.in_channels : ch(l - 1);
    encoder_.push_back({stage(name + ".a", in, ch(l), l == 0 ? 1 : 2), stage(name + ".b", ch(l), ch(l), 1)});
  }
  for (std::size_t l = c.levels - 1; l > c.output_level; --l) {
    const std::string name = "dec" + std::to_string(l - 1);
    up_.emplace_back(name + ".up", ch(l), ch(l - 1), rng);
    decoder_.push_back({stage(name + ".a", 2 * ch(l - 1), ch(l - 1), 1), stage(name + ".b", ch(l - 1), ch(l - 1), 1)});
  }
  head_ = tensor::Conv2d<T>("head", ch(c.output_level), c.embed_dim, 1, {1, 0}, true, 1.0, rng);
}

template <typename T>
Var<T> EmbedNet<T>::run(Tape<T>& tape, Block& b, Var<T> x, bool training, bool frozen) {
  for (Stage* s : {&b.first, &b.second}) x = tensor::relu(s->bn(tape, s->conv(tape, x, frozen), training, frozen));
  return x;
}

template <typename T>
Var<T> EmbedNet<T>::forward(Tape<T>& tape, Var<T> x, bool training, bool frozen) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[0] != config_.in_channels) {
    throw InvalidInput("EmbedNet: expected input [" + std::to_string(config_.in_channels) + ", N, H, W], got " +
                       tensor::to_string(s));
  }
  const std::size_t factor = std::size_t{1} << (config_.levels - 1);
  if (s[2] % factor != 0 || s[3] % factor != 0) {
    throw InvalidInput("EmbedNet: input resolution must be divisible by " + std::to_string(factor));
  }
  std::vector<Var<T>> skips;
  for (auto& b : encoder_) {
    x = run(tape, b, x, training, frozen);
    skips.push_back(x);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const std::size_t l = config_.levels - 1 - i;
    x = up_[i](tape, x, frozen);
    x = tensor::concat<T>({x, skips[l - 1]});
    x = run(tape, decoder_[i], x, training, frozen);
  }
  x = head_(tape, x, frozen);
  const auto& o = x.shape();
  x = tensor::reshape(x, {o[0], o[1] * o[2] * o[3]});
  return tensor::swap_leading(x);
}

template <typename T>
std::vector<Parameter<T>*> EmbedNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  auto add_block = [&](Block& b) {
    for (Stage* s : {&b.first, &b.second}) {
      s->conv.collect(out);
      s->bn.collect(out);
    }
  };
  for (auto& b : encoder_) add_block(b);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    up_[i].collect(out);
    add_block(decoder_[i]);
  }
  head_.collect(out);
  return out;
}

template <typename T>
std::vector<tensor::Buffer<T>> EmbedNet<T>::buffers() {
  std::vector<tensor::Buffer<T>> out;
  auto add_block = [&](Block& b) {
    b.first.bn.collect(out);
    b.second.bn.collect(out);
  };
  for (auto& b : encoder_) add_block(b);
  for (auto& b : decoder_) add_block(b);
  return out;
}

template class EmbedNet<float>;
template class EmbedNet<double>;

template <typename T>
Tensor<T> to_batch(std::span<const FrameSample* const> frames, std::size_t width, std::size_t height) {
  const std::size_t n = frames.size(), plane = width * height;
  Tensor<T> out({3, n, height, width});
  for (std::size_t f = 0; f < n; ++f) {
    const FrameSample& s = *frames[f];
    if (s.width != width || s.height != height || s.image.size() != plane * 3) {
      throw InvalidInput("to_batch: frame " + std::to_string(f) + " is " + std::to_string(s.width) + "x" +
                         std::to_string(s.height) + ", expected " + std::to_string(width) + "x" +
                         std::to_string(height));
    }
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) out[(c * n + f) * plane + p] = static_cast<T>(s.image[p * 3 + c]);
  }
  return out;
}

template Tensor<float> to_batch<float>(std::span<const FrameSample* const>, std::size_t, std::size_t);
template Tensor<double> to_batch<double>(std::span<const FrameSample* const>, std::size_t, std::size_t);

std::vector<EmbeddingGrid> embed(EmbedNet<float>& net, std::span<const FrameSample* const> frames) {
  std::vector<EmbeddingGrid> out;
  if (frames.empty()) return out;
  const std::size_t w = frames.front()->width, h = frames.front()->height;
  const std::size_t stride = net.stride(), cells = (w / stride) * (h / stride);
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < frames.size(); begin += kChunk) {
    const auto chunk = frames.subspan(begin, std::min(kChunk, frames.size() - begin));
    Tape<float> tape(false);
    const auto y = net.forward(tape, tape.constant(to_batch<float>(chunk, w, h)), false);
    const auto& v = y.value();
    const std::size_t dim = v.dim(1);
    for (std::size_t f = 0; f < chunk.size(); ++f) {
      EmbeddingGrid g;
      g.stride = stride;
      g.vectors = Eigen::Map<const Matrix>(v.data() + f * cells * dim, static_cast<Eigen::Index>(cells),
                                           static_cast<Eigen::Index>(dim));
      out.push_back(std::move(g));
    }
  }
  return out;
}

EmbeddingGrid embed(EmbedNet<float>& net, const FrameSample& frame) {
  const FrameSample* p = &frame;
  return std::move(embed(net, std::span<const FrameSample* const>(&p, 1)).front());
}

}  // namespace baa::embednet
