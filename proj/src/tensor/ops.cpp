#include "baa/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "baa/common/error.hpp"

namespace baa::tensor {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> as_mat(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  if (&a.tape() != &b.tape()) throw InvalidInput(std::string(op) + ": operands live on different tapes");
}

// Elementwise unary op with derivative expressed through (x, y).
template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F f, D dfdx) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const auto xid = x.id();
  return x.tape().record(std::move(out), {xid}, [xid, dfdx](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xid);
    const auto& yv = t.value(self);
    auto& gx = t.grad(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

template <typename T>
void accumulate(Tape<T>& t, std::size_t id, const Tensor<T>& g, T factor = T(1)) {
  if (!t.requires_grad(id)) return;
  auto& dst = t.grad(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
}

std::size_t inner_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 1; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b, "add");
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ai, g);
    accumulate(t, bi, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_tape(a, b, "sub");
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ai, g);
    accumulate(t, bi, g, T(-1));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b, "mul");
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ai);
    const auto& bv = t.value(bi);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, double s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = static_cast<T>(v * s);
  const auto ai = a.id();
  return a.tape().record(std::move(out), {ai}, [ai, s](Tape<T>& t, std::size_t self) {
    accumulate(t, ai, t.grad(self), static_cast<T>(s));
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, double s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = static_cast<T>(v + s);
  const auto ai = a.id();
  return a.tape().record(std::move(out), {ai}, [ai](Tape<T>& t, std::size_t self) {
    accumulate(t, ai, t.grad(self));
  });
}

template <typename T>
Var<T> add_row_vector(Var<T> x, Var<T> b) {
  same_tape(x, b, "add_row_vector");
  const auto& xs = x.shape();
  if (xs.size() != 2 || b.shape() != Shape{xs[1]}) {
    throw InvalidInput("add_row_vector: shape mismatch " + to_string(xs) + " vs " + to_string(b.shape()));
  }
  const std::size_t m = xs[0], n = xs[1];
  Tensor<T> out = x.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  const auto xi = x.id(), bi = b.id();
  return x.tape().record(std::move(out), {xi, bi}, [xi, bi, m, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, xi, g);
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  same_tape(a, b, "matmul");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw InvalidInput("matmul: shape mismatch " + to_string(as) + " vs " + to_string(bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor<T> out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), k, n);
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, m, k, n](Tape<T>& t, std::size_t self) {
    const auto g = as_mat(t.grad(self), m, n);
    if (t.requires_grad(ai)) {
      as_mat(t.grad(ai), m, k).noalias() += g * as_mat(t.value(bi), k, n).transpose();
    }
    if (t.requires_grad(bi)) {
      as_mat(t.grad(bi), k, n).noalias() += as_mat(t.value(ai), m, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> swap_leading(Var<T> x) {
  const auto& xs = x.shape();
  if (xs.size() < 2) throw InvalidInput("swap_leading: rank < 2 for shape " + to_string(xs));
  const std::size_t a = xs[0], b = xs[1];
  const std::size_t inner = numel(xs) / (a * b);
  Shape os = xs;
  std::swap(os[0], os[1]);
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(xv.data() + (i * b + j) * inner, inner, out.data() + (j * a + i) * inner);
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, a, b, inner](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        const T* src = g.data() + (j * a + i) * inner;
        T* dst = gx.data() + (i * b + j) * inner;
        for (std::size_t r = 0; r < inner; ++r) dst[r] += src[r];
      }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi](Tape<T>& t, std::size_t self) {
    accumulate(t, xi, t.grad(self));
  });
}

template <typename T>
Var<T> slice(Var<T> x, std::size_t begin, std::size_t end) {
  const auto& xs = x.shape();
  if (xs.empty() || begin > end || end > xs[0]) {
    throw InvalidInput("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") out of bounds for shape " + to_string(xs));
  }
  const std::size_t inner = inner_size(xs);
  Shape os = xs;
  os[0] = end - begin;
  Tensor<T> out(os);
  std::copy_n(x.value().data() + begin * inner, (end - begin) * inner, out.data());
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, begin, inner](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    T* dst = t.grad(xi).data() + begin * inner;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidInput("concat: no inputs");
  Shape os = parts[0].shape();
  if (os.empty()) throw InvalidInput("concat: scalar input");
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  const std::size_t inner = inner_size(os);
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat");
    Shape s = p.shape();
    if (s.empty() || inner_size(s) != inner || !std::equal(s.begin() + 1, s.end(), os.begin() + 1, os.end())) {
      throw InvalidInput("concat: shape mismatch " + to_string(os) + " vs " + to_string(s));
    }
    offsets.push_back(rows * inner);
    rows += s[0];
    ids.push_back(p.id());
  }
  os[0] = rows;
  Tensor<T> out(os);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    std::copy_n(v.data(), v.size(), out.data() + offsets[k]);
  }
  return parts[0].tape().record(std::move(out), ids, [ids, offsets](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gk = t.grad(ids[k]);
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offsets[k] + i];
    }
  });
}

template <typename T>
Var<T> detach(Var<T> x) {
  return x.tape().constant(x.value());
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, double slope) {
  const T s = static_cast<T>(slope);
  return unary(x, [s](T v) { return v > T(0) ? v : s * v; },
               [s](T v, T) { return v > T(0) ? T(1) : s; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(x,
               [](T v) {
                 return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
               },
               [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return unary(x,
               [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
               [](T v, T) {
                 return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
               });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> x, double floor) {
  const T f = static_cast<T>(floor);
  if (floor <= 0.0) {
    for (auto v : x.value().values())
      if (!(v > T(0))) throw InvalidInput("log: non-positive input without a floor");
  }
  return unary(x, [f](T v) { return std::log(std::max(v, f)); },
               [f](T v, T) { return v > f ? T(1) / v : T(0); });
}

template <typename T>
Var<T> clamp(Var<T> x, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  return unary(x, [l, h](T v) { return std::clamp(v, l, h); },
               [l, h](T v, T) { return (v >= l && v <= h) ? T(1) : T(0); });
}

template <typename T>
Var<T> sum(Var<T> x) {
  double acc = 0.0;
  for (auto v : x.value().values()) acc += v;
  const auto xi = x.id();
  return x.tape().record(Tensor<T>::scalar(static_cast<T>(acc)), {xi}, [xi](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(xi).storage()) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw InvalidInput("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

namespace {
void require_matrix(const Shape& s, const char* op) {
  if (s.size() != 2 || s[1] == 0) throw InvalidInput(std::string(op) + ": expected non-empty matrix, got " + to_string(s));
}
}  // namespace

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  require_matrix(x.shape(), "softmax_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const auto& xv = x.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * n;
    T* o = out.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
  }
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, m, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[i * n + j]) * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * static_cast<T>(g[i * n + j] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> x) {
  require_matrix(x.shape(), "log_softmax_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const auto& xv = x.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double lse = static_cast<double>(mx) + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(row[j] - lse);
  }
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, m, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        gx[i * n + j] += static_cast<T>(g[i * n + j] - std::exp(static_cast<double>(y[i * n + j])) * gs);
    }
  });
}

template <typename T>
Var<T> pairwise_sq_dist(Var<T> a, Var<T> b) {
  same_tape(a, b, "pairwise_sq_dist");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1]) {
    throw InvalidInput("pairwise_sq_dist: shape mismatch " + to_string(as) + " vs " + to_string(bs));
  }
  const std::size_t m = as[0], n = bs[0], c = as[1];
  Tensor<T> out({m, n});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double d = static_cast<double>(av[i * c + k]) - bv[j * c + k];
        acc += d * d;
      }
      out[i * n + j] = static_cast<T>(acc);
    }
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, m, n, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ai);
    const auto& bv = t.value(bi);
    const bool need_a = t.requires_grad(ai), need_b = t.requires_grad(bi);
    Tensor<T>* ga = need_a ? &t.grad(ai) : nullptr;
    Tensor<T>* gb = need_b ? &t.grad(bi) : nullptr;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T w = T(2) * g[i * n + j];
        if (w == T(0)) continue;
        for (std::size_t k = 0; k < c; ++k) {
          const T d = w * (av[i * c + k] - bv[j * c + k]);
          if (ga) (*ga)[i * c + k] += d;
          if (gb) (*gb)[j * c + k] -= d;
        }
      }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> b, Conv2dSpec spec) {
  same_tape(x, w, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[0] || ws[2] != ws[3]) {
    throw InvalidInput("conv2d: shape mismatch input " + to_string(xs) + " vs kernel " + to_string(ws));
  }
  if (spec.stride == 0) throw InvalidInput("conv2d: zero stride");
  const std::size_t ci = xs[0], nb = xs[1], h = xs[2], wd = xs[3];
  const std::size_t co = ws[0], k = ws[2], s = spec.stride, p = spec.pad;
  if (h + 2 * p < k || wd + 2 * p < k) {
    throw InvalidInput("conv2d: kernel " + to_string(ws) + " larger than padded input " + to_string(xs));
  }
  const std::size_t ho = (h + 2 * p - k) / s + 1, wo = (wd + 2 * p - k) / s + 1;
  const std::size_t krows = ci * k * k, ncols = nb * ho * wo;
  if (b && b->shape() != Shape{co}) {
    throw InvalidInput("conv2d: bias shape " + to_string(b->shape()) + " for " + std::to_string(co) + " outputs");
  }

  auto cols = std::make_shared<std::vector<T>>(krows * ncols, T(0));
  const auto& xv = x.value();
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols->data() + ((c * k + ky) * k + kx) * ncols;
        for (std::size_t n = 0; n < nb; ++n) {
          const T* img = xv.data() + (c * nb + n) * h * wd;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
            T* dst = row + (n * ho + oy) * wo;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
              if (ix >= 0 && ix < static_cast<long>(wd)) dst[ox] = img[iy * wd + ix];
            }
          }
        }
      }

  Tensor<T> out({co, nb, ho, wo});
  auto y = as_mat(out, co, ncols);
  const ConstMatMap<T> colm(cols->data(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(ncols));
  y.noalias() = as_mat(w.value(), co, krows) * colm;
  std::vector<std::size_t> inputs{x.id(), w.id()};
  if (b) {
    const auto& bv = b->value();
    for (std::size_t c = 0; c < co; ++c) y.row(c).array() += bv[c];
    inputs.push_back(b->id());
  }
  const auto xi = x.id(), wi = w.id();
  const std::optional<std::size_t> bi = b ? std::optional<std::size_t>(b->id()) : std::nullopt;
  if (!w.requires_grad()) cols.reset();  // only dW needs the unfolded input
  return x.tape().record(
      std::move(out), inputs,
      [=](Tape<T>& t, std::size_t self) {
        const auto g = as_mat(t.grad(self), co, ncols);
        if (bi && t.requires_grad(*bi)) {
          auto& gb = t.grad(*bi);
          for (std::size_t c = 0; c < co; ++c) gb[c] += static_cast<T>(g.row(c).template cast<double>().sum());
        }
        if (t.requires_grad(wi) && cols) {
          const ConstMatMap<T> colm(cols->data(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(ncols));
          as_mat(t.grad(wi), co, krows).noalias() += g * colm.transpose();
        }
        if (t.requires_grad(xi)) {
          RowMat<T> gcols = as_mat(t.value(wi), co, krows).transpose() * g;
          auto& gx = t.grad(xi);
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = gcols.data() + ((c * k + ky) * k + kx) * ncols;
                for (std::size_t n = 0; n < nb; ++n) {
                  T* img = gx.data() + (c * nb + n) * h * wd;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    const T* src = row + (n * ho + oy) * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
                      if (ix >= 0 && ix < static_cast<long>(wd)) img[iy * wd + ix] += src[ox];
                    }
                  }
                }
              }
        }
      });
}

template <typename T>
Var<T> conv_transpose2x2(Var<T> x, Var<T> w, std::optional<Var<T>> b) {
  same_tape(x, w, "conv_transpose2x2");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != xs[0] || ws[2] != 2 || ws[3] != 2) {
    throw InvalidInput("conv_transpose2x2: shape mismatch input " + to_string(xs) + " vs kernel " + to_string(ws));
  }
  const std::size_t ci = xs[0], nb = xs[1], h = xs[2], wd = xs[3], co = ws[1];
  const std::size_t npix = nb * h * wd;
  if (b && b->shape() != Shape{co}) {
    throw InvalidInput("conv_transpose2x2: bias shape " + to_string(b->shape()));
  }
  // z[(o,dy,dx), (n,y,x)] = sum_c w[c,(o,dy,dx)] * x[c,(n,y,x)]
  RowMat<T> z = as_mat(w.value(), ci, co * 4).transpose() * as_mat(x.value(), ci, npix);
  Tensor<T> out({co, nb, 2 * h, 2 * wd});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t d = 0; d < 4; ++d) {
      const std::size_t dy = d / 2, dx = d % 2;
      const T* src = z.data() + (o * 4 + d) * npix;
      const T bias = b ? b->value()[o] : T(0);
      for (std::size_t n = 0; n < nb; ++n)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < wd; ++xx)
            out[((o * nb + n) * 2 * h + 2 * y + dy) * 2 * wd + 2 * xx + dx] = src[(n * h + y) * wd + xx] + bias;
    }
  std::vector<std::size_t> inputs{x.id(), w.id()};
  if (b) inputs.push_back(b->id());
  const auto xi = x.id(), wi = w.id();
  const std::optional<std::size_t> bi = b ? std::optional<std::size_t>(b->id()) : std::nullopt;
  return x.tape().record(std::move(out), inputs, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    RowMat<T> gz(static_cast<Eigen::Index>(co * 4), static_cast<Eigen::Index>(npix));
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t d = 0; d < 4; ++d) {
        const std::size_t dy = d / 2, dx = d % 2;
        T* dst = gz.data() + (o * 4 + d) * npix;
        for (std::size_t n = 0; n < nb; ++n)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < wd; ++xx)
              dst[(n * h + y) * wd + xx] = g[((o * nb + n) * 2 * h + 2 * y + dy) * 2 * wd + 2 * xx + dx];
      }
    if (bi && t.requires_grad(*bi)) {
      auto& gb = t.grad(*bi);
      for (std::size_t o = 0; o < co; ++o)
        gb[o] += static_cast<T>(gz.middleRows(static_cast<Eigen::Index>(o * 4), 4).template cast<double>().sum());
    }
    if (t.requires_grad(wi)) {
      as_mat(t.grad(wi), ci, co * 4).noalias() += as_mat(t.value(xi), ci, npix) * gz.transpose();
    }
    if (t.requires_grad(xi)) {
      as_mat(t.grad(xi), ci, npix).noalias() += as_mat(t.value(wi), ci, co * 4) * gz;
    }
  });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& running, BatchNormSpec spec) {
  same_tape(x, gamma, "batch_norm");
  const auto& xs = x.shape();
  if (xs.size() < 2) throw InvalidInput("batch_norm: rank < 2 for shape " + to_string(xs));
  const std::size_t c = xs[0], len = numel(xs) / c;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw InvalidInput("batch_norm: affine shape " + to_string(gamma.shape()) + " for input " + to_string(xs));
  }
  if (running.mean.shape() != Shape{c}) {
    running.mean = Tensor<T>({c}, T(0));
    running.var = Tensor<T>({c}, T(1));
  }
  if (spec.training && len < 2) throw InvalidInput("batch_norm: need >= 2 values per channel in training mode");

  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(c);
  Tensor<T> out(xs);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* row = xv.data() + ch * len;
    double mu, var;
    if (spec.training) {
      double acc = 0.0;
      for (std::size_t i = 0; i < len; ++i) acc += row[i];
      mu = acc / static_cast<double>(len);
      double sq = 0.0;
      for (std::size_t i = 0; i < len; ++i) sq += (row[i] - mu) * (row[i] - mu);
      var = sq / static_cast<double>(len);
      const double unbiased = sq / static_cast<double>(len - 1);
      running.mean[ch] = static_cast<T>(spec.momentum * running.mean[ch] + (1.0 - spec.momentum) * mu);
      running.var[ch] = static_cast<T>(spec.momentum * running.var[ch] + (1.0 - spec.momentum) * unbiased);
    } else {
      mu = running.mean[ch];
      var = running.var[ch];
    }
    const double is = 1.0 / std::sqrt(var + spec.eps);
    (*inv_std)[ch] = static_cast<T>(is);
    for (std::size_t i = 0; i < len; ++i) {
      const T xh = static_cast<T>((row[i] - mu) * is);
      (*xhat)[ch * len + i] = xh;
      out[ch * len + i] = gv[ch] * xh + bv[ch];
    }
  }
  const auto xi = x.id(), gi = gamma.id(), bi = beta.id();
  const bool training = spec.training;
  return x.tape().record(std::move(out), {xi, gi, bi}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& gv = t.value(gi);
    const bool need_x = t.requires_grad(xi), need_g = t.requires_grad(gi), need_b = t.requires_grad(bi);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* gr = g.data() + ch * len;
      const T* xh = xhat->data() + ch * len;
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        sum_g += gr[i];
        sum_gx += static_cast<double>(gr[i]) * xh[i];
      }
      if (need_g) t.grad(gi)[ch] += static_cast<T>(sum_gx);
      if (need_b) t.grad(bi)[ch] += static_cast<T>(sum_g);
      if (!need_x) continue;
      T* gx = t.grad(xi).data() + ch * len;
      const double k = static_cast<double>(gv[ch]) * (*inv_std)[ch];
      if (training) {
        const double mg = sum_g / static_cast<double>(len), mgx = sum_gx / static_cast<double>(len);
        for (std::size_t i = 0; i < len; ++i) gx[i] += static_cast<T>(k * (gr[i] - mg - xh[i] * mgx));
      } else {
        for (std::size_t i = 0; i < len; ++i) gx[i] += static_cast<T>(k * gr[i]);
      }
    }
  });
}

#define BAA_INSTANTIATE_OPS(T)                                                                    \
  template Var<T> add(Var<T>, Var<T>);                                                            \
  template Var<T> sub(Var<T>, Var<T>);                                                            \
  template Var<T> mul(Var<T>, Var<T>);                                                            \
  template Var<T> scale(Var<T>, double);                                                          \
  template Var<T> add_scalar(Var<T>, double);                                                     \
  template Var<T> add_row_vector(Var<T>, Var<T>);                                                 \
  template Var<T> matmul(Var<T>, Var<T>);                                                         \
  template Var<T> swap_leading(Var<T>);                                                           \
  template Var<T> reshape(Var<T>, Shape);                                                         \
  template Var<T> slice(Var<T>, std::size_t, std::size_t);                                        \
  template Var<T> concat(const std::vector<Var<T>>&);                                             \
  template Var<T> detach(Var<T>);                                                                 \
  template Var<T> relu(Var<T>);                                                                   \
  template Var<T> leaky_relu(Var<T>, double);                                                     \
  template Var<T> sigmoid(Var<T>);                                                                \
  template Var<T> softplus(Var<T>);                                                               \
  template Var<T> exp(Var<T>);                                                                    \
  template Var<T> log(Var<T>, double);                                                            \
  template Var<T> clamp(Var<T>, double, double);                                                  \
  template Var<T> sum(Var<T>);                                                                    \
  template Var<T> mean(Var<T>);                                                                   \
  template Var<T> softmax_rows(Var<T>);                                                           \
  template Var<T> log_softmax_rows(Var<T>);                                                       \
  template Var<T> pairwise_sq_dist(Var<T>, Var<T>);                                               \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, Conv2dSpec);                      \
  template Var<T> conv_transpose2x2(Var<T>, Var<T>, std::optional<Var<T>>);                       \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, BatchNormSpec);

BAA_INSTANTIATE_OPS(float)
BAA_INSTANTIATE_OPS(double)

}  // namespace baa::tensor
