#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "eri/tensor.hpp"

namespace eri {

namespace detail {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

inline int normalize_axis(int axis, int rank) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw AxisOutOfRange("axis " + std::to_string(axis) + " for rank " + std::to_string(rank));
  return a;
}

inline Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

/// Maps every flat index of `a` onto the flat index of `b` that it reads
/// under trailing-axis broadcasting. Returns false when `b` does not
/// broadcast onto `a`.
inline bool broadcast_map(const Shape& a, const Shape& b, std::vector<Index>& map) {
  if (b.size() > a.size()) return false;
  std::size_t lead = a.size() - b.size();
  Shape bstride(a.size(), 0);
  Shape bs = row_major_strides(b);
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (b[k] == a[lead + k]) {
      bstride[lead + k] = bs[k];
    } else if (b[k] != 1) {
      return false;
    }
  }
  Index n = numel(a);
  map.resize(static_cast<std::size_t>(n));
  Shape counter(a.size(), 0);
  Index offset = 0;
  for (Index i = 0; i < n; ++i) {
    map[static_cast<std::size_t>(i)] = offset;
    for (int k = static_cast<int>(a.size()) - 1; k >= 0; --k) {
      if (++counter[k] < a[k]) {
        offset += bstride[k];
        break;
      }
      offset -= bstride[k] * (a[k] - 1);
      counter[k] = 0;
    }
  }
  return true;
}

enum class Binary { Add, Sub, Mul, Div };

inline const char* binary_name(Binary kind) {
  switch (kind) {
    case Binary::Add: return "add";
    case Binary::Sub: return "sub";
    case Binary::Mul: return "mul";
    case Binary::Div: return "div";
  }
  return "?";
}

template <typename T>
Tensor<T> binary(Binary kind, const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  std::vector<Index> map;
  if (!same && !broadcast_map(a.shape(), b.shape(), map)) {
    throw ShapeMismatch(std::string(binary_name(kind)) + ": " + to_string(b.shape()) + " does not broadcast to " +
                        to_string(a.shape()));
  }
  const Vec<T>& x = a.data();
  Vec<T> bb;
  if (same) {
    bb = b.data();
  } else {
    bb.resize(x.size());
    for (Index i = 0; i < x.size(); ++i) bb[i] = b.data()[map[static_cast<std::size_t>(i)]];
  }
  Vec<T> out;
  switch (kind) {
    case Binary::Add: out = x + bb; break;
    case Binary::Sub: out = x - bb; break;
    case Binary::Mul: out = x.cwiseProduct(bb); break;
    case Binary::Div: out = x.cwiseQuotient(bb); break;
  }
  auto an = a.node();
  auto bn = b.node();
  return record<T>(binary_name(kind), a.shape(), std::move(out), {an, bn},
                   [an, bn, kind, map = std::move(map), bb = std::move(bb)](Node<T>& self) {
                     const Vec<T>& g = self.grad;
                     if (an->requires_grad) {
                       Vec<T>& ga = an->grad_buffer();
                       switch (kind) {
                         case Binary::Add:
                         case Binary::Sub: ga += g; break;
                         case Binary::Mul: ga += g.cwiseProduct(bb); break;
                         case Binary::Div: ga += g.cwiseQuotient(bb); break;
                       }
                     }
                     if (bn->requires_grad) {
                       Vec<T> local;
                       switch (kind) {
                         case Binary::Add: local = g; break;
                         case Binary::Sub: local = -g; break;
                         case Binary::Mul: local = g.cwiseProduct(an->value); break;
                         case Binary::Div:
                           local = -(g.cwiseProduct(an->value)).cwiseQuotient(bb.cwiseProduct(bb));
                           break;
                       }
                       Vec<T>& gb = bn->grad_buffer();
                       if (map.empty()) {
                         gb += local;
                       } else {
                         for (Index i = 0; i < local.size(); ++i) gb[map[static_cast<std::size_t>(i)]] += local[i];
                       }
                     }
                   });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* name, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  Vec<T> out = x.data().unaryExpr(fwd);
  auto xn = x.node();
  return record<T>(name, x.shape(), std::move(out), {xn}, [xn, deriv](Node<T>& self) {
    Vec<T>& gx = xn->grad_buffer();
    for (Index i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xn->value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(detail::Binary::Add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(detail::Binary::Sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(detail::Binary::Mul, a, b); }
/// IEEE semantics: division by zero yields inf/NaN; backward reports it.
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(detail::Binary::Div, a, b); }

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  auto xn = x.node();
  Vec<T> out = x.data().array() + s;
  return detail::record<T>("add_scalar", x.shape(), std::move(out), {xn},
                           [xn](Node<T>& self) { xn->grad_buffer() += self.grad; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  auto xn = x.node();
  Vec<T> out = x.data() * s;
  return detail::record<T>("mul_scalar", x.shape(), std::move(out), {xn},
                           [xn, s](Node<T>& self) { xn->grad_buffer() += self.grad * s; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& x, T s) { return add_scalar(x, s); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& x, T s) { return add_scalar(x, -s); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& x, T s) { return mul_scalar(x, s); }
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& x) { return mul_scalar(x, s); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& x) { return mul_scalar(x, T(-1)); }
/// s - x
template <typename T>
Tensor<T> rsub_scalar(T s, const Tensor<T>& x) { return add_scalar(mul_scalar(x, T(-1)), s); }

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

enum class Activation { Relu, Sigmoid, Tanh };

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  // Subgradient at 0 is 0.
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// Logistic function. Results are kept strictly inside (0,1) so downstream
/// logs and range contracts hold even where the exact value would round.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  return detail::unary<T>(
      "sigmoid", x,
      [lo, hi](T v) {
        T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        return std::clamp(s, lo, hi);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  switch (kind) {
    case Activation::Relu: return relu(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return tanh(x);
  }
  return x;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// log(1 + e^x), evaluated without overflow.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary<T>(
      "softplus", x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); });
}

namespace detail {

template <typename T>
void softmax_rows(const Vec<T>& x, Index rows, Index cols, Vec<T>& soft, Vec<T>* log_soft) {
  soft.resize(x.size());
  if (log_soft) log_soft->resize(x.size());
  for (Index r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cols;
    T m = *std::max_element(in, in + cols);
    T total = 0;
    for (Index c = 0; c < cols; ++c) total += std::exp(in[c] - m);
    T log_total = std::log(total);
    for (Index c = 0; c < cols; ++c) {
      T ls = in[c] - m - log_total;
      soft[r * cols + c] = std::exp(ls);
      if (log_soft) (*log_soft)[r * cols + c] = ls;
    }
  }
}

}  // namespace detail

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeMismatch("softmax needs rank >= 1");
  const Index cols = x.dim(-1);
  const Index rows = x.size() / cols;
  Vec<T> y;
  detail::softmax_rows<T>(x.data(), rows, cols, y, nullptr);
  auto xn = x.node();
  return detail::record<T>("softmax", x.shape(), std::move(y), {xn}, [xn, rows, cols](Node<T>& self) {
    Vec<T>& gx = xn->grad_buffer();
    for (Index r = 0; r < rows; ++r) {
      T dot = 0;
      for (Index c = 0; c < cols; ++c) dot += self.grad[r * cols + c] * self.value[r * cols + c];
      for (Index c = 0; c < cols; ++c)
        gx[r * cols + c] += self.value[r * cols + c] * (self.grad[r * cols + c] - dot);
    }
  });
}

/// Log-softmax over the last axis.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeMismatch("log_softmax needs rank >= 1");
  const Index cols = x.dim(-1);
  const Index rows = x.size() / cols;
  Vec<T> soft, ls;
  detail::softmax_rows<T>(x.data(), rows, cols, soft, &ls);
  auto xn = x.node();
  return detail::record<T>("log_softmax", x.shape(), std::move(ls), {xn},
                           [xn, rows, cols, soft = std::move(soft)](Node<T>& self) {
                             Vec<T>& gx = xn->grad_buffer();
                             for (Index r = 0; r < rows; ++r) {
                               T total = 0;
                               for (Index c = 0; c < cols; ++c) total += self.grad[r * cols + c];
                               for (Index c = 0; c < cols; ++c)
                                 gx[r * cols + c] += self.grad[r * cols + c] - soft[r * cols + c] * total;
                             }
                           });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  using CMap = Eigen::Map<const RowMatrix<T>>;
  using MMap = Eigen::Map<RowMatrix<T>>;
  Vec<T> out(m * n);
  MMap(out.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
  auto an = a.node();
  auto bn = b.node();
  return detail::record<T>("matmul", {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node<T>& self) {
    CMap g(self.grad.data(), m, n);
    if (an->requires_grad)
      MMap(an->grad_buffer().data(), m, k).noalias() += g * CMap(bn->value.data(), k, n).transpose();
    if (bn->requires_grad)
      MMap(bn->grad_buffer().data(), k, n).noalias() += CMap(an->value.data(), m, k).transpose() * g;
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeMismatch("transpose expects rank 2, got " + to_string(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  using CMap = Eigen::Map<const RowMatrix<T>>;
  using MMap = Eigen::Map<RowMatrix<T>>;
  Vec<T> out(r * c);
  MMap(out.data(), c, r) = CMap(x.data().data(), r, c).transpose();
  auto xn = x.node();
  return detail::record<T>("transpose", {c, r}, std::move(out), {xn}, [xn, r, c](Node<T>& self) {
    MMap(xn->grad_buffer().data(), r, c) += CMap(self.grad.data(), c, r).transpose();
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvGeometry {
  Index batch, channels, height, width;
  Index filters, kh, kw;
  Index stride, pad;
  Index out_h, out_w;
  Index patch() const { return channels * kh * kw; }
  Index out_plane() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* image, const ConvGeometry& g, RowMatrix<T>& cols) {
  cols.resize(g.patch(), g.out_plane());
  for (Index c = 0; c < g.channels; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        T* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.out_plane();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          Index y = oy * g.stride - g.pad + i;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            Index x = ox * g.stride - g.pad + j;
            row[oy * g.out_w + ox] =
                (y >= 0 && y < g.height && x >= 0 && x < g.width) ? image[(c * g.height + y) * g.width + x] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const RowMatrix<T>& cols, const ConvGeometry& g, T* image) {
  for (Index c = 0; c < g.channels; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        const T* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.out_plane();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          Index y = oy * g.stride - g.pad + i;
          if (y < 0 || y >= g.height) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            Index x = ox * g.stride - g.pad + j;
            if (x >= 0 && x < g.width) image[(c * g.height + y) * g.width + x] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding.
/// input [B,C,H,W], kernel [F,C,kh,kw] -> [B,F,H',W'],
/// H' = floor((H + 2*padding - kh) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Index stride, Index padding) {
  if (input.rank() != 4 || kernel.rank() != 4)
    throw ShapeMismatch("conv2d expects rank-4 input and kernel, got " + to_string(input.shape()) + " and " +
                        to_string(kernel.shape()));
  detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
                         kernel.dim(3), stride, padding, 0, 0};
  if (kernel.dim(1) != g.channels)
    throw ShapeMismatch("conv2d channel mismatch: input " + to_string(input.shape()) + ", kernel " +
                        to_string(kernel.shape()));
  if (stride < 1 || padding < 0) throw ShapeMismatch("conv2d needs stride >= 1 and padding >= 0");
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding)
    throw ShapeMismatch("conv2d kernel " + to_string(kernel.shape()) + " larger than padded input " +
                        to_string(input.shape()));
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;

  using CMap = Eigen::Map<const RowMatrix<T>>;
  using MMap = Eigen::Map<RowMatrix<T>>;
  const Index in_plane = g.channels * g.height * g.width;
  const Index out_size = g.filters * g.out_plane();
  Vec<T> out(g.batch * out_size);
  CMap kmat(kernel.data().data(), g.filters, g.patch());
  RowMatrix<T> cols;
  for (Index b = 0; b < g.batch; ++b) {
    detail::im2col(input.data().data() + b * in_plane, g, cols);
    MMap(out.data() + b * out_size, g.filters, g.out_plane()).noalias() = kmat * cols;
  }
  auto in = input.node();
  auto kn = kernel.node();
  return detail::record<T>(
      "conv2d", {g.batch, g.filters, g.out_h, g.out_w}, std::move(out), {in, kn},
      [in, kn, g, in_plane, out_size](Node<T>& self) {
        CMap kmat(kn->value.data(), g.filters, g.patch());
        RowMatrix<T> cols;
        RowMatrix<T> dcols;
        for (Index b = 0; b < g.batch; ++b) {
          CMap gout(self.grad.data() + b * out_size, g.filters, g.out_plane());
          if (kn->requires_grad) {
            detail::im2col(in->value.data() + b * in_plane, g, cols);
            MMap(kn->grad_buffer().data(), g.filters, g.patch()).noalias() += gout * cols.transpose();
          }
          if (in->requires_grad) {
            dcols.noalias() = kmat.transpose() * gout;
            detail::col2im_add(dcols, g, in->grad_buffer().data() + b * in_plane);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

enum class Reduce { Sum, Mean, Max };

/// Reduces over `axes` (empty = all axes). With keepdims the reduced extents
/// stay as 1. Max routes its gradient to the first maximal element.
template <typename T>
Tensor<T> reduce(Reduce kind, const Tensor<T>& x, std::vector<int> axes = {}, bool keepdims = false) {
  const int r = x.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(r), axes.empty());
  for (int a : axes) {
    int n = detail::normalize_axis(a, r);
    if (reduced[static_cast<std::size_t>(n)]) throw AxisOutOfRange("axis " + std::to_string(a) + " repeated");
    reduced[static_cast<std::size_t>(n)] = true;
  }
  Shape kept(x.shape());
  Shape out_shape;
  for (int k = 0; k < r; ++k) {
    if (reduced[static_cast<std::size_t>(k)]) {
      kept[static_cast<std::size_t>(k)] = 1;
      if (keepdims) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.shape()[static_cast<std::size_t>(k)]);
    }
  }
  std::vector<Index> map;
  detail::broadcast_map(x.shape(), kept, map);
  const Index out_n = numel(kept);
  const Index count = out_n ? x.size() / out_n : 0;

  Vec<T> out;
  std::vector<Index> arg;
  if (kind == Reduce::Max) {
    out = Vec<T>::Constant(out_n, -std::numeric_limits<T>::infinity());
    arg.assign(static_cast<std::size_t>(out_n), -1);
    for (Index i = 0; i < x.size(); ++i) {
      Index o = map[static_cast<std::size_t>(i)];
      if (arg[static_cast<std::size_t>(o)] < 0 || x.data()[i] > out[o]) {
        out[o] = x.data()[i];
        arg[static_cast<std::size_t>(o)] = i;
      }
    }
  } else {
    out = Vec<T>::Zero(out_n);
    for (Index i = 0; i < x.size(); ++i) out[map[static_cast<std::size_t>(i)]] += x.data()[i];
    if (kind == Reduce::Mean) out /= static_cast<T>(count);
  }
  auto xn = x.node();
  const char* name = kind == Reduce::Sum ? "sum" : kind == Reduce::Mean ? "mean" : "max";
  return detail::record<T>(name, std::move(out_shape), std::move(out), {xn},
                           [xn, kind, count, map = std::move(map), arg = std::move(arg)](Node<T>& self) {
                             Vec<T>& gx = xn->grad_buffer();
                             if (kind == Reduce::Max) {
                               for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += self.grad[static_cast<Index>(o)];
                               return;
                             }
                             T scale = kind == Reduce::Mean ? T(1) / static_cast<T>(count) : T(1);
                             for (Index i = 0; i < gx.size(); ++i) gx[i] += self.grad[map[static_cast<std::size_t>(i)]] * scale;
                           });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::vector<int> axes = {}, bool keepdims = false) {
  return reduce(Reduce::Sum, x, std::move(axes), keepdims);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::vector<int> axes = {}, bool keepdims = false) {
  return reduce(Reduce::Mean, x, std::move(axes), keepdims);
}
template <typename T>
Tensor<T> max(const Tensor<T>& x, std::vector<int> axes = {}, bool keepdims = false) {
  return reduce(Reduce::Max, x, std::move(axes), keepdims);
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeMismatch("reshape " + to_string(x.shape()) + " to " + to_string(shape));
  auto xn = x.node();
  return detail::record<T>("reshape", std::move(shape), x.data(), {xn},
                           [xn](Node<T>& self) { xn->grad_buffer() += self.grad; });
}

/// Concatenates along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  const int r = parts.front().rank();
  const int ax = detail::normalize_axis(axis, r);
  Shape shape = parts.front().shape();
  Index total = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == r;
    for (int k = 0; ok && k < r; ++k)
      if (k != ax && p.shape()[static_cast<std::size_t>(k)] != shape[static_cast<std::size_t>(k)]) ok = false;
    if (!ok) throw ShapeMismatch("concat " + to_string(p.shape()) + " with " + to_string(shape) + " on axis " + std::to_string(axis));
    total += p.shape()[static_cast<std::size_t>(ax)];
  }
  shape[static_cast<std::size_t>(ax)] = total;
  Index outer = 1, inner = 1;
  for (int k = 0; k < ax; ++k) outer *= shape[static_cast<std::size_t>(k)];
  for (int k = ax + 1; k < r; ++k) inner *= shape[static_cast<std::size_t>(k)];

  Vec<T> out(numel(shape));
  std::vector<Index> widths;
  std::vector<detail::NodePtr<T>> nodes;
  for (const auto& p : parts) {
    widths.push_back(p.shape()[static_cast<std::size_t>(ax)] * inner);
    nodes.push_back(p.node());
  }
  const Index row = total * inner;
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (Index o = 0; o < outer; ++o)
      out.segment(o * row + offset, widths[i]) = parts[i].data().segment(o * widths[i], widths[i]);
    offset += widths[i];
  }
  auto parents = nodes;
  return detail::record<T>("concat", std::move(shape), std::move(out), std::move(parents),
                           [nodes, widths, outer, row](Node<T>&self) {
                             Index off = 0;
                             for (std::size_t i = 0; i < nodes.size(); ++i) {
                               if (nodes[i]->requires_grad) {
                                 Vec<T>& gp = nodes[i]->grad_buffer();
                                 for (Index o = 0; o < outer; ++o)
                                   gp.segment(o * widths[i], widths[i]) += self.grad.segment(o * row + off, widths[i]);
                               }
                               off += widths[i];
                             }
                           });
}

/// Contiguous range [start, start+length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, Index start, Index length) {
  const int r = x.rank();
  const int ax = detail::normalize_axis(axis, r);
  const Index extent = x.shape()[static_cast<std::size_t>(ax)];
  if (start < 0 || length < 0 || start + length > extent)
    throw ShapeMismatch("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") of extent " +
                        std::to_string(extent));
  Index outer = 1, inner = 1;
  for (int k = 0; k < ax; ++k) outer *= x.shape()[static_cast<std::size_t>(k)];
  for (int k = ax + 1; k < r; ++k) inner *= x.shape()[static_cast<std::size_t>(k)];
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(ax)] = length;
  const Index src_row = extent * inner, dst_row = length * inner, off = start * inner;
  Vec<T> out(outer * dst_row);
  for (Index o = 0; o < outer; ++o) out.segment(o * dst_row, dst_row) = x.data().segment(o * src_row + off, dst_row);
  auto xn = x.node();
  return detail::record<T>("slice", std::move(shape), std::move(out), {xn},
                           [xn, outer, src_row, dst_row, off](Node<T>& self) {
                             Vec<T>& gx = xn->grad_buffer();
                             for (Index o = 0; o < outer; ++o)
                               gx.segment(o * src_row + off, dst_row) += self.grad.segment(o * dst_row, dst_row);
                           });
}

/// Picks rows (entries along axis 0) by index; repeated indices accumulate
/// their gradients.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<Index>& rows) {
  if (x.rank() < 1) throw ShapeMismatch("gather_rows needs rank >= 1");
  const Index n = x.dim(0);
  const Index width = n ? x.size() / n : 0;
  Shape shape = x.shape();
  shape[0] = static_cast<Index>(rows.size());
  Vec<T> out(static_cast<Index>(rows.size()) * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n) throw ShapeMismatch("gather_rows index " + std::to_string(rows[i]) + " out of " + std::to_string(n));
    out.segment(static_cast<Index>(i) * width, width) = x.data().segment(rows[i] * width, width);
  }
  auto xn = x.node();
  return detail::record<T>("gather_rows", std::move(shape), std::move(out), {xn}, [xn, rows, width](Node<T>& self) {
    Vec<T>& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i)
      gx.segment(rows[i] * width, width) += self.grad.segment(static_cast<Index>(i) * width, width);
  });
}

}  // namespace eri
