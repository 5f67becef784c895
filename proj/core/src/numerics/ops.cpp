#include "twm/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace twm {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;

// out[c] += sum_r x[r, c], rows in order. Eigen's colwise reduction peels by
// buffer alignment, which made results depend on heap addresses.
template <typename T>
void sum_rows(const T* x, std::int64_t rows, std::int64_t cols, T* out) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[c] += x[r * cols + c];
}

template <typename T>
CMap<T> cmat(const std::vector<T>& v, std::int64_t rows, std::int64_t cols, std::int64_t offset = 0) {
  return CMap<T>(v.data() + offset, rows, cols);
}
template <typename T>
Map<T> mat(std::vector<T>& v, std::int64_t rows, std::int64_t cols, std::int64_t offset = 0) {
  return Map<T>(v.data() + offset, rows, cols);
}

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ConfigError(std::string(op) + ": " + what);
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
bool wants_grad(const TensorNode<T>& self, std::size_t i) {
  return self.inputs[i]->requires_grad;
}

// y = f(x) element-wise, dy/dx = df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  const auto& xd = x.node().data;
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return detail::make_result<T>(op, x.shape(), std::move(out), {x}, [df](TensorNode<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in.data[i], self.data[i]);
  });
}

std::int64_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::int64_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

int normalize_axis(int axis, int ndim, const char* op) {
  if (axis < 0) axis += ndim;
  require(axis >= 0 && axis < ndim, op, "axis out of range");
  return axis;
}

}  // namespace

// ---------------------------------------------------------------- element-wise

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary<T>("neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary<T>(
      "silu", x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary<T>(
      "softplus", x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.node().data);
  const auto& bd = b.node().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      auto& g = self.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.node().data);
  const auto& bd = b.node().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    if (wants_grad(self, 0)) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.node().data);
  const auto& bd = b.node().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.data[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.data[i];
    }
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row) {
  require(x.ndim() >= 1 && row.ndim() == 1 && row.dim(0) == x.dim(-1), "add_row",
          "row " + shape_str(row.shape()) + " does not match " + shape_str(x.shape()));
  const std::int64_t n = row.dim(0);
  std::vector<T> out(x.node().data);
  const auto& rd = row.node().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rd[i % n];
  return detail::make_result<T>("add_row", x.shape(), std::move(out), {x, row}, [n](TensorNode<T>& self) {
    if (wants_grad(self, 0)) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary<T>("add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return detail::make_result<T>("sum", {}, {total}, {x}, [](TensorNode<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean", "empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_last(const Tensor<T>& x) {
  require(x.ndim() >= 1, "sum_last", "scalar input");
  const std::int64_t n = x.dim(-1);
  const std::int64_t rows = n == 0 ? 0 : x.numel() / n;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<T> out(static_cast<std::size_t>(rows), T(0));
  const auto& xd = x.node().data;
  for (std::int64_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (std::int64_t c = 0; c < n; ++c) acc += xd[r * n + c];
    out[r] = acc;
  }
  return detail::make_result<T>("sum_last", shape, std::move(out), {x}, [n, rows](TensorNode<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < n; ++c) g[r * n + c] += self.grad[r];
  });
}

// ---------------------------------------------------------------- linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul",
          shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  mat(out, m, n).noalias() = cmat(a.node().data, m, k) * cmat(b.node().data, k, n);
  return detail::make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    auto dy = cmat(self.grad, m, n);
    if (an.requires_grad) mat(an.grad_buffer(), m, k).noalias() += dy * cmat(bn.data, k, n).transpose();
    if (bn.requires_grad) mat(bn.grad_buffer(), k, n).noalias() += cmat(an.data, m, k).transpose() * dy;
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.ndim() == 2 && x.ndim() >= 1 && x.dim(-1) == weight.dim(0), "linear",
          shape_str(x.shape()) + " with weight " + shape_str(weight.shape()));
  const auto in = weight.dim(0), outd = weight.dim(1);
  const auto rows = x.numel() / in;
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.ndim() == 1 && bias.dim(0) == outd, "linear", "bias shape " + shape_str(bias.shape()));
  Shape shape(x.shape());
  shape.back() = outd;
  std::vector<T> out(static_cast<std::size_t>(rows * outd));
  auto y = mat(out, rows, outd);
  y.noalias() = cmat(x.node().data, rows, in) * cmat(weight.node().data, in, outd);
  if (has_bias) y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.node().data.data(), outd);
  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result<T>("linear", shape, std::move(out), inputs, [in, outd, rows](TensorNode<T>& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    auto dy = cmat(self.grad, rows, outd);
    if (xn.requires_grad) mat(xn.grad_buffer(), rows, in).noalias() += dy * cmat(wn.data, in, outd).transpose();
    if (wn.requires_grad) mat(wn.grad_buffer(), in, outd).noalias() += cmat(xn.data, rows, in).transpose() * dy;
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      sum_rows(self.grad.data(), rows, outd, self.inputs[2]->grad_buffer().data());
    }
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0), "bmm",
          shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const auto n = transpose_b ? b.dim(1) : b.dim(2);
  require((transpose_b ? b.dim(2) : b.dim(1)) == k, "bmm", "inner dimension mismatch");
  std::vector<T> out(static_cast<std::size_t>(batch * m * n));
  const auto& ad = a.node().data;
  const auto& bd = b.node().data;
  for (std::int64_t i = 0; i < batch; ++i) {
    auto am = cmat(ad, m, k, i * m * k);
    if (transpose_b)
      mat(out, m, n, i * m * n).noalias() = am * cmat(bd, n, k, i * n * k).transpose();
    else
      mat(out, m, n, i * m * n).noalias() = am * cmat(bd, k, n, i * k * n);
  }
  return detail::make_result<T>(
      "bmm", {batch, m, n}, std::move(out), {a, b}, [batch, m, k, n, transpose_b](TensorNode<T>& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        for (std::int64_t i = 0; i < batch; ++i) {
          auto dy = cmat(self.grad, m, n, i * m * n);
          if (an.requires_grad) {
            auto ga = mat(an.grad_buffer(), m, k, i * m * k);
            if (transpose_b)
              ga.noalias() += dy * cmat(bn.data, n, k, i * n * k);
            else
              ga.noalias() += dy * cmat(bn.data, k, n, i * k * n).transpose();
          }
          if (bn.requires_grad) {
            if (transpose_b)
              mat(bn.grad_buffer(), n, k, i * n * k).noalias() += dy.transpose() * cmat(an.data, m, k, i * m * k);
            else
              mat(bn.grad_buffer(), k, n, i * k * n).noalias() += cmat(an.data, m, k, i * m * k).transpose() * dy;
          }
        }
      });
}

// ---------------------------------------------------------------- shapes

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  return detail::make_result<T>("reshape", std::move(shape), x.node().data, {x}, [](TensorNode<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const int nd = x.ndim();
  require(static_cast<int>(axes.size()) == nd, "permute", "axis count mismatch");
  std::vector<int> seen(static_cast<std::size_t>(nd), 0);
  for (int a : axes) {
    require(a >= 0 && a < nd && !seen[static_cast<std::size_t>(a)], "permute", "invalid axis order");
    seen[static_cast<std::size_t>(a)] = 1;
  }
  const Shape& in_shape = x.shape();
  Shape out_shape(static_cast<std::size_t>(nd));
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(nd), 1);
  for (int i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  // Stride in the input for each output axis.
  std::vector<std::int64_t> src_strides(static_cast<std::size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  const auto total = x.numel();
  std::vector<std::int64_t> src_index(static_cast<std::size_t>(total));
  std::vector<std::int64_t> counter(static_cast<std::size_t>(nd), 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < total; ++i) {
    src_index[i] = src;
    for (int d = nd - 1; d >= 0; --d) {
      if (++counter[d] < out_shape[d]) {
        src += src_strides[d];
        break;
      }
      src -= src_strides[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  const auto& xd = x.node().data;
  std::vector<T> out(static_cast<std::size_t>(total));
  for (std::int64_t i = 0; i < total; ++i) out[i] = xd[src_index[i]];
  return detail::make_result<T>("permute", out_shape, std::move(out), {x},
                                [src_index = std::move(src_index)](TensorNode<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::size_t i = 0; i < src_index.size(); ++i) g[src_index[i]] += self.grad[i];
                                });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  require(!xs.empty(), "concat", "no inputs");
  const int nd = xs[0].ndim();
  axis = normalize_axis(axis, nd, "concat");
  Shape shape = xs[0].shape();
  std::int64_t total_axis = 0;
  for (const auto& x : xs) {
    require(x.ndim() == nd, "concat", "rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis) require(x.shape()[d] == shape[d], "concat", "shape mismatch " + shape_str(x.shape()));
    total_axis += x.shape()[axis];
  }
  shape[axis] = total_axis;
  const auto outer = prod(shape, 0, static_cast<std::size_t>(axis));
  const auto inner = prod(shape, static_cast<std::size_t>(axis) + 1, shape.size());
  std::vector<T> out(static_cast<std::size_t>(shape_numel(shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& x : xs) {
    const auto len = x.shape()[axis] * inner;
    const auto& xd = x.node().data;
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(xd.begin() + o * len, len, out.begin() + o * total_axis * inner + offset);
    offsets.push_back(offset);
    offset += len;
  }
  return detail::make_result<T>(
      "concat", shape, std::move(out), xs, [offsets, outer, inner, total_axis, axis](TensorNode<T>& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          auto& in = *self.inputs[k];
          if (!in.requires_grad) continue;
          const auto len = in.shape[axis] * inner;
          auto& g = in.grad_buffer();
          for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t j = 0; j < len; ++j) g[o * len + j] += self.grad[o * total_axis * inner + offsets[k] + j];
        }
      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.ndim(), "slice");
  const auto extent = x.shape()[axis];
  require(start >= 0 && length >= 0 && start + length <= extent, "slice", "range out of bounds");
  Shape shape = x.shape();
  shape[axis] = length;
  const auto outer = prod(shape, 0, static_cast<std::size_t>(axis));
  const auto inner = prod(shape, static_cast<std::size_t>(axis) + 1, shape.size());
  std::vector<T> out(static_cast<std::size_t>(outer * length * inner));
  const auto& xd = x.node().data;
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(xd.begin() + (o * extent + start) * inner, length * inner, out.begin() + o * length * inner);
  return detail::make_result<T>("slice", shape, std::move(out), {x},
                                [outer, inner, extent, start, length](TensorNode<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::int64_t o = 0; o < outer; ++o)
                                    for (std::int64_t j = 0; j < length * inner; ++j)
                                      g[(o * extent + start) * inner + j] += self.grad[o * length * inner + j];
                                });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, int axis, std::span<const std::int64_t> index) {
  axis = normalize_axis(axis, x.ndim(), "index_select");
  const auto extent = x.shape()[axis];
  for (auto i : index) require(i >= 0 && i < extent, "index_select", "index out of range");
  Shape shape = x.shape();
  shape[axis] = static_cast<std::int64_t>(index.size());
  const auto outer = prod(shape, 0, static_cast<std::size_t>(axis));
  const auto inner = prod(shape, static_cast<std::size_t>(axis) + 1, shape.size());
  const auto n = static_cast<std::int64_t>(index.size());
  std::vector<T> out(static_cast<std::size_t>(outer * n * inner));
  const auto& xd = x.node().data;
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < n; ++j)
      std::copy_n(xd.begin() + (o * extent + index[j]) * inner, inner, out.begin() + (o * n + j) * inner);
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return detail::make_result<T>("index_select", shape, std::move(out), {x},
                                [idx = std::move(idx), outer, inner, extent](TensorNode<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  const auto n = static_cast<std::int64_t>(idx.size());
                                  for (std::int64_t o = 0; o < outer; ++o)
                                    for (std::int64_t j = 0; j < n; ++j)
                                      for (std::int64_t c = 0; c < inner; ++c)
                                        g[(o * extent + idx[j]) * inner + c] += self.grad[(o * n + j) * inner + c];
                                });
}

// ---------------------------------------------------------------- nn primitives

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require(x.ndim() >= 1, "layer_norm", "scalar input");
  const auto n = x.dim(-1);
  const auto rows = x.numel() / n;
  if (gain.defined()) require(gain.numel() == n, "layer_norm", "gain size");
  if (bias.defined()) require(bias.numel() == n, "layer_norm", "bias size");
  const auto& xd = x.node().data;
  std::vector<T> out(xd.size());
  std::vector<T> xhat(xd.size());
  std::vector<T> rstd(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * n;
    T mu = T(0);
    for (std::int64_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::int64_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::int64_t c = 0; c < n; ++c) {
      const T h = (row[c] - mu) * rs;
      xhat[r * n + c] = h;
      T y = h;
      if (gain.defined()) y *= gain.node().data[c];
      if (bias.defined()) y += bias.node().data[c];
      out[r * n + c] = y;
    }
  }
  std::vector<Tensor<T>> inputs{x};
  const bool has_gain = gain.defined(), has_bias = bias.defined();
  if (has_gain) inputs.push_back(gain);
  if (has_bias) inputs.push_back(bias);
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), inputs,
      [n, rows, has_gain, has_bias, xhat = std::move(xhat), rstd = std::move(rstd)](TensorNode<T>& self) {
        auto& xn = *self.inputs[0];
        TensorNode<T>* gn = has_gain ? self.inputs[1].get() : nullptr;
        TensorNode<T>* bn = has_bias ? self.inputs[has_gain ? 2 : 1].get() : nullptr;
        std::vector<T> dxhat(static_cast<std::size_t>(n));
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* dy = self.grad.data() + r * n;
          const T* h = xhat.data() + r * n;
          T mean_d = T(0), mean_dh = T(0);
          for (std::int64_t c = 0; c < n; ++c) {
            dxhat[c] = gn ? dy[c] * gn->data[c] : dy[c];
            mean_d += dxhat[c];
            mean_dh += dxhat[c] * h[c];
          }
          mean_d /= static_cast<T>(n);
          mean_dh /= static_cast<T>(n);
          if (xn.requires_grad) {
            auto& g = xn.grad_buffer();
            for (std::int64_t c = 0; c < n; ++c) g[r * n + c] += rstd[r] * (dxhat[c] - mean_d - h[c] * mean_dh);
          }
          if (gn && gn->requires_grad) {
            auto& g = gn->grad_buffer();
            for (std::int64_t c = 0; c < n; ++c) g[c] += dy[c] * h[c];
          }
          if (bn && bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::int64_t c = 0; c < n; ++c) g[c] += dy[c];
          }
        }
      });
}

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  require(x.ndim() >= 1, "softmax_last", "scalar input");
  const auto n = x.dim(-1);
  const auto rows = x.numel() / n;
  const auto& xd = x.node().data;
  std::vector<T> out(xd.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * n;
    T mx = *std::max_element(row, row + n);
    T z = T(0);
    for (std::int64_t c = 0; c < n; ++c) z += (out[r * n + c] = std::exp(row[c] - mx));
    for (std::int64_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  return detail::make_result<T>("softmax", x.shape(), std::move(out), {x}, [n, rows](TensorNode<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T dot = T(0);
      for (std::int64_t c = 0; c < n; ++c) dot += dy[c] * y[c];
      for (std::int64_t c = 0; c < n; ++c) g[r * n + c] += y[c] * (dy[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax_last(const Tensor<T>& x) {
  require(x.ndim() >= 1, "log_softmax_last", "scalar input");
  const auto n = x.dim(-1);
  const auto rows = x.numel() / n;
  const auto& xd = x.node().data;
  std::vector<T> out(xd.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * n;
    T mx = *std::max_element(row, row + n);
    T z = T(0);
    for (std::int64_t c = 0; c < n; ++c) z += std::exp(row[c] - mx);
    const T lse = mx + std::log(z);
    for (std::int64_t c = 0; c < n; ++c) out[r * n + c] = row[c] - lse;
  }
  return detail::make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [n, rows](TensorNode<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T total = T(0);
      for (std::int64_t c = 0; c < n; ++c) total += dy[c];
      for (std::int64_t c = 0; c < n; ++c) g[r * n + c] += dy[c] - std::exp(y[c]) * total;
    }
  });
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> visible) {
  require(x.ndim() >= 2, "masked_softmax", "needs [..., Tq, Tk]");
  const auto tq = x.dim(-2), tk = x.dim(-1);
  require(static_cast<std::int64_t>(visible.size()) == tq * tk, "masked_softmax",
          "mask has " + std::to_string(visible.size()) + " entries for " + shape_str(x.shape()));
  const auto rows = x.numel() / tk;
  const auto& xd = x.node().data;
  std::vector<T> out(xd.size(), T(0));
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::uint8_t* vis = visible.data() + (r % tq) * tk;
    const T* row = xd.data() + r * tk;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t c = 0; c < tk; ++c)
      if (vis[c]) mx = std::max(mx, row[c]);
    if (mx == -std::numeric_limits<T>::infinity()) continue;
    T z = T(0);
    for (std::int64_t c = 0; c < tk; ++c)
      if (vis[c]) z += (out[r * tk + c] = std::exp(row[c] - mx));
    for (std::int64_t c = 0; c < tk; ++c) out[r * tk + c] /= z;
  }
  return detail::make_result<T>("masked_softmax", x.shape(), std::move(out), {x}, [tk, rows](TensorNode<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * tk;
      const T* dy = self.grad.data() + r * tk;
      T dot = T(0);
      for (std::int64_t c = 0; c < tk; ++c) dot += dy[c] * y[c];
      for (std::int64_t c = 0; c < tk; ++c) g[r * tk + c] += y[c] * (dy[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> rel_gather(const Tensor<T>& x, std::span<const std::int64_t> index, std::int64_t keys) {
  require(x.ndim() >= 2, "rel_gather", "needs [..., Tq, R]");
  const auto tq = x.dim(-2), r = x.dim(-1);
  require(static_cast<std::int64_t>(index.size()) == tq * keys, "rel_gather", "index size");
  for (auto i : index) require(i >= -1 && i < r, "rel_gather", "index out of range");
  const auto batch = x.numel() / (tq * r);
  Shape shape = x.shape();
  shape.back() = keys;
  const auto& xd = x.node().data;
  std::vector<T> out(static_cast<std::size_t>(batch * tq * keys), T(0));
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t q = 0; q < tq; ++q)
      for (std::int64_t k = 0; k < keys; ++k) {
        const auto src = index[q * keys + k];
        if (src >= 0) out[(b * tq + q) * keys + k] = xd[(b * tq + q) * r + src];
      }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return detail::make_result<T>("rel_gather", shape, std::move(out), {x},
                                [idx = std::move(idx), batch, tq, r, keys](TensorNode<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::int64_t b = 0; b < batch; ++b)
                                    for (std::int64_t q = 0; q < tq; ++q)
                                      for (std::int64_t k = 0; k < keys; ++k) {
                                        const auto src = idx[q * keys + k];
                                        if (src >= 0) g[(b * tq + q) * r + src] += self.grad[(b * tq + q) * keys + k];
                                      }
                                });
}

template <typename T>
Tensor<T> gather_last(const Tensor<T>& x, std::span<const std::int64_t> index) {
  require(x.ndim() >= 1, "gather_last", "scalar input");
  const auto c = x.dim(-1);
  const auto rows = x.numel() / c;
  require(static_cast<std::int64_t>(index.size()) == rows, "gather_last", "index size");
  for (auto i : index) require(i >= 0 && i < c, "gather_last", "index out of range");
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  const auto& xd = x.node().data;
  std::vector<T> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) out[r] = xd[r * c + index[r]];
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return detail::make_result<T>("gather_last", shape, std::move(out), {x},
                                [idx = std::move(idx), c](TensorNode<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::size_t r = 0; r < idx.size(); ++r) g[r * c + idx[r]] += self.grad[r];
                                });
}

template <typename T>
Tensor<T> straight_through(const Tensor<T>& sample, const Tensor<T>& probs) {
  require_same_shape("straight_through", sample, probs);
  return detail::make_result<T>("straight_through", sample.shape(), sample.node().data, {sample, probs},
                                [](TensorNode<T>& self) {
                                  for (std::size_t k = 0; k < 2; ++k) {
                                    if (!wants_grad(self, k)) continue;
                                    auto& g = self.inputs[k]->grad_buffer();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                });
}

// ---------------------------------------------------------------- convolutions

namespace {

struct ConvGeometry {
  std::int64_t batch, channels, height, width, kernel, stride, padding, out_h, out_w;
  std::int64_t patch() const { return channels * kernel * kernel; }
  std::int64_t positions() const { return batch * out_h * out_w; }
};

// cols[(b*oh + y)*ow + x, (c*k + ky)*k + kx] = img[b, c, y*s - p + ky, x*s - p + kx]
template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* cols) {
  const auto patch = g.patch();
  for (std::int64_t b = 0; b < g.batch; ++b)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
        T* row = cols + ((b * g.out_h + oy) * g.out_w + ox) * patch;
        for (std::int64_t c = 0; c < g.channels; ++c)
          for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
            const auto iy = oy * g.stride - g.padding + ky;
            for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
              const auto ix = ox * g.stride - g.padding + kx;
              const bool inside = iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
              row[(c * g.kernel + ky) * g.kernel + kx] =
                  inside ? img[((b * g.channels + c) * g.height + iy) * g.width + ix] : T(0);
            }
          }
      }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* img) {
  const auto patch = g.patch();
  for (std::int64_t b = 0; b < g.batch; ++b)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
        const T* row = cols + ((b * g.out_h + oy) * g.out_w + ox) * patch;
        for (std::int64_t c = 0; c < g.channels; ++c)
          for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
            const auto iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.height) continue;
            for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
              const auto ix = ox * g.stride - g.padding + kx;
              if (ix < 0 || ix >= g.width) continue;
              img[((b * g.channels + c) * g.height + iy) * g.width + ix] += row[(c * g.kernel + ky) * g.kernel + kx];
            }
          }
      }
}

// [B, C, H*W] <-> [B*H*W, C]
template <typename T>
void nchw_to_rows(const T* src, T* dst, std::int64_t batch, std::int64_t channels, std::int64_t hw) {
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < channels; ++c)
      for (std::int64_t p = 0; p < hw; ++p) dst[(b * hw + p) * channels + c] = src[(b * channels + c) * hw + p];
}
template <typename T>
void rows_to_nchw(const T* src, T* dst, std::int64_t batch, std::int64_t channels, std::int64_t hw, bool accumulate) {
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < channels; ++c)
      for (std::int64_t p = 0; p < hw; ++p) {
        T& d = dst[(b * channels + c) * hw + p];
        d = (accumulate ? d : T(0)) + src[(b * hw + p) * channels + c];
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding) {
  require(x.ndim() == 4 && weight.ndim() == 4 && x.dim(1) == weight.dim(1) && weight.dim(2) == weight.dim(3), "conv2d",
          shape_str(x.shape()) + " with weight " + shape_str(weight.shape()));
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, padding, 0, 0};
  g.out_h = (g.height + 2 * padding - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel) / stride + 1;
  require(g.out_h > 0 && g.out_w > 0, "conv2d", "input smaller than kernel");
  const auto co = weight.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.numel() == co, "conv2d", "bias size");
  std::vector<T> cols(static_cast<std::size_t>(g.positions() * g.patch()));
  im2col(g, x.node().data.data(), cols.data());
  std::vector<T> rows(static_cast<std::size_t>(g.positions() * co));
  mat(rows, g.positions(), co).noalias() =
      cmat(cols, g.positions(), g.patch()) * cmat(weight.node().data, co, g.patch()).transpose();
  if (has_bias)
    mat(rows, g.positions(), co).rowwise() +=
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.node().data.data(), co);
  const auto hw = g.out_h * g.out_w;
  std::vector<T> out(static_cast<std::size_t>(g.batch * co * hw));
  rows_to_nchw(rows.data(), out.data(), g.batch, co, hw, false);
  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result<T>(
      "conv2d", {g.batch, co, g.out_h, g.out_w}, std::move(out), inputs,
      [g, co, hw, cols = std::move(cols)](TensorNode<T>& self) {
        std::vector<T> dy(static_cast<std::size_t>(g.positions() * co));
        nchw_to_rows(self.grad.data(), dy.data(), g.batch, co, hw);
        auto dym = cmat(dy, g.positions(), co);
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        if (wn.requires_grad)
          mat(wn.grad_buffer(), co, g.patch()).noalias() += dym.transpose() * cmat(cols, g.positions(), g.patch());
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          sum_rows(dy.data(), g.positions(), co, self.inputs[2]->grad_buffer().data());
        }
        if (xn.requires_grad) {
          std::vector<T> dcols(static_cast<std::size_t>(g.positions() * g.patch()));
          mat(dcols, g.positions(), g.patch()).noalias() = dym * cmat(wn.data, co, g.patch());
          col2im(g, dcols.data(), xn.grad_buffer().data());
        }
      });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                           int padding) {
  require(x.ndim() == 4 && weight.ndim() == 4 && x.dim(1) == weight.dim(0) && weight.dim(2) == weight.dim(3),
          "conv_transpose2d", shape_str(x.shape()) + " with weight " + shape_str(weight.shape()));
  const auto batch = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto co = weight.dim(1), k = weight.dim(2);
  const auto out_h = (h - 1) * stride - 2 * padding + k;
  const auto out_w = (w - 1) * stride - 2 * padding + k;
  require(out_h > 0 && out_w > 0, "conv_transpose2d", "empty output");
  // The output image plays the role of the conv2d input.
  ConvGeometry g{batch, co, out_h, out_w, k, stride, padding, h, w};
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.numel() == co, "conv_transpose2d", "bias size");
  std::vector<T> xrows(static_cast<std::size_t>(batch * h * w * ci));
  nchw_to_rows(x.node().data.data(), xrows.data(), batch, ci, h * w);
  std::vector<T> cols(static_cast<std::size_t>(g.positions() * g.patch()));
  mat(cols, g.positions(), g.patch()).noalias() =
      cmat(xrows, g.positions(), ci) * cmat(weight.node().data, ci, g.patch());
  std::vector<T> out(static_cast<std::size_t>(batch * co * out_h * out_w), T(0));
  col2im(g, cols.data(), out.data());
  if (has_bias) {
    const auto& bd = bias.node().data;
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t c = 0; c < co; ++c)
        for (std::int64_t p = 0; p < out_h * out_w; ++p) out[(b * co + c) * out_h * out_w + p] += bd[c];
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result<T>(
      "conv_transpose2d", {batch, co, out_h, out_w}, std::move(out), inputs,
      [g, ci, xrows = std::move(xrows)](TensorNode<T>& self) {
        std::vector<T> dcols(static_cast<std::size_t>(g.positions() * g.patch()));
        im2col(g, self.grad.data(), dcols.data());
        auto dc = cmat(dcols, g.positions(), g.patch());
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        if (wn.requires_grad)
          mat(wn.grad_buffer(), ci, g.patch()).noalias() += cmat(xrows, g.positions(), ci).transpose() * dc;
        if (xn.requires_grad) {
          std::vector<T> dx(static_cast<std::size_t>(g.positions() * ci));
          mat(dx, g.positions(), ci).noalias() = dc * cmat(wn.data, ci, g.patch()).transpose();
          rows_to_nchw(dx.data(), xn.grad_buffer().data(), g.batch, ci, g.out_h * g.out_w, true);
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->grad_buffer();
          const auto hw = g.height * g.width;
          for (std::int64_t b = 0; b < g.batch; ++b)
            for (std::int64_t c = 0; c < g.channels; ++c) {
              T acc = T(0);
              for (std::int64_t p = 0; p < hw; ++p) acc += self.grad[(b * g.channels + c) * hw + p];
              gb[c] += acc;
            }
        }
      });
}

// ---------------------------------------------------------------- instantiation

#define TWM_INSTANTIATE_OPS(T)                                                                             \
  template Tensor<T> neg(const Tensor<T>&);                                                                \
  template Tensor<T> exp(const Tensor<T>&);                                                                \
  template Tensor<T> log(const Tensor<T>&);                                                                \
  template Tensor<T> square(const Tensor<T>&);                                                             \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
  template Tensor<T> silu(const Tensor<T>&);                                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                               \
  template Tensor<T> softplus(const Tensor<T>&);                                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> mean(const Tensor<T>&);                                                               \
  template Tensor<T> sum_last(const Tensor<T>&);                                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                                   \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                           \
  template Tensor<T> slice(const Tensor<T>&, int, std::int64_t, std::int64_t);                             \
  template Tensor<T> index_select(const Tensor<T>&, int, std::span<const std::int64_t>);                   \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> softmax_last(const Tensor<T>&);                                                       \
  template Tensor<T> log_softmax_last(const Tensor<T>&);                                                   \
  template Tensor<T> masked_softmax(const Tensor<T>&, std::span<const std::uint8_t>);                      \
  template Tensor<T> rel_gather(const Tensor<T>&, std::span<const std::int64_t>, std::int64_t);            \
  template Tensor<T> gather_last(const Tensor<T>&, std::span<const std::int64_t>);                         \
  template Tensor<T> straight_through(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);               \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);

TWM_INSTANTIATE_OPS(float)
TWM_INSTANTIATE_OPS(double)

}  // namespace twm
