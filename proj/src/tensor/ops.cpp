#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>

#include "dtr/errors.hpp"
#include "dtr/tensor.hpp"

namespace dtr {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

[[noreturn]] void ThrowShapes(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + ShapeToString(a) +
                   " and " + ShapeToString(b));
}

// Index maps from every output element to the element of each operand it
// reads, for numpy-style broadcasting. Empty maps mean identity.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

std::vector<std::size_t> BroadcastIndex(const Shape& in, const Shape& out) {
  std::size_t n = NumElements(out);
  std::vector<std::size_t> index(n);
  std::size_t offset = out.size() - in.size();
  std::vector<std::size_t> in_strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_strides[i + offset] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  std::vector<std::size_t> counter(out.size(), 0);
  std::size_t position = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    index[flat] = position;
    for (std::size_t axis = out.size(); axis-- > 0;) {
      ++counter[axis];
      position += in_strides[axis];
      if (counter[axis] < out[axis]) break;
      position -= in_strides[axis] * counter[axis];
      counter[axis] = 0;
    }
  }
  return index;
}

Broadcast PlanBroadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    return plan;
  }
  std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) ThrowShapes(op, a, b);
    plan.out[i] = std::max(da, db);
    if (da == 0 || db == 0) plan.out[i] = 0;
  }
  if (a != plan.out) plan.a_index = BroadcastIndex(a, plan.out);
  if (b != plan.out) plan.b_index = BroadcastIndex(b, plan.out);
  return plan;
}

inline std::size_t Pick(const std::vector<std::size_t>& index, std::size_t i) {
  return index.empty() ? i : index[i];
}

// Shared driver for binary elementwise primitives. `forward(a, b)` gives the
// value; `da(a, b, out)` and `db(a, b, out)` give local partial derivatives.
template <typename Forward, typename DerivA, typename DerivB>
Tensor Binary(const char* op, const Tensor& a, const Tensor& b, Forward forward,
              DerivA da, DerivB db) {
  Broadcast plan = PlanBroadcast(op, a.shape(), b.shape());
  std::size_t n = NumElements(plan.out);
  std::vector<double> out(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = forward(av[Pick(plan.a_index, i)], bv[Pick(plan.b_index, i)]);
  }
  auto a_index = std::make_shared<std::vector<std::size_t>>(std::move(plan.a_index));
  auto b_index = std::make_shared<std::vector<std::size_t>>(std::move(plan.b_index));
  return MakeResult(op, plan.out, std::move(out), {a, b},
                    [a_index, b_index, da, db](BackwardContext& ctx) {
                      auto g = ctx.grad_output();
                      auto y = ctx.output();
                      auto av = ctx.input(0);
                      auto bv = ctx.input(1);
                      auto ga = ctx.input_grad(0);
                      auto gb = ctx.input_grad(1);
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        std::size_t ia = Pick(*a_index, i);
                        std::size_t ib = Pick(*b_index, i);
                        if (!ga.empty()) ga[ia] += g[i] * da(av[ia], bv[ib], y[i]);
                        if (!gb.empty()) gb[ib] += g[i] * db(av[ia], bv[ib], y[i]);
                      }
                    });
}

// Shared driver for unary elementwise primitives; `deriv(x, y)` is dy/dx.
template <typename Forward, typename Deriv>
Tensor Unary(const char* op, const Tensor& x, Forward forward, Deriv deriv) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
  return MakeResult(op, x.shape(), std::move(out), {x},
                    [deriv](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      if (gx.empty()) return;
                      auto g = ctx.grad_output();
                      auto xv = ctx.input(0);
                      auto y = ctx.output();
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        gx[i] += g[i] * deriv(xv[i], y[i]);
                      }
                    });
}

std::size_t LastDim(const char* op, const Tensor& x) {
  if (x.rank() == 0) {
    throw ShapeError(std::string(op) + " needs rank >= 1, got a scalar");
  }
  return x.shape().back();
}

}  // namespace

Tensor Add(const Tensor& a, const Tensor& b) {
  return Binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  return Binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  return Binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor Div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return Binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor Minimum(const Tensor& a, const Tensor& b) {
  // Ties route the gradient to `a`.
  return Binary(
      "minimum", a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor Scale(const Tensor& x, double factor) {
  return Unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor AddScalar(const Tensor& x, double offset) {
  return Unary(
      "add_scalar", x, [offset](double v) { return v + offset; },
      [](double, double) { return 1.0; });
}

Tensor Neg(const Tensor& x) { return Scale(x, -1.0); }

Tensor Square(const Tensor& x) {
  return Unary(
      "square", x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor Exp(const Tensor& x) {
  return Unary(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor Log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) {
      throw DomainError("log: argument must be positive, got " + std::to_string(v));
    }
  }
  return Unary(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor Tanh(const Tensor& x) {
  return Unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor Relu(const Tensor& x) {
  return Unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor MatMul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) ThrowShapes("matmul", a.shape(), b.shape());
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  std::size_t m = as[as.size() - 2];
  std::size_t k = as.back();
  std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) ThrowShapes("matmul", as, bs);
  bool shared_rhs = bs.size() == 2;
  if (!shared_rhs &&
      (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
    ThrowShapes("matmul", as, bs);
  }
  std::size_t batch = NumElements(Shape(as.begin(), as.end() - 2));
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n);

  auto av = a.data();
  auto bv = b.data();
  auto long_m = static_cast<Eigen::Index>(m);
  auto long_k = static_cast<Eigen::Index>(k);
  auto long_n = static_cast<Eigen::Index>(n);
  if (shared_rhs) {
    auto rows = static_cast<Eigen::Index>(batch * m);
    MatrixMap(out.data(), rows, long_n).noalias() =
        ConstMatrixMap(av.data(), rows, long_k) * ConstMatrixMap(bv.data(), long_k, long_n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MatrixMap(out.data() + i * m * n, long_m, long_n).noalias() =
          ConstMatrixMap(av.data() + i * m * k, long_m, long_k) *
          ConstMatrixMap(bv.data() + i * k * n, long_k, long_n);
    }
  }

  return MakeResult(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [batch, m, k, n, shared_rhs](BackwardContext& ctx) {
        auto g = ctx.grad_output();
        auto av = ctx.input(0);
        auto bv = ctx.input(1);
        auto ga = ctx.input_grad(0);
        auto gb = ctx.input_grad(1);
        auto lm = static_cast<Eigen::Index>(m);
        auto lk = static_cast<Eigen::Index>(k);
        auto ln = static_cast<Eigen::Index>(n);
        if (shared_rhs) {
          auto rows = static_cast<Eigen::Index>(batch * m);
          ConstMatrixMap gm(g.data(), rows, ln);
          if (!ga.empty()) {
            MatrixMap(ga.data(), rows, lk).noalias() +=
                gm * ConstMatrixMap(bv.data(), lk, ln).transpose();
          }
          if (!gb.empty()) {
            MatrixMap(gb.data(), lk, ln).noalias() +=
                ConstMatrixMap(av.data(), rows, lk).transpose() * gm;
          }
          return;
        }
        for (std::size_t i = 0; i < batch; ++i) {
          ConstMatrixMap gm(g.data() + i * m * n, lm, ln);
          if (!ga.empty()) {
            MatrixMap(ga.data() + i * m * k, lm, lk).noalias() +=
                gm * ConstMatrixMap(bv.data() + i * k * n, lk, ln).transpose();
          }
          if (!gb.empty()) {
            MatrixMap(gb.data() + i * k * n, lk, ln).noalias() +=
                ConstMatrixMap(av.data() + i * m * k, lm, lk).transpose() * gm;
          }
        }
      });
}

Tensor Softmax(const Tensor& x) {
  std::size_t d = LastDim("softmax", x);
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t row = 0; row * d < xv.size(); ++row) {
    const double* in = xv.data() + row * d;
    double* y = out.data() + row * d;
    double peak = *std::max_element(in, in + d);
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = std::exp(in[j] - peak);
      total += y[j];
    }
    for (std::size_t j = 0; j < d; ++j) y[j] /= total;
  }
  return MakeResult("softmax", x.shape(), std::move(out), {x},
                    [d](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      if (gx.empty()) return;
                      auto g = ctx.grad_output();
                      auto y = ctx.output();
                      for (std::size_t row = 0; row * d < y.size(); ++row) {
                        std::size_t base = row * d;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < d; ++j) dot += g[base + j] * y[base + j];
                        for (std::size_t j = 0; j < d; ++j) {
                          gx[base + j] += y[base + j] * (g[base + j] - dot);
                        }
                      }
                    });
}

Tensor LogSoftmax(const Tensor& x) {
  std::size_t d = LastDim("log_softmax", x);
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t row = 0; row * d < xv.size(); ++row) {
    const double* in = xv.data() + row * d;
    double peak = *std::max_element(in, in + d);
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) total += std::exp(in[j] - peak);
    double log_total = peak + std::log(total);
    for (std::size_t j = 0; j < d; ++j) out[row * d + j] = in[j] - log_total;
  }
  return MakeResult("log_softmax", x.shape(), std::move(out), {x},
                    [d](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      if (gx.empty()) return;
                      auto g = ctx.grad_output();
                      auto y = ctx.output();
                      for (std::size_t row = 0; row * d < y.size(); ++row) {
                        std::size_t base = row * d;
                        double total = 0.0;
                        for (std::size_t j = 0; j < d; ++j) total += g[base + j];
                        for (std::size_t j = 0; j < d; ++j) {
                          gx[base + j] += g[base + j] - std::exp(y[base + j]) * total;
                        }
                      }
                    });
}

Tensor LayerNorm(const Tensor& x, double epsilon) {
  std::size_t d = LastDim("layer_norm", x);
  auto xv = x.data();
  std::size_t rows = d == 0 ? 0 : xv.size() / d;
  std::vector<double> out(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t row = 0; row < rows; ++row) {
    const double* in = xv.data() + row * d;
    double mean = std::accumulate(in, in + d, 0.0) / static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    double s = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[row] = s;
    for (std::size_t j = 0; j < d; ++j) out[row * d + j] = (in[j] - mean) * s;
  }
  return MakeResult("layer_norm", x.shape(), std::move(out), {x},
                    [d, inv_std](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      if (gx.empty()) return;
                      auto g = ctx.grad_output();
                      auto y = ctx.output();
                      auto dd = static_cast<double>(d);
                      for (std::size_t row = 0; row < inv_std->size(); ++row) {
                        std::size_t base = row * d;
                        double mean_g = 0.0;
                        double mean_gy = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                          mean_g += g[base + j];
                          mean_gy += g[base + j] * y[base + j];
                        }
                        mean_g /= dd;
                        mean_gy /= dd;
                        double s = (*inv_std)[row];
                        for (std::size_t j = 0; j < d; ++j) {
                          gx[base + j] += s * (g[base + j] - mean_g - y[base + j] * mean_gy);
                        }
                      }
                    });
}

Tensor Sum(const Tensor& x) {
  auto xv = x.data();
  double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  return MakeResult("sum", {}, {total}, {x}, [](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    double g = ctx.grad_output()[0];
    for (double& v : gx) v += g;
  });
}

Tensor Mean(const Tensor& x) {
  if (x.size() == 0) throw DomainError("mean of an empty tensor");
  auto xv = x.data();
  double count = static_cast<double>(xv.size());
  double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  return MakeResult("mean", {}, {total / count}, {x}, [count](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    double g = ctx.grad_output()[0] / count;
    for (double& v : gx) v += g;
  });
}

Tensor SumAxis(const Tensor& x, std::size_t axis, bool keep_dim) {
  if (axis >= x.rank()) {
    throw ShapeError("sum_axis: axis " + std::to_string(axis) + " out of range for " +
                     ShapeToString(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = NumElements(Shape(s.begin(), s.begin() + axis));
  std::size_t len = s[axis];
  std::size_t inner = NumElements(Shape(s.begin() + axis + 1, s.end()));
  Shape out_shape = s;
  if (keep_dim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  auto xv = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* in = xv.data() + (o * len + l) * inner;
      double* y = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) y[i] += in[i];
    }
  }
  return MakeResult("sum_axis", std::move(out_shape), std::move(out), {x},
                    [outer, len, inner](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      if (gx.empty()) return;
                      auto g = ctx.grad_output();
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t l = 0; l < len; ++l) {
                          double* dst = gx.data() + (o * len + l) * inner;
                          const double* src = g.data() + o * inner;
                          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                        }
                      }
                    });
}

Tensor Reshape(const Tensor& x, Shape shape) {
  if (NumElements(shape) != x.size()) ThrowShapes("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return MakeResult("reshape", std::move(shape), std::move(out), {x},
                    [](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      auto g = ctx.grad_output();
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                    });
}

Tensor Permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& s = x.shape();
  std::size_t rank = s.size();
  std::vector<bool> seen(rank, false);
  if (order.size() != rank) ThrowShapes("permute", s, Shape(order.begin(), order.end()));
  for (std::size_t axis : order) {
    if (axis >= rank || seen[axis]) {
      ThrowShapes("permute", s, Shape(order.begin(), order.end()));
    }
    seen[axis] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = s[order[i]];
    strides[i] = in_strides[order[i]];
  }
  // Reading the input through permuted strides is a broadcast-style walk.
  std::size_t n = x.size();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t position = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*source)[flat] = position;
    for (std::size_t axis = rank; axis-- > 0;) {
      ++counter[axis];
      position += strides[axis];
      if (counter[axis] < out_shape[axis]) break;
      position -= strides[axis] * counter[axis];
      counter[axis] = 0;
    }
  }
  auto xv = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*source)[i]];
  return MakeResult("permute", std::move(out_shape), std::move(out), {x},
                    [source](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      if (gx.empty()) return;
                      auto g = ctx.grad_output();
                      for (std::size_t i = 0; i < g.size(); ++i) gx[(*source)[i]] += g[i];
                    });
}

Tensor Slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.shape()[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for shape " +
                     ShapeToString(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = NumElements(Shape(s.begin(), s.begin() + axis));
  std::size_t len = s[axis];
  std::size_t inner = NumElements(Shape(s.begin() + axis + 1, s.end()));
  std::size_t width = (end - begin) * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  auto xv = x.data();
  std::vector<double> out(outer * width);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + (o * len + begin) * inner, width, out.data() + o * width);
  }
  return MakeResult("slice", std::move(out_shape), std::move(out), {x},
                    [outer, len, inner, begin, width](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      if (gx.empty()) return;
                      auto g = ctx.grad_output();
                      for (std::size_t o = 0; o < outer; ++o) {
                        double* dst = gx.data() + (o * len + begin) * inner;
                        const double* src = g.data() + o * width;
                        for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                      }
                    });
}

Tensor Concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     ShapeToString(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) ThrowShapes("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ThrowShapes("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = NumElements(Shape(first.begin(), first.begin() + axis));
  std::size_t inner = NumElements(Shape(first.begin() + axis + 1, first.end()));
  std::size_t out_width = out_shape[axis] * inner;
  std::vector<double> out(outer * out_width);
  auto widths = std::make_shared<std::vector<std::size_t>>();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::size_t width = p.shape()[axis] * inner;
    auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * width, width, out.data() + o * out_width + offset);
    }
    widths->push_back(width);
    offset += width;
  }
  return MakeResult("concat", std::move(out_shape), std::move(out), parts,
                    [outer, out_width, widths](BackwardContext& ctx) {
                      auto g = ctx.grad_output();
                      std::size_t offset = 0;
                      for (std::size_t p = 0; p < widths->size(); ++p) {
                        std::size_t width = (*widths)[p];
                        auto gp = ctx.input_grad(p);
                        if (!gp.empty()) {
                          for (std::size_t o = 0; o < outer; ++o) {
                            const double* src = g.data() + o * out_width + offset;
                            double* dst = gp.data() + o * width;
                            for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                          }
                        }
                        offset += width;
                      }
                    });
}

Tensor EmbeddingLookup(const Tensor& table, const std::vector<std::size_t>& indices,
                       const Shape& index_shape) {
  if (table.rank() != 2) {
    throw ShapeError("embedding table must be rank 2, got " +
                     ShapeToString(table.shape()));
  }
  if (NumElements(index_shape) != indices.size()) {
    throw ShapeError("embedding: index shape " + ShapeToString(index_shape) +
                     " does not match " + std::to_string(indices.size()) + " indices");
  }
  std::size_t rows = table.shape()[0];
  std::size_t d = table.shape()[1];
  for (std::size_t idx : indices) {
    if (idx >= rows) {
      throw InvalidArgument("embedding index " + std::to_string(idx) +
                            " out of range for table with " + std::to_string(rows) +
                            " rows");
    }
  }
  Shape out_shape = index_shape;
  out_shape.push_back(d);
  auto tv = table.data();
  std::vector<double> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(tv.data() + indices[i] * d, d, out.data() + i * d);
  }
  auto shared_indices = std::make_shared<std::vector<std::size_t>>(indices);
  return MakeResult("embedding", std::move(out_shape), std::move(out), {table},
                    [shared_indices, d](BackwardContext& ctx) {
                      auto gt = ctx.input_grad(0);
                      if (gt.empty()) return;
                      auto g = ctx.grad_output();
                      for (std::size_t i = 0; i < shared_indices->size(); ++i) {
                        double* dst = gt.data() + (*shared_indices)[i] * d;
                        for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
                      }
                    });
}

Tensor Dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw InvalidArgument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  auto xv = x.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = uniform(rng) < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * (*mask)[i];
  }
  return MakeResult("dropout", x.shape(), std::move(out), {x},
                    [mask](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      if (gx.empty()) return;
                      auto g = ctx.grad_output();
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
                    });
}

Tensor MaskedFill(const Tensor& x, const Shape& mask_shape,
                  const std::vector<std::uint8_t>& mask, double value) {
  if (NumElements(mask_shape) != mask.size()) {
    throw ShapeError("masked_fill: mask shape " + ShapeToString(mask_shape) +
                     " does not match " + std::to_string(mask.size()) + " entries");
  }
  Broadcast plan = PlanBroadcast("masked_fill", x.shape(), mask_shape);
  if (plan.out != x.shape()) ThrowShapes("masked_fill", x.shape(), mask_shape);
  auto filled = std::make_shared<std::vector<std::uint8_t>>(x.size());
  auto xv = x.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    bool hit = mask[Pick(plan.b_index, i)] != 0;
    (*filled)[i] = hit ? 1 : 0;
    out[i] = hit ? value : xv[i];
  }
  return MakeResult("masked_fill", x.shape(), std::move(out), {x},
                    [filled](BackwardContext& ctx) {
                      auto gx = ctx.input_grad(0);
                      if (gx.empty()) return;
                      auto g = ctx.grad_output();
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        if (!(*filled)[i]) gx[i] += g[i];
                      }
                    });
}

}  // namespace dtr
