#include "ccdc/ops.hpp"

#include <algorithm>
#include <cmath>

namespace ccdc {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

constexpr double kNormEps = 1e-12;

Tape& tape_of(const Tensor& t, const char* op) {
  if (!t.valid()) throw UsageError(std::string(op) + ": empty tensor");
  return *t.node()->tape;
}

void require_rank(const Tensor& t, Index r, const char* op) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// Rows/cols view of a rank-1 or rank-2 tensor. Rank-1 counts as a single row.
std::pair<Index, Index> as_rows(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tape& tp = tape_of(a, "matmul");
  auto fwd = [m, k, n](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(m * n);
    MapCM A(in[0]->value.data(), m, k);
    MapCM B(in[1]->value.data(), k, n);
    MapM C(out.data(), m, n);
    C.noalias() = A * B;
    return out;
  };
  auto bwd = [m, k, n](const Node& self, const Array& adj, BackwardCtx& ctx) {
    MapCM dC(adj.data(), m, n);
    if (Array* ga = ctx.buffer(*self.inputs[0])) {
      MapCM B(self.inputs[1]->value.data(), k, n);
      MapM dA(ga->data(), m, k);
      dA.noalias() += dC * B.transpose();
    }
    if (Array* gb = ctx.buffer(*self.inputs[1])) {
      MapCM A(self.inputs[0]->value.data(), m, k);
      MapM dB(gb->data(), k, n);
      dB.noalias() += A.transpose() * dC;
    }
  };
  return tp.make("matmul", {a, b}, Shape{m, n}, std::move(fwd), std::move(bwd));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k)
    throw ShapeError("matmul_nt: inner extents disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  Tape& tp = tape_of(a, "matmul_nt");
  auto fwd = [m, k, n](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(m * n);
    MapCM A(in[0]->value.data(), m, k);
    MapCM B(in[1]->value.data(), n, k);
    MapM C(out.data(), m, n);
    C.noalias() = A * B.transpose();
    return out;
  };
  auto bwd = [m, k, n](const Node& self, const Array& adj, BackwardCtx& ctx) {
    MapCM dC(adj.data(), m, n);
    if (Array* ga = ctx.buffer(*self.inputs[0])) {
      MapCM B(self.inputs[1]->value.data(), n, k);
      MapM dA(ga->data(), m, k);
      dA.noalias() += dC * B;
    }
    if (Array* gb = ctx.buffer(*self.inputs[1])) {
      MapCM A(self.inputs[0]->value.data(), m, k);
      MapM dB(gb->data(), n, k);
      dB.noalias() += dC.transpose() * A;
    }
  };
  return tp.make("matmul_nt", {a, b}, Shape{m, n}, std::move(fwd), std::move(bwd));
}

namespace {

template <typename FwdVal, typename BwdBoth>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, FwdVal f, BwdBoth g) {
  require_same_shape(a, b, op);
  Tape& tp = tape_of(a, op);
  auto fwd = [f](const std::vector<std::shared_ptr<Node>>& in) {
    const Array& x = in[0]->value;
    const Array& y = in[1]->value;
    Array out(x.size());
    for (Index i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
    return out;
  };
  auto bwd = [g](const Node& self, const Array& adj, BackwardCtx& ctx) {
    const Array& x = self.inputs[0]->value;
    const Array& y = self.inputs[1]->value;
    Array* ga = ctx.buffer(*self.inputs[0]);
    Array* gb = ctx.buffer(*self.inputs[1]);
    for (Index i = 0; i < x.size(); ++i) {
      auto [da, db] = g(x[i], y[i], adj[i]);
      if (ga) (*ga)[i] += da;
      if (gb) (*gb)[i] += db;
    }
  };
  return tp.make(op, {a, b}, a.shape(), std::move(fwd), std::move(bwd));
}

template <typename FwdVal, typename BwdVal>
Tensor unary_elementwise(const char* op, const Tensor& t, FwdVal f, BwdVal g) {
  Tape& tp = tape_of(t, op);
  auto fwd = [f](const std::vector<std::shared_ptr<Node>>& in) {
    const Array& x = in[0]->value;
    Array out(x.size());
    for (Index i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
  };
  auto bwd = [g](const Node& self, const Array& adj, BackwardCtx& ctx) {
    Array* gx = ctx.buffer(*self.inputs[0]);
    if (!gx) return;
    const Array& x = self.inputs[0]->value;
    const Array& y = self.value;
    for (Index i = 0; i < x.size(); ++i) (*gx)[i] += g(x[i], y[i]) * adj[i];
  };
  return tp.make(op, {t}, t.shape(), std::move(fwd), std::move(bwd));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double adj) { return std::pair<double, double>{adj, adj}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double adj) { return std::pair<double, double>{adj, -adj}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double adj) { return std::pair<double, double>{adj * y, adj * x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (Index i = 0; i < b.numel(); ++i)
    if (b.value()[i] == 0.0) throw DomainError("div: division by zero at index " + std::to_string(i));
  return binary_elementwise(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double adj) {
        return std::pair<double, double>{adj / y, -adj * x / (y * y)};
      });
}

Tensor affine(const Tensor& t, double a, double b) {
  return unary_elementwise(
      "affine", t, [a, b](double x) { return a * x + b; },
      [a](double, double) { return a; });
}

Tensor exp(const Tensor& t) {
  return unary_elementwise(
      "exp", t, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& t) {
  for (Index i = 0; i < t.numel(); ++i)
    if (!(t.value()[i] > 0.0))
      throw DomainError("log: non-positive input " + std::to_string(t.value()[i]) + " at index " +
                        std::to_string(i));
  return unary_elementwise(
      "log", t, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& t) {
  return unary_elementwise(
      "relu", t, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& t) {
  constexpr double kRoot2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  return unary_elementwise(
      "gelu", t,
      [=](double x) {
        const double u = kRoot2OverPi * (x + kCubic * x * x * x);
        return 0.5 * x * (1.0 + std::tanh(u));
      },
      [=](double x, double) {
        const double u = kRoot2OverPi * (x + kCubic * x * x * x);
        const double th = std::tanh(u);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kRoot2OverPi * (1.0 + 3.0 * kCubic * x * x);
      });
}

Tensor sigmoid(const Tensor& t) {
  return unary_elementwise(
      "sigmoid", t,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& t, double lo, double hi) {
  if (!(lo <= hi)) throw UsageError("clamp: lo > hi");
  return unary_elementwise(
      "clamp", t, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (numel(shape) != t.numel())
    throw ShapeError("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
  Tape& tp = tape_of(t, "reshape");
  auto fwd = [](const std::vector<std::shared_ptr<Node>>& in) { return in[0]->value; };
  auto bwd = [](const Node& self, const Array& adj, BackwardCtx& ctx) {
    if (Array* g = ctx.buffer(*self.inputs[0])) *g += adj;
  };
  return tp.make("reshape", {t}, std::move(shape), std::move(fwd), std::move(bwd));
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) throw UsageError("concat: no parts");
  const Shape& s0 = parts[0].shape();
  const Index rank = static_cast<Index>(s0.size());
  if (axis < 0 || axis >= rank) throw UsageError("concat: axis out of range");
  Index total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (Index d = 0; d < rank; ++d)
      if (d != axis && p.shape()[d] != s0[d])
        throw ShapeError("concat: extent mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    total += p.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;

  Index outer = 1, inner = 1;
  for (Index d = 0; d < axis; ++d) outer *= s0[d];
  for (Index d = axis + 1; d < rank; ++d) inner *= s0[d];
  std::vector<Index> extents, offsets;
  Index off = 0;
  for (const Tensor& p : parts) {
    extents.push_back(p.shape()[axis]);
    offsets.push_back(off);
    off += p.shape()[axis];
  }

  Tape& tp = tape_of(parts[0], "concat");
  auto fwd = [outer, inner, total, extents, offsets](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(outer * total * inner);
    for (std::size_t p = 0; p < in.size(); ++p) {
      const Array& x = in[p]->value;
      const Index e = extents[p];
      for (Index o = 0; o < outer; ++o)
        std::copy_n(x.data() + o * e * inner, e * inner,
                    out.data() + (o * total + offsets[p]) * inner);
    }
    return out;
  };
  auto bwd = [outer, inner, total, extents, offsets](const Node& self, const Array& adj,
                                                     BackwardCtx& ctx) {
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      Array* g = ctx.buffer(*self.inputs[p]);
      if (!g) continue;
      const Index e = extents[p];
      for (Index o = 0; o < outer; ++o) {
        const double* src = adj.data() + (o * total + offsets[p]) * inner;
        double* dst = g->data() + o * e * inner;
        for (Index i = 0; i < e * inner; ++i) dst[i] += src[i];
      }
    }
  };
  return tp.make("concat", parts, std::move(out_shape), std::move(fwd), std::move(bwd));
}

Tensor slice(const Tensor& t, Index axis, Index start, Index len) {
  const Index rank = t.rank();
  if (axis < 0 || axis >= rank) throw UsageError("slice: axis out of range");
  const Index ext = t.shape()[axis];
  if (start < 0 || len < 1 || start + len > ext)
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") exceeds extent " + std::to_string(ext));
  Index outer = 1, inner = 1;
  for (Index d = 0; d < axis; ++d) outer *= t.shape()[d];
  for (Index d = axis + 1; d < rank; ++d) inner *= t.shape()[d];
  Shape out_shape = t.shape();
  out_shape[axis] = len;

  Tape& tp = tape_of(t, "slice");
  auto fwd = [outer, inner, ext, start, len](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(outer * len * inner);
    for (Index o = 0; o < outer; ++o)
      std::copy_n(in[0]->value.data() + (o * ext + start) * inner, len * inner,
                  out.data() + o * len * inner);
    return out;
  };
  auto bwd = [outer, inner, ext, start, len](const Node& self, const Array& adj, BackwardCtx& ctx) {
    Array* g = ctx.buffer(*self.inputs[0]);
    if (!g) return;
    for (Index o = 0; o < outer; ++o) {
      const double* src = adj.data() + o * len * inner;
      double* dst = g->data() + (o * ext + start) * inner;
      for (Index i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  };
  return tp.make("slice", {t}, std::move(out_shape), std::move(fwd), std::move(bwd));
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw UsageError("stack_rows: no rows");
  const Index n = rows[0].numel();
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.numel() != n)
      throw ShapeError("stack_rows: expected vectors of length " + std::to_string(n) + ", got " +
                       shape_str(r.shape()));
  }
  const Index k = static_cast<Index>(rows.size());
  Tape& tp = tape_of(rows[0], "stack_rows");
  auto fwd = [n](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(static_cast<Index>(in.size()) * n);
    for (std::size_t i = 0; i < in.size(); ++i)
      std::copy_n(in[i]->value.data(), n, out.data() + static_cast<Index>(i) * n);
    return out;
  };
  auto bwd = [n](const Node& self, const Array& adj, BackwardCtx& ctx) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (Array* g = ctx.buffer(*self.inputs[i])) {
        const double* src = adj.data() + static_cast<Index>(i) * n;
        for (Index j = 0; j < n; ++j) (*g)[j] += src[j];
      }
    }
  };
  return tp.make("stack_rows", rows, Shape{k, n}, std::move(fwd), std::move(bwd));
}

Tensor sum_all(const Tensor& t) {
  Tape& tp = tape_of(t, "sum_all");
  auto fwd = [](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(1);
    out[0] = in[0]->value.sum();
    return out;
  };
  auto bwd = [](const Node& self, const Array& adj, BackwardCtx& ctx) {
    if (Array* g = ctx.buffer(*self.inputs[0])) *g += adj[0];
  };
  return tp.make("sum_all", {t}, Shape{1}, std::move(fwd), std::move(bwd));
}

Tensor mean_all(const Tensor& t) {
  const double inv = 1.0 / static_cast<double>(t.numel());
  Tape& tp = tape_of(t, "mean_all");
  auto fwd = [inv](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(1);
    out[0] = in[0]->value.sum() * inv;
    return out;
  };
  auto bwd = [inv](const Node& self, const Array& adj, BackwardCtx& ctx) {
    if (Array* g = ctx.buffer(*self.inputs[0])) *g += adj[0] * inv;
  };
  return tp.make("mean_all", {t}, Shape{1}, std::move(fwd), std::move(bwd));
}

Tensor mean_rows(const Tensor& t) {
  require_rank(t, 2, "mean_rows");
  const Index r = t.shape()[0], c = t.shape()[1];
  const double inv = 1.0 / static_cast<double>(r);
  Tape& tp = tape_of(t, "mean_rows");
  auto fwd = [r, c, inv](const std::vector<std::shared_ptr<Node>>& in) {
    Array out = Array::Zero(c);
    const double* x = in[0]->value.data();
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) out[j] += x[i * c + j];
    out *= inv;
    return out;
  };
  auto bwd = [r, c, inv](const Node& self, const Array& adj, BackwardCtx& ctx) {
    Array* g = ctx.buffer(*self.inputs[0]);
    if (!g) return;
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) (*g)[i * c + j] += adj[j] * inv;
  };
  return tp.make("mean_rows", {t}, Shape{c}, std::move(fwd), std::move(bwd));
}

Tensor l2_normalize(const Tensor& v) {
  require_rank(v, 1, "l2_normalize");
  Tape& tp = tape_of(v, "l2_normalize");
  auto fwd = [](const std::vector<std::shared_ptr<Node>>& in) {
    const Array& x = in[0]->value;
    const double n = std::max(std::sqrt(x.square().sum()), kNormEps);
    return Array(x / n);
  };
  auto bwd = [](const Node& self, const Array& adj, BackwardCtx& ctx) {
    Array* g = ctx.buffer(*self.inputs[0]);
    if (!g) return;
    const Array& x = self.inputs[0]->value;
    const double n2 = std::sqrt(x.square().sum());
    if (n2 > kNormEps) {
      const Array& y = self.value;
      const double dot = (y * adj).sum();
      *g += (adj - y * dot) / n2;
    } else {
      *g += adj / kNormEps;
    }
  };
  return tp.make("l2_normalize", {v}, v.shape(), std::move(fwd), std::move(bwd));
}

Tensor inner_product(const Tensor& u, const Tensor& v) {
  require_rank(u, 1, "inner_product");
  require_same_shape(u, v, "inner_product");
  Tape& tp = tape_of(u, "inner_product");
  auto fwd = [](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(1);
    out[0] = (in[0]->value * in[1]->value).sum();
    return out;
  };
  auto bwd = [](const Node& self, const Array& adj, BackwardCtx& ctx) {
    if (Array* gu = ctx.buffer(*self.inputs[0])) *gu += adj[0] * self.inputs[1]->value;
    if (Array* gv = ctx.buffer(*self.inputs[1])) *gv += adj[0] * self.inputs[0]->value;
  };
  return tp.make("inner_product", {u, v}, Shape{1}, std::move(fwd), std::move(bwd));
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  require_rank(m, 2, "add_rowvec");
  require_rank(v, 1, "add_rowvec");
  const Index r = m.shape()[0], c = m.shape()[1];
  if (v.shape()[0] != c)
    throw ShapeError("add_rowvec: " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
  Tape& tp = tape_of(m, "add_rowvec");
  auto fwd = [r, c](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(r * c);
    const double* x = in[0]->value.data();
    const double* b = in[1]->value.data();
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
    return out;
  };
  auto bwd = [r, c](const Node& self, const Array& adj, BackwardCtx& ctx) {
    if (Array* gm = ctx.buffer(*self.inputs[0])) *gm += adj;
    if (Array* gv = ctx.buffer(*self.inputs[1])) {
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) (*gv)[j] += adj[i * c + j];
    }
  };
  return tp.make("add_rowvec", {m, v}, m.shape(), std::move(fwd), std::move(bwd));
}

Tensor softmax_rows(const Tensor& t) {
  auto [r, c] = as_rows(t, "softmax_rows");
  Tape& tp = tape_of(t, "softmax_rows");
  auto fwd = [r, c](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(r * c);
    const double* x = in[0]->value.data();
    for (Index i = 0; i < r; ++i) {
      const double* row = x + i * c;
      double m = row[0];
      for (Index j = 1; j < c; ++j) m = std::max(m, row[j]);
      double s = 0.0;
      for (Index j = 0; j < c; ++j) {
        out[i * c + j] = std::exp(row[j] - m);
        s += out[i * c + j];
      }
      for (Index j = 0; j < c; ++j) out[i * c + j] /= s;
    }
    return out;
  };
  auto bwd = [r, c](const Node& self, const Array& adj, BackwardCtx& ctx) {
    Array* g = ctx.buffer(*self.inputs[0]);
    if (!g) return;
    const double* y = self.value.data();
    for (Index i = 0; i < r; ++i) {
      double dot = 0.0;
      for (Index j = 0; j < c; ++j) dot += adj[i * c + j] * y[i * c + j];
      for (Index j = 0; j < c; ++j) (*g)[i * c + j] += y[i * c + j] * (adj[i * c + j] - dot);
    }
  };
  return tp.make("softmax_rows", {t}, t.shape(), std::move(fwd), std::move(bwd));
}

Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps) {
  auto [r, c] = as_rows(t, "layer_norm");
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  if (gamma.shape()[0] != c || beta.shape()[0] != c)
    throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match width " + std::to_string(c));
  Tape& tp = tape_of(t, "layer_norm");
  auto fwd = [r, c, eps](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(r * c);
    const double* x = in[0]->value.data();
    const double* gm = in[1]->value.data();
    const double* bt = in[2]->value.data();
    for (Index i = 0; i < r; ++i) {
      const double* row = x + i * c;
      double mu = 0.0;
      for (Index j = 0; j < c; ++j) mu += row[j];
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (Index j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<double>(c);
      const double inv = 1.0 / std::sqrt(var + eps);
      for (Index j = 0; j < c; ++j) out[i * c + j] = (row[j] - mu) * inv * gm[j] + bt[j];
    }
    return out;
  };
  auto bwd = [r, c, eps](const Node& self, const Array& adj, BackwardCtx& ctx) {
    const double* x = self.inputs[0]->value.data();
    const double* gm = self.inputs[1]->value.data();
    Array* gx = ctx.buffer(*self.inputs[0]);
    Array* gg = ctx.buffer(*self.inputs[1]);
    Array* gb = ctx.buffer(*self.inputs[2]);
    const double cn = static_cast<double>(c);
    for (Index i = 0; i < r; ++i) {
      const double* row = x + i * c;
      const double* da = adj.data() + i * c;
      double mu = 0.0;
      for (Index j = 0; j < c; ++j) mu += row[j];
      mu /= cn;
      double var = 0.0;
      for (Index j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= cn;
      const double inv = 1.0 / std::sqrt(var + eps);

      if (gg || gb) {
        for (Index j = 0; j < c; ++j) {
          if (gg) (*gg)[j] += da[j] * (row[j] - mu) * inv;
          if (gb) (*gb)[j] += da[j];
        }
      }
      if (gx) {
        double sum_dxhat = 0.0, sum_dxhat_xc = 0.0;
        for (Index j = 0; j < c; ++j) {
          const double dxhat = da[j] * gm[j];
          sum_dxhat += dxhat;
          sum_dxhat_xc += dxhat * (row[j] - mu);
        }
        const double dvar = sum_dxhat_xc * (-0.5) * inv * inv * inv;
        const double dmu = -sum_dxhat * inv;
        for (Index j = 0; j < c; ++j) {
          const double dxhat = da[j] * gm[j];
          (*gx)[i * c + j] += dxhat * inv + dvar * 2.0 * (row[j] - mu) / cn + dmu / cn;
        }
      }
    }
  };
  return tp.make("layer_norm", {t, gamma, beta}, t.shape(), std::move(fwd), std::move(bwd));
}

Tensor conv3d(const Tensor& input, const Tensor& kernels, Extents3 stride, Extents3 padding) {
  require_rank(input, 4, "conv3d");
  if (kernels.rank() != 5)
    throw ShapeError("conv3d: kernels must be rank 5, got " + shape_str(kernels.shape()));
  const Index ci_n = input.shape()[0], H = input.shape()[1], L = input.shape()[2], D = input.shape()[3];
  const Index co_n = kernels.shape()[0];
  if (kernels.shape()[1] != ci_n)
    throw ShapeError("conv3d: kernel input channels " + shape_str(kernels.shape()) +
                     " do not match input " + shape_str(input.shape()));
  const Index kh = kernels.shape()[2], kl = kernels.shape()[3], kd = kernels.shape()[4];
  const std::array<Index, 3> in_ext{H, L, D}, k_ext{kh, kl, kd};
  std::array<Index, 3> out_ext{};
  for (int a = 0; a < 3; ++a) {
    if (stride[a] < 1) throw ConfigError("conv3d: stride must be positive");
    if (padding[a] < 0) throw ConfigError("conv3d: padding must be non-negative");
    const Index span = in_ext[a] + 2 * padding[a] - k_ext[a];
    if (span < 0 || span % stride[a] != 0)
      throw ConfigError("conv3d: non-integer output extent on axis " + std::to_string(a) +
                        " for input " + shape_str(input.shape()) + ", kernel " +
                        shape_str(kernels.shape()) + ", stride " + std::to_string(stride[a]) +
                        ", padding " + std::to_string(padding[a]));
    out_ext[a] = span / stride[a] + 1;
  }
  const Index Ho = out_ext[0], Lo = out_ext[1], Do = out_ext[2];

  Tape& tp = tape_of(input, "conv3d");
  auto fwd = [=](const std::vector<std::shared_ptr<Node>>& in) {
    const double* x = in[0]->value.data();
    const double* k = in[1]->value.data();
    Array out = Array::Zero(co_n * Ho * Lo * Do);
    for (Index co = 0; co < co_n; ++co)
      for (Index oh = 0; oh < Ho; ++oh)
        for (Index ol = 0; ol < Lo; ++ol)
          for (Index od = 0; od < Do; ++od) {
            double acc = 0.0;
            for (Index ci = 0; ci < ci_n; ++ci)
              for (Index a = 0; a < kh; ++a) {
                const Index ih = oh * stride[0] - padding[0] + a;
                if (ih < 0 || ih >= H) continue;
                for (Index b = 0; b < kl; ++b) {
                  const Index il = ol * stride[1] - padding[1] + b;
                  if (il < 0 || il >= L) continue;
                  for (Index c = 0; c < kd; ++c) {
                    const Index id = od * stride[2] - padding[2] + c;
                    if (id < 0 || id >= D) continue;
                    acc += x[((ci * H + ih) * L + il) * D + id] *
                           k[(((co * ci_n + ci) * kh + a) * kl + b) * kd + c];
                  }
                }
              }
            out[((co * Ho + oh) * Lo + ol) * Do + od] = acc;
          }
    return out;
  };
  auto bwd = [=](const Node& self, const Array& adj, BackwardCtx& ctx) {
    Array* gx = ctx.buffer(*self.inputs[0]);
    Array* gk = ctx.buffer(*self.inputs[1]);
    if (!gx && !gk) return;
    const double* x = self.inputs[0]->value.data();
    const double* k = self.inputs[1]->value.data();
    for (Index co = 0; co < co_n; ++co)
      for (Index oh = 0; oh < Ho; ++oh)
        for (Index ol = 0; ol < Lo; ++ol)
          for (Index od = 0; od < Do; ++od) {
            const double g = adj[((co * Ho + oh) * Lo + ol) * Do + od];
            if (g == 0.0) continue;
            for (Index ci = 0; ci < ci_n; ++ci)
              for (Index a = 0; a < kh; ++a) {
                const Index ih = oh * stride[0] - padding[0] + a;
                if (ih < 0 || ih >= H) continue;
                for (Index b = 0; b < kl; ++b) {
                  const Index il = ol * stride[1] - padding[1] + b;
                  if (il < 0 || il >= L) continue;
                  for (Index c = 0; c < kd; ++c) {
                    const Index id = od * stride[2] - padding[2] + c;
                    if (id < 0 || id >= D) continue;
                    const Index xi = ((ci * H + ih) * L + il) * D + id;
                    const Index ki = (((co * ci_n + ci) * kh + a) * kl + b) * kd + c;
                    if (gx) (*gx)[xi] += g * k[ki];
                    if (gk) (*gk)[ki] += g * x[xi];
                  }
                }
              }
          }
  };
  return tp.make("conv3d", {input, kernels}, Shape{co_n, Ho, Lo, Do}, std::move(fwd), std::move(bwd));
}

Tensor add_channel_bias(const Tensor& t, const Tensor& bias) {
  require_rank(t, 4, "add_channel_bias");
  require_rank(bias, 1, "add_channel_bias");
  const Index C = t.shape()[0];
  if (bias.shape()[0] != C)
    throw ShapeError("add_channel_bias: " + shape_str(t.shape()) + " + " + shape_str(bias.shape()));
  const Index spatial = t.numel() / C;
  Tape& tp = tape_of(t, "add_channel_bias");
  auto fwd = [C, spatial](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(C * spatial);
    const double* x = in[0]->value.data();
    const double* b = in[1]->value.data();
    for (Index c = 0; c < C; ++c)
      for (Index s = 0; s < spatial; ++s) out[c * spatial + s] = x[c * spatial + s] + b[c];
    return out;
  };
  auto bwd = [C, spatial](const Node& self, const Array& adj, BackwardCtx& ctx) {
    if (Array* gx = ctx.buffer(*self.inputs[0])) *gx += adj;
    if (Array* gb = ctx.buffer(*self.inputs[1])) {
      for (Index c = 0; c < C; ++c) {
        double s = 0.0;
        for (Index i = 0; i < spatial; ++i) s += adj[c * spatial + i];
        (*gb)[c] += s;
      }
    }
  };
  return tp.make("add_channel_bias", {t, bias}, t.shape(), std::move(fwd), std::move(bwd));
}

Tensor channels_last(const Tensor& t) {
  require_rank(t, 4, "channels_last");
  const Index C = t.shape()[0], A = t.shape()[1], B = t.shape()[2], D = t.shape()[3];
  Tape& tp = tape_of(t, "channels_last");
  auto fwd = [C, A, B, D](const std::vector<std::shared_ptr<Node>>& in) {
    Array out(C * A * B * D);
    const double* x = in[0]->value.data();
    for (Index c = 0; c < C; ++c)
      for (Index a = 0; a < A; ++a)
        for (Index b = 0; b < B; ++b)
          for (Index d = 0; d < D; ++d)
            out[((a * B + b) * D + d) * C + c] = x[((c * A + a) * B + b) * D + d];
    return out;
  };
  auto bwd = [C, A, B, D](const Node& self, const Array& adj, BackwardCtx& ctx) {
    Array* g = ctx.buffer(*self.inputs[0]);
    if (!g) return;
    for (Index c = 0; c < C; ++c)
      for (Index a = 0; a < A; ++a)
        for (Index b = 0; b < B; ++b)
          for (Index d = 0; d < D; ++d)
            (*g)[((c * A + a) * B + b) * D + d] += adj[((a * B + b) * D + d) * C + c];
  };
  return tp.make("channels_last", {t}, Shape{A, B, D, C}, std::move(fwd), std::move(bwd));
}

Tensor add_all(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("add_all: no parts");
  std::vector<Tensor> cur = parts;
  while (cur.size() > 1) {
    std::vector<Tensor> next;
    for (std::size_t i = 0; i + 1 < cur.size(); i += 2) next.push_back(add(cur[i], cur[i + 1]));
    if (cur.size() % 2) next.push_back(cur.back());
    cur = std::move(next);
  }
  return cur[0];
}

}  // namespace ccdc
