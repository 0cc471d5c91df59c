#pragma once

#include <array>
#include <vector>

#include "ccdc/tensor.hpp"

// Differentiable operations. Free functions that record one node on the tape
// of their operands and return the result tensor. All data is row-major f64.
namespace ccdc {

using Extents3 = std::array<Index, 3>;

// -- linear algebra ----------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k] -> [m,n], a.b^T

// -- elementwise -------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // throws DomainError on zero divisor
Tensor affine(const Tensor& t, double scale, double shift);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);  // throws DomainError on non-positive input
Tensor relu(const Tensor& t);
Tensor gelu(const Tensor& t);  // tanh approximation
Tensor sigmoid(const Tensor& t);
Tensor clamp(const Tensor& t, double lo, double hi);

inline Tensor scale(const Tensor& t, double c) { return affine(t, c, 0.0); }
inline Tensor add_scalar(const Tensor& t, double c) { return affine(t, 1.0, c); }
inline Tensor neg(const Tensor& t) { return affine(t, -1.0, 0.0); }

// -- structure ---------------------------------------------------------------
Tensor reshape(const Tensor& t, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, Index axis);
Tensor slice(const Tensor& t, Index axis, Index start, Index len);
Tensor stack_rows(const std::vector<Tensor>& rows);  // k vectors [n] -> [k,n]

// -- reductions --------------------------------------------------------------
Tensor sum_all(const Tensor& t);    // -> [1]
Tensor mean_all(const Tensor& t);   // -> [1]
Tensor mean_rows(const Tensor& t);  // [r,c] -> [c]

// -- vector ops --------------------------------------------------------------
Tensor l2_normalize(const Tensor& v);                       // v / max(|v|, 1e-12)
Tensor inner_product(const Tensor& u, const Tensor& v);     // -> [1]
Tensor add_rowvec(const Tensor& m, const Tensor& v);        // [r,c] + [c] broadcast

// -- normalization / attention -----------------------------------------------
Tensor softmax_rows(const Tensor& t);  // over last axis; rank 1 or 2
Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// -- convolution -------------------------------------------------------------
// input [Cin,H,L,D], kernels [Cout,Cin,kh,kl,kd]; cross-correlation, no bias.
Tensor conv3d(const Tensor& input, const Tensor& kernels, Extents3 stride, Extents3 padding);
Tensor add_channel_bias(const Tensor& t, const Tensor& bias);  // t [C,A,B,D] + bias[C]
Tensor channels_last(const Tensor& t);                         // [C,A,B,D] -> [A,B,D,C]

// -- composites --------------------------------------------------------------
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}
Tensor add_all(const std::vector<Tensor>& parts);

}  // namespace ccdc
