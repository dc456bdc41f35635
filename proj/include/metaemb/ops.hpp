#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metaemb/tape.hpp"

namespace metaemb::ad {

inline constexpr double kProbEpsilon = 1e-7;

Var constant(Tape& tape, Tensor value);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
Var transpose(Var x);
Var sparse_matmul(SparsePtr s, Var x);
Var select_cols(Var x, std::vector<std::uint32_t> idx);
Var scatter_cols(Var x, std::vector<std::uint32_t> idx, std::size_t cols);
Var concat_cols(std::span<const Var> parts);
Var reshape(Var x, Shape shape);
Var sum(Var x);
Var mean(Var x);
Var expand(Var scalar, Shape shape);
Var affine(Var x, double scale, double shift);
Var scale(Var x, double c);
Var sigmoid(Var x);
Var tanh(Var x);
// Subgradient 0 at the kink; second derivative 0 everywhere.
Var relu(Var x);
Var square(Var x);
Var log(Var x);
Var reciprocal(Var x);
Var clip(Var x, double lo, double hi);

// Row i of matrix m as a rank-1 tensor (look-up embedding).
Var gather_row(Var m, std::size_t i);
Var gather_rows(Var m, std::span<const std::uint32_t> idx);
// Mean of the selected rows per bag; an empty bag yields a zero row.
Var avg_pool_rows(Var m, std::span<const std::vector<std::uint32_t>> bags);
// Repeats a 1 x n (or rank-1 n) row `count` times.
Var broadcast_rows(Var row, std::size_t count);
// Row sums as a B x 1 column.
Var sum_cols(Var x);

// Mean binary cross-entropy of probabilities `p` against labels `y` (same
// shape), with p clipped to [kProbEpsilon, 1 - kProbEpsilon].
Var bce_loss(Var p, const Tensor& y);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// Scalar log-loss for a single prediction, same clipping as bce_loss.
double bce(double p, int y);

}  // namespace metaemb::ad
