#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "enf/tape.hpp"

// Differentiable primitives over Var. Shapes are always explicit; the only
// broadcasting is add_bcast's trailing-dimension expansion.
namespace enf {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// a[..., C] + b[C] (b broadcast over the leading dimensions of a).
Var add_bcast(const Var& a, const Var& b);

Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var cos(const Var& a);
Var sin(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var reciprocal(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);

/// Sum of all elements, rank-0 result.
Var sum(const Var& a);
Var mean(const Var& a);
/// Rank-0 `s` expanded to `shape`.
Var expand(const Var& s, const Shape& shape);

Var reshape(const Var& a, Shape shape);
/// op(a) * op(b) for 2-D operands, op = transpose when the flag is set.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
Var transpose(const Var& a);
/// [B, X, Y] -> [B, Y, X].
Var swap_last2(const Var& a);

Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
/// Inverse of slice_cols: embeds a[R x c] at column `begin` of a zero [R x total].
Var pad_cols(const Var& a, std::size_t begin, std::size_t total);
Var concat_cols(std::span<const Var> parts);

/// out[r] = a[index[r]].
Var gather_rows(const Var& a, std::span<const std::size_t> index);
/// out[index[r]] += a[r], out has `rows` rows.
Var scatter_add_rows(const Var& a, std::span<const std::size_t> index, std::size_t rows);
/// Every row repeated `times` times consecutively: [R x C] -> [R*times x C].
Var repeat_rows(const Var& a, std::size_t times);
/// Sums consecutive groups of `group` rows: [R x C] -> [R/group x C].
Var group_sum_rows(const Var& a, std::size_t group);
/// Every column repeated `times` times consecutively: [R x C] -> [R x C*times].
Var repeat_cols(const Var& a, std::size_t times);
/// Sums consecutive blocks of `block` columns: [R x C] -> [R x C/block].
Var block_sum_cols(const Var& a, std::size_t block);

/// Row-wise softmax(logits + bias) with max subtraction. `bias` may be an
/// invalid Var for no bias.
Var softmax_with_bias(const Var& logits, const Var& bias);
Var log_softmax_rows(const Var& a);
/// Mean negative log-likelihood of integer labels under row-wise logits.
Var cross_entropy(const Var& logits, std::span<const int> labels);
/// Mean of squared differences over all elements.
Var mse(const Var& prediction, const Var& target);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// Plain (non-taped) matrix product, used by value-only code paths.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

}  // namespace enf
