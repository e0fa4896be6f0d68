#include "enf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "enf/error.hpp"

namespace enf {
namespace {

using Index = std::vector<std::size_t>;

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("operation on an empty Var");
  return a.tape();
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void require_matrix(const char* op, const Var& a) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(x.shape(), std::move(out), x.dtype());
}

template <class F>
Tensor map_binary(const Tensor& x, const Tensor& y, F f) {
  std::vector<double> out(x.numel());
  const auto a = x.data();
  const auto b = y.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(x.shape(), std::move(out), x.dtype());
}

// Id the next recorded node will get; lets a backward closure refer to its
// own op's output.
Var next_var(Tape& tape) { return Var(&tape, tape.size()); }

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  return tape_of(a).record("add", map_binary(a.value(), b.value(), std::plus<>()), {a, b},
                           [](const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  return tape_of(a).record("sub", map_binary(a.value(), b.value(), std::minus<>()), {a, b},
                           [](const Var& g) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  return tape_of(a).record("mul", map_binary(a.value(), b.value(), std::multiplies<>()), {a, b},
                           [a, b](const Var& g) { return std::vector<Var>{mul(g, b), mul(g, a)}; });
}

Var add_bcast(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    throw DimensionError("add_bcast: " + shape_string(sb) + " is not a trailing shape of " +
                         shape_string(sa));
  }
  const std::size_t nb = b.value().numel();
  const std::size_t reps = a.value().numel() / nb;
  std::vector<double> out(a.value().numel());
  const auto x = a.value().data();
  const auto y = b.value().data();
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] = x[r * nb + j] + y[j];
  }
  Shape b_shape = sb;
  return tape_of(a).record("add_bcast", Tensor(sa, std::move(out), a.value().dtype()), {a, b},
                           [reps, nb, b_shape](const Var& g) {
                             Var flat = reshape(g, {reps, nb});
                             return std::vector<Var>{g, reshape(group_sum_rows(flat, reps), b_shape)};
                           });
}

Var neg(const Var& a) {
  return tape_of(a).record("neg", map_unary(a.value(), [](double v) { return -v; }), {a},
                           [](const Var& g) { return std::vector<Var>{neg(g)}; });
}

Var scale(const Var& a, double s) {
  return tape_of(a).record("scale", map_unary(a.value(), [s](double v) { return v * s; }), {a},
                           [s](const Var& g) { return std::vector<Var>{scale(g, s)}; });
}

Var add_scalar(const Var& a, double s) {
  return tape_of(a).record("add_scalar", map_unary(a.value(), [s](double v) { return v + s; }), {a},
                           [](const Var& g) { return std::vector<Var>{g}; });
}

Var square(const Var& a) {
  return tape_of(a).record("square", map_unary(a.value(), [](double v) { return v * v; }), {a},
                           [a](const Var& g) { return std::vector<Var>{scale(mul(g, a), 2.0)}; });
}

Var cos(const Var& a) {
  return tape_of(a).record("cos", map_unary(a.value(), [](double v) { return std::cos(v); }), {a},
                           [a](const Var& g) { return std::vector<Var>{neg(mul(g, sin(a)))}; });
}

Var sin(const Var& a) {
  return tape_of(a).record("sin", map_unary(a.value(), [](double v) { return std::sin(v); }), {a},
                           [a](const Var& g) { return std::vector<Var>{mul(g, cos(a))}; });
}

Var exp(const Var& a) {
  Tape& tape = tape_of(a);
  Var y = next_var(tape);
  return tape.record("exp", map_unary(a.value(), [](double v) { return std::exp(v); }), {a},
                     [y](const Var& g) { return std::vector<Var>{mul(g, y)}; });
}

Var log(const Var& a) {
  return tape_of(a).record("log", map_unary(a.value(), [](double v) { return std::log(v); }), {a},
                           [a](const Var& g) { return std::vector<Var>{mul(g, reciprocal(a))}; });
}

Var reciprocal(const Var& a) {
  Tape& tape = tape_of(a);
  Var y = next_var(tape);
  return tape.record("reciprocal", map_unary(a.value(), [](double v) { return 1.0 / v; }), {a},
                     [y](const Var& g) { return std::vector<Var>{neg(mul(g, square(y)))}; });
}

Var tanh(const Var& a) {
  Tape& tape = tape_of(a);
  Var y = next_var(tape);
  return tape.record("tanh", map_unary(a.value(), [](double v) { return std::tanh(v); }), {a},
                     [y](const Var& g) {
                       return std::vector<Var>{mul(g, add_scalar(neg(square(y)), 1.0))};
                     });
}

Var sigmoid(const Var& a) {
  Tape& tape = tape_of(a);
  Var y = next_var(tape);
  return tape.record("sigmoid",
                     map_unary(a.value(), [](double v) { return 1.0 / (1.0 + std::exp(-v)); }), {a},
                     [y](const Var& g) {
                       return std::vector<Var>{mul(g, mul(y, add_scalar(neg(y), 1.0)))};
                     });
}

Var silu(const Var& a) { return mul(a, sigmoid(a)); }

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  Shape shape = a.shape();
  return tape_of(a).record("sum", Tensor::scalar(total, a.value().dtype()), {a},
                           [shape](const Var& g) { return std::vector<Var>{expand(g, shape)}; });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

Var expand(const Var& s, const Shape& shape) {
  if (s.value().numel() != 1) {
    throw DimensionError("expand: source must hold one element, got " + shape_string(s.shape()));
  }
  return tape_of(s).record("expand", Tensor::full(shape, s.value()[0], s.value().dtype()), {s},
                           [](const Var& g) { return std::vector<Var>{sum(g)}; });
}

Var reshape(const Var& a, Shape shape) {
  Shape from = a.shape();
  return tape_of(a).record("reshape", a.value().reshaped(std::move(shape)), {a},
                           [from](const Var& g) { return std::vector<Var>{reshape(g, from)}; });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: operands must be matrices, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const std::size_t ar = a.shape()[0], ac = a.shape()[1];
  const std::size_t br = b.shape()[0], bc = b.shape()[1];
  const std::size_t m = ta ? ac : ar;
  const std::size_t k = ta ? ar : ac;
  const std::size_t k2 = tb ? bc : br;
  const std::size_t n = tb ? br : bc;
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) +
                         (ta ? "^T" : "") + " x " + shape_string(b.shape()) + (tb ? "^T" : ""));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data();
  // Every variant accumulates each output over p in ascending order, so the
  // result does not depend on the transpose flags.
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * ac + p];
        const double* brow = B + p * bc;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = A + i * ac;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = B + j * bc;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        C[i * n + j] = acc;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = A + p * ac;
      const double* brow = B + p * bc;
      for (std::size_t i = 0; i < m; ++i) {
        const double api = arow[i];
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += A[p * ac + i] * B[j * bc + p];
        C[i * n + j] = acc;
      }
    }
  }
  return Tensor({m, n}, std::move(out), a.dtype());
}

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  Tensor out = matmul(a.value(), b.value(), ta, tb);
  return tape_of(a).record("matmul", std::move(out), {a, b}, [a, b, ta, tb](const Var& g) {
    Var da = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
    Var db = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
    return std::vector<Var>{da, db};
  });
}

Var transpose(const Var& a) {
  require_matrix("transpose", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  const auto x = a.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return tape_of(a).record("transpose", Tensor({c, r}, std::move(out), a.value().dtype()), {a},
                           [](const Var& g) { return std::vector<Var>{transpose(g)}; });
}

Var swap_last2(const Var& a) {
  if (a.value().rank() != 3) {
    throw DimensionError("swap_last2: expected rank 3, got " + shape_string(a.shape()));
  }
  const std::size_t nb = a.shape()[0], nx = a.shape()[1], ny = a.shape()[2];
  std::vector<double> out(nb * nx * ny);
  const auto x = a.value().data();
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t base = b * nx * ny;
    for (std::size_t i = 0; i < nx; ++i) {
      for (std::size_t j = 0; j < ny; ++j) out[base + j * nx + i] = x[base + i * ny + j];
    }
  }
  return tape_of(a).record("swap_last2", Tensor({nb, ny, nx}, std::move(out), a.value().dtype()),
                           {a}, [](const Var& g) { return std::vector<Var>{swap_last2(g)}; });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (begin >= end || end > c) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_string(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(r * w);
  const auto x = a.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * c + begin), w, out.begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  return tape_of(a).record("slice_cols", Tensor({r, w}, std::move(out), a.value().dtype()), {a},
                           [begin, c](const Var& g) { return std::vector<Var>{pad_cols(g, begin, c)}; });
}

Var pad_cols(const Var& a, std::size_t begin, std::size_t total) {
  require_matrix("pad_cols", a);
  const std::size_t r = a.shape()[0], w = a.shape()[1];
  if (begin + w > total) throw DimensionError("pad_cols: block does not fit");
  std::vector<double> out(r * total, 0.0);
  const auto x = a.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * w), w, out.begin() + static_cast<std::ptrdiff_t>(i * total + begin));
  }
  return tape_of(a).record("pad_cols", Tensor({r, total}, std::move(out), a.value().dtype()), {a},
                           [begin, w](const Var& g) {
                             return std::vector<Var>{slice_cols(g, begin, begin + w)};
                           });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t r = parts[0].value().rank() == 2 ? parts[0].shape()[0] : 0;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix("concat_cols", p);
    if (p.shape()[0] != r) {
      throw DimensionError("concat_cols: row counts differ: " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    offsets.push_back(total);
    total += p.shape()[1];
  }
  std::vector<double> out(r * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].shape()[1];
    const auto x = parts[k].value().data();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(i * total + offsets[k]));
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[1]);
  return tape_of(parts[0]).record(
      "concat_cols", Tensor({r, total}, std::move(out), parts[0].value().dtype()), std::move(inputs),
      [offsets, widths](const Var& g) {
        std::vector<Var> grads;
        for (std::size_t k = 0; k < offsets.size(); ++k) {
          grads.push_back(slice_cols(g, offsets[k], offsets[k] + widths[k]));
        }
        return grads;
      });
}

Var gather_rows(const Var& a, std::span<const std::size_t> index) {
  require_matrix("gather_rows", a);
  const std::size_t rows = a.shape()[0], c = a.shape()[1];
  auto idx = std::make_shared<const Index>(index.begin(), index.end());
  std::vector<double> out(idx->size() * c);
  const auto x = a.value().data();
  for (std::size_t r = 0; r < idx->size(); ++r) {
    const std::size_t src = (*idx)[r];
    if (src >= rows) throw DimensionError("gather_rows: index " + std::to_string(src) + " out of range");
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(src * c), c, out.begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  return tape_of(a).record("gather_rows", Tensor({idx->size(), c}, std::move(out), a.value().dtype()),
                           {a}, [idx, rows](const Var& g) {
                             return std::vector<Var>{scatter_add_rows(g, *idx, rows)};
                           });
}

Var scatter_add_rows(const Var& a, std::span<const std::size_t> index, std::size_t rows) {
  require_matrix("scatter_add_rows", a);
  const std::size_t c = a.shape()[1];
  if (index.size() != a.shape()[0]) throw DimensionError("scatter_add_rows: index length mismatch");
  auto idx = std::make_shared<const Index>(index.begin(), index.end());
  std::vector<double> out(rows * c, 0.0);
  const auto x = a.value().data();
  for (std::size_t r = 0; r < idx->size(); ++r) {
    const std::size_t dst = (*idx)[r];
    if (dst >= rows) throw DimensionError("scatter_add_rows: index out of range");
    for (std::size_t j = 0; j < c; ++j) out[dst * c + j] += x[r * c + j];
  }
  return tape_of(a).record("scatter_add_rows", Tensor({rows, c}, std::move(out), a.value().dtype()),
                           {a}, [idx](const Var& g) { return std::vector<Var>{gather_rows(g, *idx)}; });
}

Var repeat_rows(const Var& a, std::size_t times) {
  require_matrix("repeat_rows", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * times * c);
  const auto x = a.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t t = 0; t < times; ++t) {
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * c), c,
                  out.begin() + static_cast<std::ptrdiff_t>((i * times + t) * c));
    }
  }
  return tape_of(a).record("repeat_rows", Tensor({r * times, c}, std::move(out), a.value().dtype()),
                           {a}, [times](const Var& g) { return std::vector<Var>{group_sum_rows(g, times)}; });
}

Var group_sum_rows(const Var& a, std::size_t group) {
  require_matrix("group_sum_rows", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (group == 0 || r % group != 0) {
    throw DimensionError("group_sum_rows: " + std::to_string(r) + " rows not divisible by " +
                         std::to_string(group));
  }
  const std::size_t out_r = r / group;
  std::vector<double> out(out_r * c, 0.0);
  const auto x = a.value().data();
  for (std::size_t o = 0; o < out_r; ++o) {
    for (std::size_t t = 0; t < group; ++t) {
      const std::size_t src = (o * group + t) * c;
      for (std::size_t j = 0; j < c; ++j) out[o * c + j] += x[src + j];
    }
  }
  return tape_of(a).record("group_sum_rows", Tensor({out_r, c}, std::move(out), a.value().dtype()),
                           {a}, [group](const Var& g) { return std::vector<Var>{repeat_rows(g, group)}; });
}

Var repeat_cols(const Var& a, std::size_t times) {
  require_matrix("repeat_cols", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c * times);
  const auto x = a.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((i * c + j) * times), times, x[i * c + j]);
    }
  }
  return tape_of(a).record("repeat_cols", Tensor({r, c * times}, std::move(out), a.value().dtype()),
                           {a}, [times](const Var& g) { return std::vector<Var>{block_sum_cols(g, times)}; });
}

Var block_sum_cols(const Var& a, std::size_t block) {
  require_matrix("block_sum_cols", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (block == 0 || c % block != 0) {
    throw DimensionError("block_sum_cols: " + std::to_string(c) + " columns not divisible by " +
                         std::to_string(block));
  }
  const std::size_t out_c = c / block;
  std::vector<double> out(r * out_c, 0.0);
  const auto x = a.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < out_c; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < block; ++t) acc += x[i * c + j * block + t];
      out[i * out_c + j] = acc;
    }
  }
  return tape_of(a).record("block_sum_cols", Tensor({r, out_c}, std::move(out), a.value().dtype()),
                           {a}, [block](const Var& g) { return std::vector<Var>{repeat_cols(g, block)}; });
}

Var softmax_with_bias(const Var& logits, const Var& bias) {
  require_matrix("softmax_with_bias", logits);
  if (bias.valid()) require_same_shape("softmax_with_bias", logits, bias);
  const std::size_t r = logits.shape()[0], c = logits.shape()[1];
  const auto x = logits.value().data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) row[j] = x[i * c + j] + (bias.valid() ? bias.value()[i * c + j] : 0.0);
    const double m = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - m);
      total += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= total;
  }
  Tape& tape = tape_of(logits);
  Var y = next_var(tape);
  std::vector<Var> inputs{logits};
  if (bias.valid()) inputs.push_back(bias);
  return tape.record("softmax_with_bias", Tensor({r, c}, std::move(out), logits.value().dtype()),
                     std::move(inputs), [y, c](const Var& g) {
                       Var gy = mul(g, y);
                       Var dz = sub(gy, mul(y, repeat_cols(block_sum_cols(gy, c), c)));
                       return std::vector<Var>{dz, dz};
                     });
}

Var log_softmax_rows(const Var& a) {
  require_matrix("log_softmax_rows", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto x = a.value().data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - m);
    const double lse = m + std::log(total);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  Tape& tape = tape_of(a);
  Var y = next_var(tape);
  return tape.record("log_softmax_rows", Tensor({r, c}, std::move(out), a.value().dtype()), {a},
                     [y, c](const Var& g) {
                       Var row_total = repeat_cols(block_sum_cols(g, c), c);
                       return std::vector<Var>{sub(g, mul(exp(y), row_total))};
                     });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  require_matrix("cross_entropy", logits);
  const std::size_t b = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  }
  Tensor onehot({b, k}, logits.value().dtype());
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    }
    onehot.mutable_data()[i * k + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Var mask = tape_of(logits).constant(std::move(onehot));
  return scale(sum(mul(log_softmax_rows(logits), mask)), -1.0 / static_cast<double>(b));
}

Var mse(const Var& prediction, const Var& target) { return mean(square(sub(prediction, target))); }

}  // namespace enf
