#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "avsd/autodiff.hpp"

namespace avsd {

/// Entity validity mask: 1 = real entity, 0 = padding. An empty mask means
/// every entity is valid.
using Mask = std::vector<std::uint8_t>;
using MaskView = std::span<const std::uint8_t>;

inline constexpr double kNormEpsilon = 1e-12;

template <typename T>
struct LstmCellParams {
  Var<T> input_weights;   // [4H x I], gate order: input, forget, candidate, output
  Var<T> hidden_weights;  // [4H x H]
  Var<T> bias;            // [4H]
};

template <typename T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

namespace ops {

/// op(a) * op(b). `a` must be rank-2; `b` may be rank-1 (treated as a column),
/// in which case the result is rank-1.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a = false, bool transpose_b = false);

/// x * W^T + b for x of shape [in] or [n x in], W of shape [out x in]. Applied
/// row-wise this is the kernel-size-1 (pointwise) 1-D convolution.
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, const Var<T>* bias = nullptr);

/// Elementwise sum. `b` may also be a row vector broadcast over the rows of a
/// rank-2 `a`, or a single-element tensor broadcast everywhere.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// Elementwise product; `b` may be a single-element tensor.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T factor);

template <typename T>
Var<T> relu(Var<T> a);
template <typename T>
Var<T> tanh(Var<T> a);
template <typename T>
Var<T> sigmoid(Var<T> a);

/// Concatenation of rank-1 tensors.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts);

/// Stacks equally sized rank-1 tensors into the rows of a matrix.
template <typename T>
Var<T> stack_rows(std::span<const Var<T>> rows);

template <typename T>
Var<T> row(Var<T> m, std::size_t r);
template <typename T>
Var<T> rows(Var<T> m, std::size_t begin, std::size_t count);
template <typename T>
Var<T> slice(Var<T> v, std::size_t begin, std::size_t count);
/// Single element of a rank-1 tensor as a shape-[1] tensor.
template <typename T>
Var<T> element(Var<T> v, std::size_t index);
template <typename T>
Var<T> sum(Var<T> v);

/// Max-subtracted softmax of a rank-1 tensor. Masked entries get exactly 0.
template <typename T>
Var<T> softmax(Var<T> v, MaskView valid = {});

/// -log softmax(logits)[target], restricted to valid entries.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::size_t target, MaskView valid = {});

/// Unit-norm rows (or the vector itself for rank-1). Rows whose norm is at
/// most kNormEpsilon map to zero.
template <typename T>
Var<T> l2_normalize(Var<T> v);

/// Mean over the valid rows of a matrix; zero vector when no row is valid.
template <typename T>
Var<T> mean_rows(Var<T> m, MaskView valid = {});

/// Rows of `table` selected by `ids`, shape [ids.size() x dim].
template <typename T>
Var<T> lookup(Var<T> table, std::span<const int> ids);
template <typename T>
Var<T> lookup(Var<T> table, int id);

template <typename T>
LstmState<T> lstm_cell(Var<T> x, const LstmState<T>& state, const LstmCellParams<T>& p);

/// Inverted dropout: kept units are scaled by 1 / (1 - rate).
template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng);

}  // namespace ops
}  // namespace avsd
