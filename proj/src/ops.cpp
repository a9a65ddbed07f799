#include "avsd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace avsd::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
using Eigen::Index;

// c (+)= op(a) * op(b) on row-major buffers.
template <typename T>
void gemm(const T* a, Index ar, Index ac, bool ta, const T* b, Index br, Index bc,
          bool tb, T* c, bool accumulate) {
  ConstMap<T> A(a, ar, ac);
  ConstMap<T> B(b, br, bc);
  MutMap<T> C(c, ta ? ac : ar, tb ? br : bc);
  if (!accumulate) C.setZero();
  if (!ta && !tb) {
    C.noalias() += A * B;
  } else if (ta && !tb) {
    C.noalias() += A.transpose() * B;
  } else if (!ta && tb) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
Graph<T>& same_graph(Var<T> a, Var<T> b) {
  AVSD_REQUIRE(a.valid() && b.valid(), "operation on an unbound variable");
  AVSD_REQUIRE(a.graph() == b.graph(), "operands belong to different graphs");
  return *a.graph();
}

void check_mask(MaskView valid, std::size_t n) {
  AVSD_REQUIRE(valid.empty() || valid.size() == n,
               "mask length " + std::to_string(valid.size()) + " does not match " +
                   std::to_string(n) + " entities");
}

inline bool is_valid(MaskView valid, std::size_t i) {
  return valid.empty() || valid[i] != 0;
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a, bool transpose_b) {
  Graph<T>& g = same_graph(a, b);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  AVSD_REQUIRE(A.rank() == 2, "matmul: left operand must be rank-2, got " +
                                  shape_string(A.shape()));
  AVSD_REQUIRE(B.rank() == 1 || B.rank() == 2, "matmul: right operand must be rank-1 or 2");
  const bool column = B.rank() == 1;
  AVSD_REQUIRE(!(column && transpose_b), "matmul: cannot transpose a vector operand");
  const Index ar = A.dim(0), ac = A.dim(1);
  const Index br = column ? B.size() : B.dim(0), bc = column ? 1 : B.dim(1);
  const Index m = transpose_a ? ac : ar, k = transpose_a ? ar : ac;
  const Index kb = transpose_b ? bc : br, n = transpose_b ? br : bc;
  AVSD_REQUIRE(k == kb, "matmul: inner dimensions differ (" + shape_string(A.shape()) +
                            " vs " + shape_string(B.shape()) + ")");
  Tensor<T> out(column ? Shape{std::size_t(m)} : Shape{std::size_t(m), std::size_t(n)});
  gemm(A.data(), ar, ac, transpose_a, B.data(), br, bc, transpose_b, out.data(), false);
  const auto ia = a.id(), ib = b.id();
  const bool ta = transpose_a, tb = transpose_b;
  return g.record(std::move(out), {ia, ib}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dC = gr.grad(self);
    const Tensor<T>& Av = gr.value(ia);
    const Tensor<T>& Bv = gr.value(ib);
    if (gr.requires_grad(ia)) {
      Tensor<T>& dA = gr.grad(ia);
      if (!ta)
        gemm(dC.data(), m, n, false, Bv.data(), br, bc, !tb, dA.data(), true);
      else
        gemm(Bv.data(), br, bc, tb, dC.data(), m, n, true, dA.data(), true);
    }
    if (gr.requires_grad(ib)) {
      Tensor<T>& dB = gr.grad(ib);
      if (!tb)
        gemm(Av.data(), ar, ac, !ta, dC.data(), m, n, false, dB.data(), true);
      else
        gemm(dC.data(), m, n, true, Av.data(), ar, ac, ta, dB.data(), true);
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, const Var<T>* bias) {
  Graph<T>& g = same_graph(x, weight);
  const Tensor<T>& X = x.value();
  const Tensor<T>& W = weight.value();
  AVSD_REQUIRE(W.rank() == 2, "linear: weight must be rank-2");
  AVSD_REQUIRE(X.rank() == 1 || X.rank() == 2, "linear: input must be rank-1 or 2");
  const Index n = X.rank() == 1 ? 1 : X.dim(0);
  const Index in = X.rank() == 1 ? X.size() : X.dim(1);
  const Index out_dim = W.dim(0);
  AVSD_REQUIRE(W.dim(1) == std::size_t(in),
               "linear: input width " + std::to_string(in) + " does not match weight " +
                   shape_string(W.shape()));
  std::vector<std::size_t> inputs{x.id(), weight.id()};
  if (bias) {
    AVSD_REQUIRE(bias->graph() == &g, "linear: bias belongs to a different graph");
    AVSD_REQUIRE(bias->value().size() == std::size_t(out_dim), "linear: bias size mismatch");
    inputs.push_back(bias->id());
  }
  Tensor<T> out(X.rank() == 1 ? Shape{std::size_t(out_dim)}
                              : Shape{std::size_t(n), std::size_t(out_dim)});
  gemm(X.data(), n, in, false, W.data(), out_dim, in, true, out.data(), false);
  if (bias) {
    const T* b = bias->value().data();
    for (Index r = 0; r < n; ++r)
      for (Index c = 0; c < out_dim; ++c) out[r * out_dim + c] += b[c];
  }
  const bool has_bias = bias != nullptr;
  return g.record(std::move(out), inputs, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dY = gr.grad(self);
    const auto ix = inputs[0], iw = inputs[1];
    if (gr.requires_grad(ix))
      gemm(dY.data(), n, out_dim, false, gr.value(iw).data(), out_dim, in, false,
           gr.grad(ix).data(), true);
    if (gr.requires_grad(iw))
      gemm(dY.data(), n, out_dim, true, gr.value(ix).data(), n, in, false,
           gr.grad(iw).data(), true);
    if (has_bias && gr.requires_grad(inputs[2])) {
      T* db = gr.grad(inputs[2]).data();
      for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < out_dim; ++c) db[c] += dY[r * out_dim + c];
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph(a, b);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  enum class Mode { kSame, kRow, kScalar };
  Mode mode;
  if (A.shape() == B.shape()) {
    mode = Mode::kSame;
  } else if (B.size() == 1) {
    mode = Mode::kScalar;
  } else if (A.rank() == 2 && B.rank() == 1 && B.size() == A.dim(1)) {
    mode = Mode::kRow;
  } else {
    throw ContractError("add: incompatible shapes " + shape_string(A.shape()) + " and " +
                        shape_string(B.shape()));
  }
  Tensor<T> out = A;
  const std::size_t width = B.size();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] += mode == Mode::kSame ? B[i] : mode == Mode::kScalar ? B[0] : B[i % width];
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dC = gr.grad(self);
    if (gr.requires_grad(ia)) accumulate(gr.grad(ia), dC);
    if (gr.requires_grad(ib)) {
      Tensor<T>& dB = gr.grad(ib);
      if (mode == Mode::kSame) {
        accumulate(dB, dC);
      } else {
        for (std::size_t i = 0; i < dC.size(); ++i)
          dB[mode == Mode::kScalar ? 0 : i % width] += dC[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph(a, b);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  const bool scalar = A.shape() != B.shape();
  AVSD_REQUIRE(!scalar || B.size() == 1, "mul: incompatible shapes " +
                                             shape_string(A.shape()) + " and " +
                                             shape_string(B.shape()));
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= scalar ? B[0] : B[i];
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dC = gr.grad(self);
    const Tensor<T>& Av = gr.value(ia);
    const Tensor<T>& Bv = gr.value(ib);
    if (gr.requires_grad(ia)) {
      Tensor<T>& dA = gr.grad(ia);
      for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * (scalar ? Bv[0] : Bv[i]);
    }
    if (gr.requires_grad(ib)) {
      Tensor<T>& dB = gr.grad(ib);
      for (std::size_t i = 0; i < dC.size(); ++i) dB[scalar ? 0 : i] += dC[i] * Av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Graph<T>& g = *a.graph();
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  const auto ia = a.id();
  return g.record(std::move(out), {ia}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dC = gr.grad(self);
    Tensor<T>& dA = gr.grad(ia);
    for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * factor;
  });
}

namespace {

// Elementwise op whose derivative is expressible from its output.
template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, F f, D dfdy) {
  Graph<T>& g = *a.graph();
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = f(v);
  const auto ia = a.id();
  return g.record(std::move(out), {ia}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dC = gr.grad(self);
    const Tensor<T>& Y = gr.value(self);
    Tensor<T>& dA = gr.grad(ia);
    for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * dfdy(Y[i]);
  });
}

}  // namespace

template <typename T>
Var<T> relu(Var<T> a) {
  return unary(
      a, [](T v) { return v > T(0) ? v : T(0); },
      [](T y) { return y > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary(
      a, [](T v) { return std::tanh(v); }, [](T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary(
      a, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
  AVSD_REQUIRE(!parts.empty(), "concat: no operands");
  Graph<T>& g = *parts.front().graph();
  std::vector<std::size_t> inputs;
  std::vector<std::size_t> offsets;
  std::vector<T> values;
  for (const auto& p : parts) {
    AVSD_REQUIRE(p.graph() == &g, "concat: operands belong to different graphs");
    AVSD_REQUIRE(p.value().rank() == 1, "concat: operands must be rank-1");
    inputs.push_back(p.id());
    offsets.push_back(values.size());
    values.insert(values.end(), p.value().values().begin(), p.value().values().end());
  }
  const std::size_t total = values.size();
  Tensor<T> out({total}, std::move(values));
  return g.record(std::move(out), inputs, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dC = gr.grad(self);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!gr.requires_grad(inputs[k])) continue;
      Tensor<T>& dP = gr.grad(inputs[k]);
      for (std::size_t i = 0; i < dP.size(); ++i) dP[i] += dC[offsets[k] + i];
    }
  });
}

template <typename T>
Var<T> stack_rows(std::span<const Var<T>> parts) {
  AVSD_REQUIRE(!parts.empty(), "stack_rows: no operands");
  const std::size_t width = parts.front().value().size();
  for (const auto& p : parts) {
    AVSD_REQUIRE(p.value().rank() == 1 && p.value().size() == width,
                 "stack_rows: operands must be rank-1 of equal length");
  }
  Var<T> flat = concat(parts);
  const auto iflat = flat.id();
  return flat.graph()->record(flat.value().reshaped({parts.size(), width}), {iflat},
                              [=](Graph<T>& gr, std::size_t self) {
                                accumulate(gr.grad(iflat), gr.grad(self));
                              });
}

template <typename T>
Var<T> row(Var<T> m, std::size_t r) {
  const Tensor<T>& M = m.value();
  AVSD_REQUIRE(M.rank() == 2 && r < M.dim(0), "row: index out of range");
  const std::size_t w = M.dim(1);
  Tensor<T> out({w}, std::vector<T>(M.data() + r * w, M.data() + (r + 1) * w));
  const auto im = m.id();
  return m.graph()->record(std::move(out), {im}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dC = gr.grad(self);
    Tensor<T>& dM = gr.grad(im);
    for (std::size_t i = 0; i < w; ++i) dM[r * w + i] += dC[i];
  });
}

template <typename T>
Var<T> rows(Var<T> m, std::size_t begin, std::size_t count) {
  const Tensor<T>& M = m.value();
  AVSD_REQUIRE(M.rank() == 2 && count > 0 && begin + count <= M.dim(0),
               "rows: range out of bounds");
  const std::size_t w = M.dim(1);
  Tensor<T> out({count, w},
                std::vector<T>(M.data() + begin * w, M.data() + (begin + count) * w));
  const auto im = m.id();
  return m.graph()->record(std::move(out), {im}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dC = gr.grad(self);
    Tensor<T>& dM = gr.grad(im);
    for (std::size_t i = 0; i < count * w; ++i) dM[begin * w + i] += dC[i];
  });
}

template <typename T>
Var<T> slice(Var<T> v, std::size_t begin, std::size_t count) {
  const Tensor<T>& V = v.value();
  AVSD_REQUIRE(V.rank() == 1 && count > 0 && begin + count <= V.size(),
               "slice: range out of bounds");
  Tensor<T> out({count}, std::vector<T>(V.data() + begin, V.data() + begin + count));
  const auto iv = v.id();
  return v.graph()->record(std::move(out), {iv}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dC = gr.grad(self);
    Tensor<T>& dV = gr.grad(iv);
    for (std::size_t i = 0; i < count; ++i) dV[begin + i] += dC[i];
  });
}

template <typename T>
Var<T> element(Var<T> v, std::size_t index) {
  return slice(v, index, 1);
}

template <typename T>
Var<T> sum(Var<T> v) {
  T total = T(0);
  for (auto x : v.value().values()) total += x;
  const auto iv = v.id();
  return v.graph()->record(Tensor<T>({1}, {total}), {iv},
                           [=](Graph<T>& gr, std::size_t self) {
                             const T d = gr.grad(self)[0];
                             for (auto& x : gr.grad(iv).values()) x += d;
                           });
}

template <typename T>
Var<T> softmax(Var<T> v, MaskView valid) {
  const Tensor<T>& V = v.value();
  AVSD_REQUIRE(V.rank() == 1 && V.size() > 0, "softmax: input must be a nonempty vector");
  check_mask(valid, V.size());
  T max_v = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < V.size(); ++i)
    if (is_valid(valid, i)) max_v = std::max(max_v, V[i]);
  AVSD_REQUIRE(std::isfinite(max_v), "softmax: every entry is masked");
  Tensor<T> out({V.size()});
  T total = T(0);
  for (std::size_t i = 0; i < V.size(); ++i) {
    if (!is_valid(valid, i)) continue;
    out[i] = std::exp(V[i] - max_v);
    total += out[i];
  }
  for (auto& p : out.values()) p /= total;
  const auto iv = v.id();
  return v.graph()->record(std::move(out), {iv}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dP = gr.grad(self);
    const Tensor<T>& P = gr.value(self);
    T dot = T(0);
    for (std::size_t i = 0; i < P.size(); ++i) dot += P[i] * dP[i];
    Tensor<T>& dV = gr.grad(iv);
    for (std::size_t i = 0; i < P.size(); ++i) dV[i] += P[i] * (dP[i] - dot);
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::size_t target, MaskView valid) {
  const Tensor<T>& Z = logits.value();
  AVSD_REQUIRE(Z.rank() == 1 && Z.size() > 0, "cross_entropy: logits must be a vector");
  AVSD_REQUIRE(target < Z.size(), "cross_entropy: target out of range");
  check_mask(valid, Z.size());
  AVSD_REQUIRE(is_valid(valid, target), "cross_entropy: target is masked");
  T max_z = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < Z.size(); ++i)
    if (is_valid(valid, i)) max_z = std::max(max_z, Z[i]);
  std::vector<T> probs(Z.size(), T(0));
  T total = T(0);
  for (std::size_t i = 0; i < Z.size(); ++i) {
    if (!is_valid(valid, i)) continue;
    probs[i] = std::exp(Z[i] - max_z);
    total += probs[i];
  }
  for (auto& p : probs) p /= total;
  const T loss = std::log(total) + max_z - Z[target];
  const auto iz = logits.id();
  return logits.graph()->record(Tensor<T>({1}, {loss}), {iz},
                                [=](Graph<T>& gr, std::size_t self) {
                                  const T d = gr.grad(self)[0];
                                  Tensor<T>& dZ = gr.grad(iz);
                                  for (std::size_t i = 0; i < probs.size(); ++i)
                                    dZ[i] += d * (probs[i] - (i == target ? T(1) : T(0)));
                                });
}

template <typename T>
Var<T> l2_normalize(Var<T> v) {
  const Tensor<T>& V = v.value();
  AVSD_REQUIRE(V.rank() == 1 || V.rank() == 2, "l2_normalize: rank-1 or rank-2 input");
  const std::size_t n = V.rows(), w = V.cols();
  Tensor<T> out(V.shape());
  std::vector<T> norms(n, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    T sq = T(0);
    for (std::size_t i = 0; i < w; ++i) sq += V[r * w + i] * V[r * w + i];
    const T norm = std::sqrt(sq);
    if (norm <= T(kNormEpsilon)) continue;
    norms[r] = norm;
    for (std::size_t i = 0; i < w; ++i) out[r * w + i] = V[r * w + i] / norm;
  }
  const auto iv = v.id();
  return v.graph()->record(std::move(out), {iv}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dY = gr.grad(self);
    const Tensor<T>& Y = gr.value(self);
    Tensor<T>& dV = gr.grad(iv);
    for (std::size_t r = 0; r < n; ++r) {
      if (norms[r] == T(0)) continue;
      T dot = T(0);
      for (std::size_t i = 0; i < w; ++i) dot += Y[r * w + i] * dY[r * w + i];
      for (std::size_t i = 0; i < w; ++i)
        dV[r * w + i] += (dY[r * w + i] - Y[r * w + i] * dot) / norms[r];
    }
  });
}

template <typename T>
Var<T> mean_rows(Var<T> m, MaskView valid) {
  const Tensor<T>& M = m.value();
  AVSD_REQUIRE(M.rank() == 2, "mean_rows: input must be rank-2");
  const std::size_t n = M.dim(0), w = M.dim(1);
  check_mask(valid, n);
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) count += is_valid(valid, r) ? 1 : 0;
  Tensor<T> out({w});
  if (count > 0) {
    for (std::size_t r = 0; r < n; ++r) {
      if (!is_valid(valid, r)) continue;
      for (std::size_t i = 0; i < w; ++i) out[i] += M[r * w + i];
    }
    for (auto& x : out.values()) x /= T(count);
  }
  const Mask keep(valid.begin(), valid.end());
  const auto im = m.id();
  return m.graph()->record(std::move(out), {im}, [=](Graph<T>& gr, std::size_t self) {
    if (count == 0) return;
    const Tensor<T>& dY = gr.grad(self);
    Tensor<T>& dM = gr.grad(im);
    for (std::size_t r = 0; r < n; ++r) {
      if (!is_valid(keep, r)) continue;
      for (std::size_t i = 0; i < w; ++i) dM[r * w + i] += dY[i] / T(count);
    }
  });
}

template <typename T>
Var<T> lookup(Var<T> table, std::span<const int> ids) {
  const Tensor<T>& E = table.value();
  AVSD_REQUIRE(E.rank() == 2, "lookup: table must be rank-2");
  AVSD_REQUIRE(!ids.empty(), "lookup: no ids");
  const std::size_t vocab = E.dim(0), w = E.dim(1);
  std::vector<int> rows_ids(ids.begin(), ids.end());
  Tensor<T> out({rows_ids.size(), w});
  for (std::size_t r = 0; r < rows_ids.size(); ++r) {
    const int id = rows_ids[r];
    AVSD_REQUIRE(id >= 0 && std::size_t(id) < vocab,
                 "lookup: token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(vocab));
    std::copy_n(E.data() + std::size_t(id) * w, w, out.data() + r * w);
  }
  const auto it = table.id();
  return table.graph()->record(std::move(out), {it}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dY = gr.grad(self);
    Tensor<T>& dE = gr.grad(it);
    for (std::size_t r = 0; r < rows_ids.size(); ++r)
      for (std::size_t i = 0; i < w; ++i) dE[std::size_t(rows_ids[r]) * w + i] += dY[r * w + i];
  });
}

template <typename T>
Var<T> lookup(Var<T> table, int id) {
  const int ids[1] = {id};
  Var<T> m = lookup(table, std::span<const int>(ids, 1));
  return row(m, 0);
}

template <typename T>
LstmState<T> lstm_cell(Var<T> x, const LstmState<T>& state, const LstmCellParams<T>& p) {
  Graph<T>& g = *x.graph();
  const Tensor<T>& X = x.value();
  const Tensor<T>& H = state.h.value();
  const Tensor<T>& C = state.c.value();
  const Tensor<T>& Wx = p.input_weights.value();
  const Tensor<T>& Wh = p.hidden_weights.value();
  const Tensor<T>& B = p.bias.value();
  AVSD_REQUIRE(X.rank() == 1 && H.rank() == 1 && C.rank() == 1,
               "lstm_cell: x, h and c must be vectors");
  const std::size_t hidden = H.size(), in = X.size();
  AVSD_REQUIRE(C.size() == hidden, "lstm_cell: h and c sizes differ");
  AVSD_REQUIRE(Wx.rank() == 2 && Wx.dim(0) == 4 * hidden && Wx.dim(1) == in,
               "lstm_cell: input weights " + shape_string(Wx.shape()) + " do not match x[" +
                   std::to_string(in) + "], h[" + std::to_string(hidden) + "]");
  AVSD_REQUIRE(Wh.rank() == 2 && Wh.dim(0) == 4 * hidden && Wh.dim(1) == hidden,
               "lstm_cell: hidden weights do not match hidden size");
  AVSD_REQUIRE(B.size() == 4 * hidden, "lstm_cell: bias size mismatch");

  std::vector<T> z(B.values().begin(), B.values().end());
  const Index H4 = Index(4 * hidden);
  gemm(Wx.data(), H4, Index(in), false, X.data(), Index(in), 1, false, z.data(), true);
  gemm(Wh.data(), H4, Index(hidden), false, H.data(), Index(hidden), 1, false, z.data(), true);

  // gates: [input | forget | candidate | output]
  std::vector<T> gates(4 * hidden), tanh_c(hidden);
  Tensor<T> out({2 * hidden});
  for (std::size_t j = 0; j < hidden; ++j) {
    const T ig = T(1) / (T(1) + std::exp(-z[j]));
    const T fg = T(1) / (T(1) + std::exp(-z[hidden + j]));
    const T cg = std::tanh(z[2 * hidden + j]);
    const T og = T(1) / (T(1) + std::exp(-z[3 * hidden + j]));
    gates[j] = ig;
    gates[hidden + j] = fg;
    gates[2 * hidden + j] = cg;
    gates[3 * hidden + j] = og;
    const T c_new = fg * C[j] + ig * cg;
    tanh_c[j] = std::tanh(c_new);
    out[j] = og * tanh_c[j];
    out[hidden + j] = c_new;
  }
  const auto ix = x.id(), ih = state.h.id(), ic = state.c.id();
  const auto iwx = p.input_weights.id(), iwh = p.hidden_weights.id(), ib = p.bias.id();
  Var<T> joint = g.record(
      std::move(out), {ix, ih, ic, iwx, iwh, ib}, [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dOut = gr.grad(self);
        const Tensor<T>& Cv = gr.value(ic);
        std::vector<T> dz(4 * hidden);
        std::vector<T> dc_prev(hidden);
        for (std::size_t j = 0; j < hidden; ++j) {
          const T ig = gates[j], fg = gates[hidden + j];
          const T cg = gates[2 * hidden + j], og = gates[3 * hidden + j];
          const T dh = dOut[j];
          const T dc = dOut[hidden + j] + dh * og * (T(1) - tanh_c[j] * tanh_c[j]);
          dz[j] = dc * cg * ig * (T(1) - ig);
          dz[hidden + j] = dc * Cv[j] * fg * (T(1) - fg);
          dz[2 * hidden + j] = dc * ig * (T(1) - cg * cg);
          dz[3 * hidden + j] = dh * tanh_c[j] * og * (T(1) - og);
          dc_prev[j] = dc * fg;
        }
        if (gr.requires_grad(ic)) {
          Tensor<T>& dC = gr.grad(ic);
          for (std::size_t j = 0; j < hidden; ++j) dC[j] += dc_prev[j];
        }
        if (gr.requires_grad(ix))
          gemm(gr.value(iwx).data(), H4, Index(in), true, dz.data(), H4, 1, false,
               gr.grad(ix).data(), true);
        if (gr.requires_grad(ih))
          gemm(gr.value(iwh).data(), H4, Index(hidden), true, dz.data(), H4, 1, false,
               gr.grad(ih).data(), true);
        if (gr.requires_grad(iwx))
          gemm(dz.data(), H4, 1, false, gr.value(ix).data(), 1, Index(in), false,
               gr.grad(iwx).data(), true);
        if (gr.requires_grad(iwh))
          gemm(dz.data(), H4, 1, false, gr.value(ih).data(), 1, Index(hidden), false,
               gr.grad(iwh).data(), true);
        if (gr.requires_grad(ib)) {
          Tensor<T>& dB = gr.grad(ib);
          for (std::size_t j = 0; j < 4 * hidden; ++j) dB[j] += dz[j];
        }
      });
  return {slice(joint, 0, hidden), slice(joint, hidden, hidden)};
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng) {
  AVSD_REQUIRE(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor<T> mask(x.value().shape());
  const T kept = T(1.0 / (1.0 - rate));
  for (auto& m : mask.values()) m = keep(rng) ? kept : T(0);
  return mul(x, x.graph()->constant(std::move(mask)));
}

#define AVSD_INSTANTIATE_OPS(T)                                                        \
  template Var<T> matmul(Var<T>, Var<T>, bool, bool);                                  \
  template Var<T> linear(Var<T>, Var<T>, const Var<T>*);                               \
  template Var<T> add(Var<T>, Var<T>);                                                 \
  template Var<T> mul(Var<T>, Var<T>);                                                 \
  template Var<T> scale(Var<T>, T);                                                    \
  template Var<T> relu(Var<T>);                                                        \
  template Var<T> tanh(Var<T>);                                                        \
  template Var<T> sigmoid(Var<T>);                                                     \
  template Var<T> concat(std::span<const Var<T>>);                                     \
  template Var<T> stack_rows(std::span<const Var<T>>);                                 \
  template Var<T> row(Var<T>, std::size_t);                                            \
  template Var<T> rows(Var<T>, std::size_t, std::size_t);                              \
  template Var<T> slice(Var<T>, std::size_t, std::size_t);                             \
  template Var<T> element(Var<T>, std::size_t);                                        \
  template Var<T> sum(Var<T>);                                                         \
  template Var<T> softmax(Var<T>, MaskView);                                           \
  template Var<T> cross_entropy(Var<T>, std::size_t, MaskView);                        \
  template Var<T> l2_normalize(Var<T>);                                                \
  template Var<T> mean_rows(Var<T>, MaskView);                                         \
  template Var<T> lookup(Var<T>, std::span<const int>);                                \
  template Var<T> lookup(Var<T>, int);                                                 \
  template LstmState<T> lstm_cell(Var<T>, const LstmState<T>&, const LstmCellParams<T>&); \
  template Var<T> dropout(Var<T>, double, std::mt19937_64&);

AVSD_INSTANTIATE_OPS(float)
AVSD_INSTANTIATE_OPS(double)

}  // namespace avsd::ops
