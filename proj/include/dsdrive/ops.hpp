#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dsdrive/tensor.hpp"

namespace dsdrive {

// Attention permission mask, row-major [n_q x n_kv]; allow[i*n_kv+j] != 0
// means query row i may attend key j.
struct AttnMask {
  int64_t n_q = 0;
  int64_t n_kv = 0;
  std::vector<uint8_t> allow;

  static AttnMask full(int64_t n_q, int64_t n_kv);
  static AttnMask causal(int64_t n);
  // Same column validity for every query row.
  static AttnMask valid_cols(int64_t n_q, std::span<const uint8_t> valid);

  bool at(int64_t i, int64_t j) const { return allow[i * n_kv + j] != 0; }
};

namespace ops {

// All ops run eagerly; when `tape` is non-null and any input is tracked, the
// output gets a gradient buffer and a backward step is recorded. Every op
// validates shapes and rejects non-finite outputs.

template <class S>
TensorT<S> add(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);
template <class S>
TensorT<S> sub(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);
template <class S>
TensorT<S> mul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);
template <class S>
TensorT<S> scale(TapeT<S>* tape, const TensorT<S>& a, S c);

// x: [m x n], bias: [n]; adds bias to every row.
template <class S>
TensorT<S> add_bias(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& bias);

// a: [m x k], b: [k x n] -> [m x n].
template <class S>
TensorT<S> matmul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);
// a: [m x k], b: [n x k] -> a * b^T, [m x n].
template <class S>
TensorT<S> matmul_nt(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);

// matmul(x, w) + bias.
template <class S>
TensorT<S> affine(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias);

template <class S>
TensorT<S> relu(TapeT<S>* tape, const TensorT<S>& x);
template <class S>
TensorT<S> silu(TapeT<S>* tape, const TensorT<S>& x);

// Softmax over the last axis, max-subtracted for stability. Rows sum to 1.
template <class S>
TensorT<S> softmax(TapeT<S>* tape, const TensorT<S>& x);

// x: [n_q x n_kv]; disallowed entries get probability exactly 0. A row with
// no allowed entry is an error.
template <class S>
TensorT<S> masked_softmax(TapeT<S>* tape, const TensorT<S>& x, const AttnMask& mask);

// y_i = x_i / sqrt(mean(x^2) + eps) * gain_i over the last axis.
template <class S>
TensorT<S> rmsnorm(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& gain, S eps);

// Rotary position encoding: row i gets its (2j, 2j+1) pairs rotated by
// positions[i] * base^(-2j/d).
template <class S>
TensorT<S> rope(TapeT<S>* tape, const TensorT<S>& x, std::span<const int64_t> positions, S base);

// softmax(q k^T / sqrt(d), masked) v for a single head.
template <class S>
TensorT<S> causal_attention(TapeT<S>* tape, const TensorT<S>& q, const TensorT<S>& k,
                            const TensorT<S>& v, const AttnMask& mask);

// Mean over rows of -log softmax(logits)[target].
template <class S>
TensorT<S> cross_entropy(TapeT<S>* tape, const TensorT<S>& logits, std::span<const int> targets);

// Mean absolute difference over all elements; subgradient at 0 is 0.
template <class S>
TensorT<S> l1_loss(TapeT<S>* tape, const TensorT<S>& pred, const TensorT<S>& target);

// Row lookup: table [V x D], ids -> [len(ids) x D]. Gradients accumulate per id.
template <class S>
TensorT<S> embedding(TapeT<S>* tape, const TensorT<S>& table, std::span<const int> ids);

template <class S>
TensorT<S> concat_rows(TapeT<S>* tape, const std::vector<TensorT<S>>& parts);
template <class S>
TensorT<S> slice_rows(TapeT<S>* tape, const TensorT<S>& x, int64_t start, int64_t n);
template <class S>
TensorT<S> concat_cols(TapeT<S>* tape, const std::vector<TensorT<S>>& parts);
template <class S>
TensorT<S> slice_cols(TapeT<S>* tape, const TensorT<S>& x, int64_t start, int64_t n);

}  // namespace ops
}  // namespace dsdrive
