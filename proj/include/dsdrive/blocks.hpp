#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsdrive/ops.hpp"
#include "dsdrive/rng.hpp"
#include "dsdrive/tensor.hpp"

namespace dsdrive {

inline constexpr double kRmsNormEps = 1e-6;
inline constexpr double kRopeBase = 10000.0;

template <class S>
using NamedParams = std::vector<std::pair<std::string, TensorT<S>*>>;

template <class S>
void append_params(NamedParams<S>& out, const std::string& prefix, NamedParams<S> sub);

// Attention projections, no biases.
template <class S>
struct MhaParamsT {
  TensorT<S> wq, wk, wv, wo;  // [D x D]

  static MhaParamsT init(Rng& rng, int d_model, double init_std);
  NamedParams<S> named_params();
};

// Multi-head attention of q_in rows over kv_in rows. When `rope_positions`
// is non-empty it must cover the kv rows (q_in must equal kv_in rowwise,
// i.e. self-attention) and rotary encoding is applied to q and k.
template <class S>
TensorT<S> multihead_attention(TapeT<S>* tape, const TensorT<S>& q_in, const TensorT<S>& kv_in,
                               const MhaParamsT<S>& p, int n_heads, const AttnMask& mask,
                               std::span<const int64_t> rope_positions = {});

// Two-layer feed-forward net with ReLU.
template <class S>
struct FfnParamsT {
  TensorT<S> w1, b1, w2, b2;

  static FfnParamsT init(Rng& rng, int d_model, int hidden, double init_std);
  NamedParams<S> named_params();
};

template <class S>
TensorT<S> ffn_forward(TapeT<S>* tape, const TensorT<S>& x, const FfnParamsT<S>& p);

// SiLU-gated feed-forward net (Qwen2-style), no biases.
template <class S>
struct GatedFfnParamsT {
  TensorT<S> w_gate, w_up, w_down;

  static GatedFfnParamsT init(Rng& rng, int d_model, int hidden, double init_std);
  NamedParams<S> named_params();
};

template <class S>
TensorT<S> gated_ffn_forward(TapeT<S>* tape, const TensorT<S>& x, const GatedFfnParamsT<S>& p);

// Pre-norm decoder layer: rmsnorm -> causal self-attention -> residual ->
// rmsnorm -> feed-forward -> residual. `qwen_style` swaps in rotary positions
// and the gated FFN.
template <class S>
struct DecoderLayerParamsT {
  TensorT<S> norm1_gain, norm2_gain;
  MhaParamsT<S> attn;
  FfnParamsT<S> ffn;             // used when !qwen_style
  GatedFfnParamsT<S> gated_ffn;  // used when qwen_style
  bool qwen_style = false;

  static DecoderLayerParamsT init(Rng& rng, int d_model, int ffn_hidden, bool qwen_style,
                                  double init_std);
  NamedParams<S> named_params();
};

template <class S>
TensorT<S> decoder_layer_forward(TapeT<S>* tape, const TensorT<S>& x,
                                 const DecoderLayerParamsT<S>& p, int n_heads,
                                 const AttnMask& mask,
                                 std::span<const int64_t> rope_positions = {});

}  // namespace dsdrive
