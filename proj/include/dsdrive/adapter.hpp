#pragma once

#include <vector>

#include "dsdrive/blocks.hpp"
#include "dsdrive/scene.hpp"
#include "dsdrive/tokenizer.hpp"

namespace dsdrive {

inline constexpr int kQueryTokens = 16;

// One alignment block: self-attention of the learnable queries over
// (queries + text), where text rows participate as read-only keys/values;
// cross-attention of the queries over one frame's scene tokens; then a
// two-layer feed-forward net. Pre-norm residuals throughout.
template <class S>
struct AdapterBlockParamsT {
  TensorT<S> self_norm_gain, cross_norm_gain, ffn_norm_gain;
  MhaParamsT<S> self_attn;
  MhaParamsT<S> cross_attn;
  FfnParamsT<S> ffn;

  static AdapterBlockParamsT init(Rng& rng, int d_model, int ffn_hidden, double init_std);
  NamedParams<S> named_params();
};

template <class S>
struct AdapterParamsT {
  TensorT<S> queries;  // [kQueryTokens x D], learnable
  std::vector<AdapterBlockParamsT<S>> blocks;
  TensorT<S> proj_w, proj_b;  // projection into the language-model embedding space

  static AdapterParamsT init(Rng& rng, int d_model, int n_blocks, int ffn_hidden, double init_std);
  NamedParams<S> named_params();
};

// Row lookup into the shared embedding table. Gradient accumulates per id.
template <class S>
TensorT<S> embed_text(TapeT<S>* tape, const TensorT<S>& table, const tok::TokenSequence& tokens);

// Fuses one frame's scene tokens with the text context; exactly kQueryTokens
// rows leave the adapter regardless of scene complexity.
template <class S>
TensorT<S> fuse(TapeT<S>* tape, const AdapterParamsT<S>& params,
                const TensorT<S>& scene_tokens, std::span<const uint8_t> scene_mask,
                const TensorT<S>& text, int n_heads);

template <class S>
TensorT<S> project_to_lm(TapeT<S>* tape, const TensorT<S>& fused, const AdapterParamsT<S>& params);

}  // namespace dsdrive
