#include "dsdrive/adapter.hpp"

#include "dsdrive/errors.hpp"

namespace dsdrive {

template <class S>
AdapterBlockParamsT<S> AdapterBlockParamsT<S>::init(Rng& rng, int d_model, int ffn_hidden,
                                                    double init_std) {
  AdapterBlockParamsT p;
  p.self_norm_gain = TensorT<S>::from({d_model}, std::vector<S>(d_model, S{1}), true);
  p.cross_norm_gain = TensorT<S>::from({d_model}, std::vector<S>(d_model, S{1}), true);
  p.ffn_norm_gain = TensorT<S>::from({d_model}, std::vector<S>(d_model, S{1}), true);
  p.self_attn = MhaParamsT<S>::init(rng, d_model, init_std);
  p.cross_attn = MhaParamsT<S>::init(rng, d_model, init_std);
  p.ffn = FfnParamsT<S>::init(rng, d_model, ffn_hidden, init_std);
  return p;
}

template <class S>
NamedParams<S> AdapterBlockParamsT<S>::named_params() {
  NamedParams<S> out{{"self_norm_gain", &self_norm_gain},
                     {"cross_norm_gain", &cross_norm_gain},
                     {"ffn_norm_gain", &ffn_norm_gain}};
  append_params(out, "self_attn", self_attn.named_params());
  append_params(out, "cross_attn", cross_attn.named_params());
  append_params(out, "ffn", ffn.named_params());
  return out;
}

template <class S>
AdapterParamsT<S> AdapterParamsT<S>::init(Rng& rng, int d_model, int n_blocks, int ffn_hidden,
                                          double init_std) {
  AdapterParamsT p;
  p.queries = TensorT<S>::zeros({kQueryTokens, d_model}, true);
  for (auto& x : p.queries.values()) x = static_cast<S>(rng.normal(0.0, init_std));
  for (int i = 0; i < n_blocks; ++i) {
    p.blocks.push_back(AdapterBlockParamsT<S>::init(rng, d_model, ffn_hidden, init_std));
  }
  p.proj_w = TensorT<S>::zeros({d_model, d_model}, true);
  for (auto& x : p.proj_w.values()) x = static_cast<S>(rng.normal(0.0, init_std));
  p.proj_b = TensorT<S>::zeros({d_model}, true);
  return p;
}

template <class S>
NamedParams<S> AdapterParamsT<S>::named_params() {
  NamedParams<S> out{{"queries", &queries}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    append_params(out, "block" + std::to_string(i), blocks[i].named_params());
  }
  out.emplace_back("proj_w", &proj_w);
  out.emplace_back("proj_b", &proj_b);
  return out;
}

template <class S>
TensorT<S> embed_text(TapeT<S>* tape, const TensorT<S>& table, const tok::TokenSequence& tokens) {
  return ops::embedding(tape, table, std::span<const int>(tokens.ids));
}

template <class S>
TensorT<S> fuse(TapeT<S>* tape, const AdapterParamsT<S>& params,
                const TensorT<S>& scene_tokens, std::span<const uint8_t> scene_mask,
                const TensorT<S>& text, int n_heads) {
  if (scene_tokens.rows() != static_cast<int64_t>(scene_mask.size())) {
    throw ShapeError("fuse: mask of " + std::to_string(scene_mask.size()) +
                     " slots for scene tokens " + shape_str(scene_tokens.shape()));
  }
  bool any_valid = false;
  for (uint8_t m : scene_mask) any_valid = any_valid || (m != 0);
  if (!any_valid) throw ValidationError("fuse: scene frame has no valid tokens");

  const int64_t k = params.queries.rows();
  const AttnMask cross_mask = AttnMask::valid_cols(k, scene_mask);

  TensorT<S> x = params.queries;
  for (const auto& block : params.blocks) {
    // self-attention over (queries ++ text); text rows are keys/values only
    std::vector<TensorT<S>> rows{x, text};
    TensorT<S> joint = ops::concat_rows(tape, rows);
    TensorT<S> joint_normed =
        ops::rmsnorm(tape, joint, block.self_norm_gain, static_cast<S>(kRmsNormEps));
    TensorT<S> q_rows = ops::slice_rows(tape, joint_normed, 0, k);
    const AttnMask self_mask = AttnMask::full(k, joint.rows());
    TensorT<S> self_out =
        multihead_attention(tape, q_rows, joint_normed, block.self_attn, n_heads, self_mask);
    x = ops::add(tape, x, self_out);

    // cross-attention of the queries over the frame's scene tokens
    TensorT<S> xn = ops::rmsnorm(tape, x, block.cross_norm_gain, static_cast<S>(kRmsNormEps));
    TensorT<S> cross_out =
        multihead_attention(tape, xn, scene_tokens, block.cross_attn, n_heads, cross_mask);
    x = ops::add(tape, x, cross_out);

    TensorT<S> fn = ops::rmsnorm(tape, x, block.ffn_norm_gain, static_cast<S>(kRmsNormEps));
    x = ops::add(tape, x, ffn_forward(tape, fn, block.ffn));
  }
  return x;
}

template <class S>
TensorT<S> project_to_lm(TapeT<S>* tape, const TensorT<S>& fused, const AdapterParamsT<S>& params) {
  return ops::affine(tape, fused, params.proj_w, params.proj_b);
}

#define DSDRIVE_INSTANTIATE_ADAPTER(S)                                                          \
  template struct AdapterBlockParamsT<S>;                                                       \
  template struct AdapterParamsT<S>;                                                            \
  template TensorT<S> embed_text<S>(TapeT<S>*, const TensorT<S>&, const tok::TokenSequence&);   \
  template TensorT<S> fuse<S>(TapeT<S>*, const AdapterParamsT<S>&, const TensorT<S>&,           \
                              std::span<const uint8_t>, const TensorT<S>&, int);                \
  template TensorT<S> project_to_lm<S>(TapeT<S>*, const TensorT<S>&, const AdapterParamsT<S>&);

DSDRIVE_INSTANTIATE_ADAPTER(double)
DSDRIVE_INSTANTIATE_ADAPTER(float)

#undef DSDRIVE_INSTANTIATE_ADAPTER

}  // namespace dsdrive
