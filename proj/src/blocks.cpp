#include "dsdrive/blocks.hpp"

#include "dsdrive/errors.hpp"

namespace dsdrive {

namespace {

template <class S>
TensorT<S> normal_tensor(Rng& rng, Shape shape, double stddev) {
  TensorT<S> t = TensorT<S>::zeros(std::move(shape), true);
  for (auto& x : t.values()) x = static_cast<S>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace

template <class S>
void append_params(NamedParams<S>& out, const std::string& prefix, NamedParams<S> sub) {
  for (auto& [name, ptr] : sub) out.emplace_back(prefix + "." + name, ptr);
}

template <class S>
MhaParamsT<S> MhaParamsT<S>::init(Rng& rng, int d_model, double init_std) {
  MhaParamsT p;
  p.wq = normal_tensor<S>(rng, {d_model, d_model}, init_std);
  p.wk = normal_tensor<S>(rng, {d_model, d_model}, init_std);
  p.wv = normal_tensor<S>(rng, {d_model, d_model}, init_std);
  p.wo = normal_tensor<S>(rng, {d_model, d_model}, init_std);
  return p;
}

template <class S>
NamedParams<S> MhaParamsT<S>::named_params() {
  return {{"wq", &wq}, {"wk", &wk}, {"wv", &wv}, {"wo", &wo}};
}

template <class S>
TensorT<S> multihead_attention(TapeT<S>* tape, const TensorT<S>& q_in, const TensorT<S>& kv_in,
                               const MhaParamsT<S>& p, int n_heads, const AttnMask& mask,
                               std::span<const int64_t> rope_positions) {
  const int64_t d = p.wq.cols();
  if (d % n_heads != 0) {
    throw ShapeError("attention width " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const int64_t head_dim = d / n_heads;
  TensorT<S> q = ops::matmul(tape, q_in, p.wq);
  TensorT<S> k = ops::matmul(tape, kv_in, p.wk);
  TensorT<S> v = ops::matmul(tape, kv_in, p.wv);
  if (!rope_positions.empty()) {
    q = ops::rope(tape, q, rope_positions, static_cast<S>(kRopeBase));
    k = ops::rope(tape, k, rope_positions, static_cast<S>(kRopeBase));
  }
  std::vector<TensorT<S>> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    TensorT<S> qh = ops::slice_cols(tape, q, h * head_dim, head_dim);
    TensorT<S> kh = ops::slice_cols(tape, k, h * head_dim, head_dim);
    TensorT<S> vh = ops::slice_cols(tape, v, h * head_dim, head_dim);
    heads.push_back(ops::causal_attention(tape, qh, kh, vh, mask));
  }
  TensorT<S> merged = ops::concat_cols(tape, heads);
  return ops::matmul(tape, merged, p.wo);
}

template <class S>
FfnParamsT<S> FfnParamsT<S>::init(Rng& rng, int d_model, int hidden, double init_std) {
  FfnParamsT p;
  p.w1 = normal_tensor<S>(rng, {d_model, hidden}, init_std);
  p.b1 = TensorT<S>::zeros({hidden}, true);
  p.w2 = normal_tensor<S>(rng, {hidden, d_model}, init_std);
  p.b2 = TensorT<S>::zeros({d_model}, true);
  return p;
}

template <class S>
NamedParams<S> FfnParamsT<S>::named_params() {
  return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
}

template <class S>
TensorT<S> ffn_forward(TapeT<S>* tape, const TensorT<S>& x, const FfnParamsT<S>& p) {
  TensorT<S> h = ops::affine(tape, x, p.w1, p.b1);
  h = ops::relu(tape, h);
  return ops::affine(tape, h, p.w2, p.b2);
}

template <class S>
GatedFfnParamsT<S> GatedFfnParamsT<S>::init(Rng& rng, int d_model, int hidden, double init_std) {
  GatedFfnParamsT p;
  p.w_gate = normal_tensor<S>(rng, {d_model, hidden}, init_std);
  p.w_up = normal_tensor<S>(rng, {d_model, hidden}, init_std);
  p.w_down = normal_tensor<S>(rng, {hidden, d_model}, init_std);
  return p;
}

template <class S>
NamedParams<S> GatedFfnParamsT<S>::named_params() {
  return {{"w_gate", &w_gate}, {"w_up", &w_up}, {"w_down", &w_down}};
}

template <class S>
TensorT<S> gated_ffn_forward(TapeT<S>* tape, const TensorT<S>& x, const GatedFfnParamsT<S>& p) {
  TensorT<S> gate = ops::silu(tape, ops::matmul(tape, x, p.w_gate));
  TensorT<S> up = ops::matmul(tape, x, p.w_up);
  return ops::matmul(tape, ops::mul(tape, gate, up), p.w_down);
}

template <class S>
DecoderLayerParamsT<S> DecoderLayerParamsT<S>::init(Rng& rng, int d_model, int ffn_hidden,
                                                    bool qwen_style, double init_std) {
  DecoderLayerParamsT p;
  p.qwen_style = qwen_style;
  p.norm1_gain = TensorT<S>::from({d_model}, std::vector<S>(d_model, S{1}), true);
  p.norm2_gain = TensorT<S>::from({d_model}, std::vector<S>(d_model, S{1}), true);
  p.attn = MhaParamsT<S>::init(rng, d_model, init_std);
  if (qwen_style) {
    p.gated_ffn = GatedFfnParamsT<S>::init(rng, d_model, ffn_hidden, init_std);
  } else {
    p.ffn = FfnParamsT<S>::init(rng, d_model, ffn_hidden, init_std);
  }
  return p;
}

template <class S>
NamedParams<S> DecoderLayerParamsT<S>::named_params() {
  NamedParams<S> out{{"norm1_gain", &norm1_gain}, {"norm2_gain", &norm2_gain}};
  append_params(out, "attn", attn.named_params());
  if (qwen_style) {
    append_params(out, "ffn", gated_ffn.named_params());
  } else {
    append_params(out, "ffn", ffn.named_params());
  }
  return out;
}

template <class S>
TensorT<S> decoder_layer_forward(TapeT<S>* tape, const TensorT<S>& x,
                                 const DecoderLayerParamsT<S>& p, int n_heads,
                                 const AttnMask& mask,
                                 std::span<const int64_t> rope_positions) {
  TensorT<S> normed = ops::rmsnorm(tape, x, p.norm1_gain, static_cast<S>(kRmsNormEps));
  TensorT<S> attn_out =
      multihead_attention(tape, normed, normed, p.attn, n_heads, mask, rope_positions);
  TensorT<S> h = ops::add(tape, x, attn_out);
  TensorT<S> normed2 = ops::rmsnorm(tape, h, p.norm2_gain, static_cast<S>(kRmsNormEps));
  TensorT<S> ffn_out = p.qwen_style ? gated_ffn_forward(tape, normed2, p.gated_ffn)
                                    : ffn_forward(tape, normed2, p.ffn);
  return ops::add(tape, h, ffn_out);
}

#define DSDRIVE_INSTANTIATE_BLOCKS(S)                                                            \
  template void append_params<S>(NamedParams<S>&, const std::string&, NamedParams<S>);           \
  template struct MhaParamsT<S>;                                                                 \
  template struct FfnParamsT<S>;                                                                 \
  template struct GatedFfnParamsT<S>;                                                            \
  template struct DecoderLayerParamsT<S>;                                                        \
  template TensorT<S> multihead_attention<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&,    \
                                             const MhaParamsT<S>&, int, const AttnMask&,        \
                                             std::span<const int64_t>);                          \
  template TensorT<S> ffn_forward<S>(TapeT<S>*, const TensorT<S>&, const FfnParamsT<S>&);        \
  template TensorT<S> gated_ffn_forward<S>(TapeT<S>*, const TensorT<S>&,                         \
                                           const GatedFfnParamsT<S>&);                           \
  template TensorT<S> decoder_layer_forward<S>(TapeT<S>*, const TensorT<S>&,                     \
                                               const DecoderLayerParamsT<S>&, int,              \
                                               const AttnMask&, std::span<const int64_t>);

DSDRIVE_INSTANTIATE_BLOCKS(double)
DSDRIVE_INSTANTIATE_BLOCKS(float)

#undef DSDRIVE_INSTANTIATE_BLOCKS

}  // namespace dsdrive
