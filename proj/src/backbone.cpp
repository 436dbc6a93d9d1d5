#include "dsdrive/backbone.hpp"

#include "dsdrive/errors.hpp"

namespace dsdrive {

template <class S>
BackboneParamsT<S> BackboneParamsT<S>::init(Rng& rng, const BackboneConfig& cfg, double init_std) {
  BackboneParamsT p;
  p.token_table = TensorT<S>::zeros({cfg.vocab, cfg.d_model}, true);
  for (auto& x : p.token_table.values()) x = static_cast<S>(rng.normal(0.0, init_std));
  p.pos_table = TensorT<S>::zeros({cfg.max_seq, cfg.d_model}, true);
  for (auto& x : p.pos_table.values()) x = static_cast<S>(rng.normal(0.0, init_std));
  for (int i = 0; i < cfg.layers; ++i) {
    p.layers.push_back(
        DecoderLayerParamsT<S>::init(rng, cfg.d_model, cfg.ffn_dim, /*qwen_style=*/false, init_std));
  }
  p.final_norm_gain = TensorT<S>::from({cfg.d_model}, std::vector<S>(cfg.d_model, S{1}), true);
  return p;
}

template <class S>
NamedParams<S> BackboneParamsT<S>::named_params() {
  NamedParams<S> out{{"token_table", &token_table}, {"pos_table", &pos_table}};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    append_params(out, "layer" + std::to_string(i), layers[i].named_params());
  }
  out.emplace_back("final_norm_gain", &final_norm_gain);
  return out;
}

template <class S>
std::pair<TensorT<S>, FrameBoundaries> assemble_sequence(
    TapeT<S>* tape, const std::vector<TensorT<S>>& scene_frames, const TensorT<S>& navigation,
    const TensorT<S>& question, int max_seq) {
  if (scene_frames.empty()) throw ValidationError("assemble_sequence: no frames");
  FrameBoundaries boundaries;
  std::vector<TensorT<S>> parts;
  int64_t at = 0;
  for (const auto& fused : scene_frames) {
    const int64_t frame_len = fused.rows() + navigation.rows() + question.rows();
    boundaries.emplace_back(at, at + frame_len);
    parts.push_back(fused);
    parts.push_back(navigation);
    parts.push_back(question);
    at += frame_len;
  }
  if (at > max_seq) {
    throw ValidationError("assembled sequence of " + std::to_string(at) +
                          " tokens exceeds max_seq " + std::to_string(max_seq));
  }
  return {ops::concat_rows(tape, parts), std::move(boundaries)};
}

template <class S>
HiddenStatesT<S> backbone_forward(TapeT<S>* tape, const TensorT<S>& seq,
                                  FrameBoundaries boundaries, const BackboneParamsT<S>& params,
                                  const BackboneConfig& cfg) {
  const int64_t len = seq.rows();
  if (len > cfg.max_seq) {
    throw ValidationError("sequence of " + std::to_string(len) + " tokens exceeds max_seq " +
                          std::to_string(cfg.max_seq));
  }
  TensorT<S> positions = ops::slice_rows(tape, params.pos_table, 0, len);
  TensorT<S> x = ops::add(tape, seq, positions);
  const AttnMask mask = AttnMask::causal(len);
  for (const auto& layer : params.layers) {
    x = decoder_layer_forward(tape, x, layer, cfg.heads, mask);
  }
  x = ops::rmsnorm(tape, x, params.final_norm_gain, static_cast<S>(kRmsNormEps));
  return {std::move(x), std::move(boundaries)};
}

#define DSDRIVE_INSTANTIATE_BACKBONE(S)                                                        \
  template struct BackboneParamsT<S>;                                                          \
  template std::pair<TensorT<S>, FrameBoundaries> assemble_sequence<S>(                        \
      TapeT<S>*, const std::vector<TensorT<S>>&, const TensorT<S>&, const TensorT<S>&, int);   \
  template HiddenStatesT<S> backbone_forward<S>(TapeT<S>*, const TensorT<S>&, FrameBoundaries, \
                                                const BackboneParamsT<S>&, const BackboneConfig&);

DSDRIVE_INSTANTIATE_BACKBONE(double)
DSDRIVE_INSTANTIATE_BACKBONE(float)

#undef DSDRIVE_INSTANTIATE_BACKBONE

}  // namespace dsdrive
