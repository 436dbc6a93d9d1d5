#include "dsdrive/model.hpp"

#include "dsdrive/errors.hpp"

namespace dsdrive {

template <class S>
DrivingModelT<S> DrivingModelT<S>::init(const ModelConfig& cfg, uint64_t seed) {
  if (cfg.backbone.d_model % cfg.backbone.heads != 0) {
    throw ValidationError("model width not divisible by head count");
  }
  Rng rng(seed);
  DrivingModelT m;
  m.cfg = cfg;
  m.scene = SceneEncoderParamsT<S>::init(rng, cfg.backbone.d_model, cfg.init_std);
  m.adapter = AdapterParamsT<S>::init(rng, cfg.backbone.d_model, cfg.adapter_blocks,
                                      cfg.adapter_ffn_dim, cfg.init_std);
  m.backbone = BackboneParamsT<S>::init(rng, cfg.backbone, cfg.init_std);
  m.heads = HeadsParamsT<S>::init(rng, cfg.backbone.d_model, cfg.backbone.vocab, cfg.cot_layers,
                                  cfg.cot_ffn_dim, cfg.cot_max_seq, cfg.init_std);
  return m;
}

template <class S>
NamedParams<S> DrivingModelT<S>::named_params() {
  NamedParams<S> out;
  append_params(out, "scene", scene.named_params());
  append_params(out, "adapter", adapter.named_params());
  append_params(out, "backbone", backbone.named_params());
  append_params(out, "heads", heads.named_params());
  return out;
}

template <class S>
std::vector<TensorT<S>> DrivingModelT<S>::param_tensors() {
  std::vector<TensorT<S>> out;
  for (auto& [name, t] : named_params()) out.push_back(*t);
  return out;
}

template <class S>
int64_t DrivingModelT<S>::num_params() {
  int64_t n = 0;
  for (auto& [name, t] : named_params()) n += t->numel();
  return n;
}

template <class S>
void DrivingModelT<S>::zero_grads() {
  for (auto& [name, t] : named_params()) t->zero_grad();
}

template <class S>
HiddenStatesT<S> DrivingModelT<S>::encode(TapeT<S>* tape, const SceneSequence& frames,
                                          const std::string& navigation,
                                          const std::string& question) const {
  SceneFeaturesT<S> features = encode_sequence(tape, frames, scene);
  TensorT<S> nav_emb = embed_text(tape, backbone.token_table, tok::encode(navigation));
  TensorT<S> qn_emb = embed_text(tape, backbone.token_table, tok::encode(question));
  std::vector<TensorT<S>> text_parts{nav_emb, qn_emb};
  TensorT<S> text = ops::concat_rows(tape, text_parts);

  std::vector<TensorT<S>> fused_frames;
  fused_frames.reserve(features.frames.size());
  for (int t = 0; t < features.length(); ++t) {
    TensorT<S> fused = fuse(tape, adapter, features.frames[t],
                            std::span<const uint8_t>(features.masks[t]), text, cfg.adapter_heads);
    fused_frames.push_back(project_to_lm(tape, fused, adapter));
  }

  auto [seq, boundaries] =
      assemble_sequence(tape, fused_frames, nav_emb, qn_emb, cfg.backbone.max_seq);
  return backbone_forward(tape, seq, std::move(boundaries), backbone, cfg.backbone);
}

template <class S>
InferenceResult DrivingModelT<S>::infer(const SceneSequence& frames, const std::string& navigation,
                                        const std::string& question, bool with_trace) const {
  HiddenStatesT<S> hidden = encode(nullptr, frames, navigation, question);
  InferenceResult result;
  result.plan = predict_waypoints(hidden, heads);
  result.completion = predict_end(hidden, heads);
  if (with_trace) {
    result.trace = reason_autoregressive(hidden, cfg.max_answer_tokens,
                                         static_cast<S>(cfg.repeat_penalty), heads,
                                         backbone.token_table, cfg.backbone.heads);
  }
  return result;
}

template struct DrivingModelT<double>;
template struct DrivingModelT<float>;

}  // namespace dsdrive
