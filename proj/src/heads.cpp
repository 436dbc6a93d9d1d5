#include "dsdrive/heads.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "dsdrive/errors.hpp"

namespace dsdrive {

void WaypointPlan::validate() const {
  for (const auto& p : points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
      throw ValidationError("waypoint plan holds a non-finite coordinate");
    }
    if (std::abs(p[0]) > kWaypointRange || std::abs(p[1]) > kWaypointRange) {
      throw ValidationError("waypoint coordinate outside +/-100 m range");
    }
  }
}

std::string format_waypoints(const WaypointPlan& plan) {
  std::string out;
  char buf[64];
  for (int i = 0; i < kWaypointCount; ++i) {
    std::snprintf(buf, sizeof(buf), "(%.2f, %.2f)", plan.points[i][0], plan.points[i][1]);
    if (i) out += ", ";
    out += buf;
  }
  return out;
}

WaypointPlan parse_waypoints_from_text(const std::string& answer) {
  const std::size_t marker = answer.find("Waypoints:");
  if (marker == std::string::npos) {
    throw ParseError("no \"Waypoints:\" list found in answer text");
  }
  const char* cursor = answer.c_str() + marker + std::string("Waypoints:").size();
  WaypointPlan plan;
  for (int i = 0; i < kWaypointCount; ++i) {
    while (*cursor == ' ' || *cursor == ',') ++cursor;
    if (*cursor != '(') {
      throw ParseError("expected 5 pairs, found " + std::to_string(i));
    }
    ++cursor;
    char* end = nullptr;
    const double x = std::strtod(cursor, &end);
    if (end == cursor) throw ParseError("pair " + std::to_string(i + 1) + " has no x coordinate");
    cursor = end;
    while (*cursor == ' ') ++cursor;
    if (*cursor != ',') throw ParseError("pair " + std::to_string(i + 1) + " missing comma");
    ++cursor;
    const double y = std::strtod(cursor, &end);
    if (end == cursor) throw ParseError("pair " + std::to_string(i + 1) + " has no y coordinate");
    cursor = end;
    while (*cursor == ' ') ++cursor;
    if (*cursor != ')') throw ParseError("pair " + std::to_string(i + 1) + " missing ')'");
    ++cursor;
    plan.points[i] = {x, y};
  }
  plan.validate();
  return plan;
}

template <class S>
HeadsParamsT<S> HeadsParamsT<S>::init(Rng& rng, int d_model, int vocab, int cot_layer_count,
                                      int cot_ffn_dim, int max_seq, double init_std) {
  auto normal = [&](Shape shape) {
    TensorT<S> t = TensorT<S>::zeros(std::move(shape), true);
    for (auto& x : t.values()) x = static_cast<S>(rng.normal(0.0, init_std));
    return t;
  };
  HeadsParamsT p;
  p.wp_w1 = normal({d_model, d_model});
  p.wp_b1 = TensorT<S>::zeros({d_model}, true);
  p.wp_w2 = normal({d_model, 2 * kWaypointCount});
  p.wp_b2 = TensorT<S>::zeros({2 * kWaypointCount}, true);
  p.end_w1 = normal({d_model, d_model});
  p.end_b1 = TensorT<S>::zeros({d_model}, true);
  p.end_w2 = normal({d_model, 2});
  p.end_b2 = TensorT<S>::zeros({2}, true);
  for (int i = 0; i < cot_layer_count; ++i) {
    p.cot_layers.push_back(
        DecoderLayerParamsT<S>::init(rng, d_model, cot_ffn_dim, /*qwen_style=*/true, init_std));
  }
  p.cot_norm_gain = TensorT<S>::from({d_model}, std::vector<S>(d_model, S{1}), true);
  p.cot_proj_w = normal({d_model, vocab});
  p.cot_proj_b = TensorT<S>::zeros({vocab}, true);
  p.cot_max_seq = max_seq;
  return p;
}

template <class S>
NamedParams<S> HeadsParamsT<S>::named_params() {
  NamedParams<S> out{
      {"wp.w1", &wp_w1},   {"wp.b1", &wp_b1},   {"wp.w2", &wp_w2},   {"wp.b2", &wp_b2},
      {"end.w1", &end_w1}, {"end.b1", &end_b1}, {"end.w2", &end_w2}, {"end.b2", &end_b2},
  };
  for (std::size_t i = 0; i < cot_layers.size(); ++i) {
    append_params(out, "cot.layer" + std::to_string(i), cot_layers[i].named_params());
  }
  out.emplace_back("cot.norm_gain", &cot_norm_gain);
  out.emplace_back("cot.proj_w", &cot_proj_w);
  out.emplace_back("cot.proj_b", &cot_proj_b);
  return out;
}

namespace {

// Hidden state at the final token position of the last frame.
template <class S>
TensorT<S> pooled_state(TapeT<S>* tape, const HiddenStatesT<S>& hidden) {
  if (hidden.length() == 0) throw ValidationError("empty hidden states");
  return ops::slice_rows(tape, hidden.h, hidden.length() - 1, 1);
}

}  // namespace

template <class S>
TensorT<S> predict_waypoints_raw(TapeT<S>* tape, const HiddenStatesT<S>& hidden,
                                 const HeadsParamsT<S>& params) {
  TensorT<S> h = pooled_state(tape, hidden);
  h = ops::affine(tape, h, params.wp_w1, params.wp_b1);
  h = ops::relu(tape, h);
  return ops::affine(tape, h, params.wp_w2, params.wp_b2);
}

template <class S>
WaypointPlan predict_waypoints(const HiddenStatesT<S>& hidden, const HeadsParamsT<S>& params) {
  TensorT<S> raw = predict_waypoints_raw<S>(nullptr, hidden, params);
  WaypointPlan plan;
  for (int i = 0; i < kWaypointCount; ++i) {
    plan.points[i][0] = std::clamp(static_cast<double>(raw.values()[2 * i]), -kWaypointRange,
                                   kWaypointRange);
    plan.points[i][1] = std::clamp(static_cast<double>(raw.values()[2 * i + 1]), -kWaypointRange,
                                   kWaypointRange);
  }
  return plan;
}

template <class S>
TensorT<S> predict_end_logits(TapeT<S>* tape, const HiddenStatesT<S>& hidden,
                              const HeadsParamsT<S>& params) {
  TensorT<S> h = pooled_state(tape, hidden);
  h = ops::affine(tape, h, params.end_w1, params.end_b1);
  h = ops::relu(tape, h);
  return ops::affine(tape, h, params.end_w2, params.end_b2);
}

template <class S>
CompletionSignal predict_end(const HiddenStatesT<S>& hidden, const HeadsParamsT<S>& params) {
  TensorT<S> logits = predict_end_logits<S>(nullptr, hidden, params);
  TensorT<S> probs = ops::softmax<S>(nullptr, logits);
  return CompletionSignal{static_cast<double>(probs.values()[1])};
}

TeacherForcingLayout teacher_forcing_layout(const tok::TokenSequence& gt_tokens) {
  if (gt_tokens.empty()) throw ValidationError("teacher forcing needs a nonempty token sequence");
  std::vector<int> tokens = gt_tokens.ids;
  if (tokens.back() != tok::kEos) tokens.push_back(tok::kEos);
  TeacherForcingLayout layout;
  layout.target_tokens.assign(tokens.begin() + 1, tokens.end());
  tokens.pop_back();
  layout.input_tokens = std::move(tokens);
  return layout;
}

template <class S>
TensorT<S> reasoning_context(TapeT<S>* tape, const HiddenStatesT<S>& hidden) {
  if (hidden.frame_boundaries.empty()) throw ValidationError("hidden states carry no frames");
  const auto [begin, end] = hidden.last_frame();
  return ops::slice_rows(tape, hidden.h, begin, end - begin);
}

namespace {

// Decode [context || embed(tokens)] through the reasoning layers; returns
// hidden rows for the token positions only. Token embeddings are clipped
// when the combined sequence would exceed cot_max_seq.
template <class S>
TensorT<S> cot_decode(TapeT<S>* tape, const TensorT<S>& context, std::span<const int> tokens,
                      const HeadsParamsT<S>& params, const TensorT<S>& token_table, int n_heads) {
  const int64_t ctx_len = context.rows();
  int64_t n_tok = static_cast<int64_t>(tokens.size());
  if (ctx_len + n_tok > params.cot_max_seq) {
    n_tok = std::max<int64_t>(0, params.cot_max_seq - ctx_len);
  }
  TensorT<S> emb = ops::embedding(tape, token_table, tokens.subspan(0, n_tok));
  std::vector<TensorT<S>> parts{context, emb};
  TensorT<S> x = ops::concat_rows(tape, parts);
  const int64_t len = x.rows();
  std::vector<int64_t> positions(static_cast<std::size_t>(len));
  for (int64_t i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = i;
  const AttnMask mask = AttnMask::causal(len);
  for (const auto& layer : params.cot_layers) {
    x = decoder_layer_forward(tape, x, layer, n_heads, mask, positions);
  }
  x = ops::rmsnorm(tape, x, params.cot_norm_gain, static_cast<S>(kRmsNormEps));
  return ops::slice_rows(tape, x, ctx_len, len - ctx_len);
}

}  // namespace

template <class S>
TeacherForcedResult<S> reason_teacher_forced(TapeT<S>* tape, const HiddenStatesT<S>& hidden,
                                             const tok::TokenSequence& gt_tokens,
                                             const HeadsParamsT<S>& params,
                                             const TensorT<S>& token_table, int n_heads) {
  TeacherForcingLayout layout = teacher_forcing_layout(gt_tokens);
  TensorT<S> context = reasoning_context(tape, hidden);
  TensorT<S> dec = cot_decode(tape, context, std::span<const int>(layout.input_tokens), params,
                              token_table, n_heads);

  // truncate decoder output and labels to their common length
  std::vector<int> targets = std::move(layout.target_tokens);
  const int64_t min_len = std::min<int64_t>(dec.rows(), static_cast<int64_t>(targets.size()));
  if (dec.rows() != static_cast<int64_t>(targets.size())) {
    dec = ops::slice_rows(tape, dec, 0, min_len);
    targets.resize(static_cast<std::size_t>(min_len));
  }

  TeacherForcedResult<S> result;
  result.logits = ops::affine(tape, dec, params.cot_proj_w, params.cot_proj_b);
  result.loss = ops::cross_entropy(tape, result.logits, std::span<const int>(targets));
  result.targets = std::move(targets);
  return result;
}

template <class S>
TensorT<S> cot_prefix_logits(TapeT<S>* tape, const TensorT<S>& context,
                             std::span<const int> prefix_tokens, const HeadsParamsT<S>& params,
                             const TensorT<S>& token_table, int n_heads) {
  TensorT<S> dec = cot_decode(tape, context, prefix_tokens, params, token_table, n_heads);
  TensorT<S> last = ops::slice_rows(tape, dec, dec.rows() - 1, 1);
  return ops::affine(tape, last, params.cot_proj_w, params.cot_proj_b);
}

template <class S>
void apply_repeat_penalty(std::span<S> logits, std::span<const int> generated, S penalty) {
  std::vector<uint8_t> seen(logits.size(), 0);
  for (int t : generated) {
    if (t < 0 || t >= static_cast<int>(logits.size()) || seen[static_cast<std::size_t>(t)]) continue;
    seen[static_cast<std::size_t>(t)] = 1;
    logits[static_cast<std::size_t>(t)] =
        logits[static_cast<std::size_t>(t)] > S{0} ? logits[static_cast<std::size_t>(t)] / penalty
                                                   : logits[static_cast<std::size_t>(t)] * penalty;
  }
}

template <class S>
ReasoningTrace reason_autoregressive(const HiddenStatesT<S>& hidden, int max_tokens, S penalty,
                                     const HeadsParamsT<S>& params, const TensorT<S>& token_table,
                                     int n_heads) {
  if (max_tokens < 1) throw ValidationError("autoregression needs max_tokens >= 1");
  TensorT<S> context = reasoning_context<S>(nullptr, hidden);
  std::vector<int> prefix{tok::kBos};
  std::vector<int> generated;
  for (int step = 0; step < max_tokens; ++step) {
    TensorT<S> logits =
        cot_prefix_logits<S>(nullptr, context, prefix, params, token_table, n_heads);
    apply_repeat_penalty<S>(logits.values(), generated, penalty);
    int best = 0;
    for (int j = 1; j < static_cast<int>(logits.numel()); ++j) {
      if (logits.values()[j] > logits.values()[best]) best = j;
    }
    generated.push_back(best);
    prefix.push_back(best);
    if (best == tok::kEos) break;
  }
  ReasoningTrace trace;
  trace.raw_tokens.ids = generated;
  trace.truncated = !generated.empty() && generated.back() != tok::kEos;
  trace.text = tok::decode(std::span<const int>(generated));
  return trace;
}

#define DSDRIVE_INSTANTIATE_HEADS(S)                                                             \
  template struct HeadsParamsT<S>;                                                               \
  template TensorT<S> predict_waypoints_raw<S>(TapeT<S>*, const HiddenStatesT<S>&,               \
                                               const HeadsParamsT<S>&);                          \
  template WaypointPlan predict_waypoints<S>(const HiddenStatesT<S>&, const HeadsParamsT<S>&);   \
  template TensorT<S> predict_end_logits<S>(TapeT<S>*, const HiddenStatesT<S>&,                  \
                                            const HeadsParamsT<S>&);                             \
  template CompletionSignal predict_end<S>(const HiddenStatesT<S>&, const HeadsParamsT<S>&);     \
  template TensorT<S> reasoning_context<S>(TapeT<S>*, const HiddenStatesT<S>&);                  \
  template TeacherForcedResult<S> reason_teacher_forced<S>(                                      \
      TapeT<S>*, const HiddenStatesT<S>&, const tok::TokenSequence&, const HeadsParamsT<S>&,     \
      const TensorT<S>&, int);                                                                   \
  template TensorT<S> cot_prefix_logits<S>(TapeT<S>*, const TensorT<S>&, std::span<const int>,   \
                                           const HeadsParamsT<S>&, const TensorT<S>&, int);      \
  template void apply_repeat_penalty<S>(std::span<S>, std::span<const int>, S);                  \
  template ReasoningTrace reason_autoregressive<S>(const HiddenStatesT<S>&, int, S,              \
                                                   const HeadsParamsT<S>&, const TensorT<S>&,    \
                                                   int);

DSDRIVE_INSTANTIATE_HEADS(double)
DSDRIVE_INSTANTIATE_HEADS(float)

#undef DSDRIVE_INSTANTIATE_HEADS

}  // namespace dsdrive
