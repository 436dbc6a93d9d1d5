#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dsdrive/backbone.hpp"
#include "dsdrive/blocks.hpp"
#include "dsdrive/tokenizer.hpp"

namespace dsdrive {

inline constexpr int kWaypointCount = 5;
inline constexpr double kWaypointSpacingSeconds = 0.5;
inline constexpr double kWaypointRange = 100.0;  // meters, |x| and |y| bound
inline constexpr double kDefaultRepeatPenalty = 1.2;

// Future ego-frame positions (x forward, y left), 0.5 s spacing.
struct WaypointPlan {
  std::array<std::array<double, 2>, kWaypointCount> points{};

  void validate() const;  // finite, |x|,|y| <= 100
};

// Canonical fixed two-decimal list: "(x1, y1), (x2, y2), ...".
std::string format_waypoints(const WaypointPlan& plan);

// Extracts the "Waypoints:" list from answer text. Throws ParseError naming
// the defect when the list is missing or short.
WaypointPlan parse_waypoints_from_text(const std::string& answer);

struct ReasoningTrace {
  std::string think;   // section contents, filled when the text matches the template
  std::string answer;
  std::string text;    // full decoded generation
  tok::TokenSequence raw_tokens;
  bool truncated = false;  // hit the token cap before EOS
};

struct CompletionSignal {
  double p_done = 0.5;
};

template <class S>
struct HeadsParamsT {
  // waypoint head: two MLPs with a ReLU activation in between
  TensorT<S> wp_w1, wp_b1, wp_w2, wp_b2;
  // end-state head, same family, two logits
  TensorT<S> end_w1, end_b1, end_w2, end_b2;
  // reasoning decoder: Qwen2-style layers plus a projection to vocab logits
  std::vector<DecoderLayerParamsT<S>> cot_layers;
  TensorT<S> cot_norm_gain;
  TensorT<S> cot_proj_w, cot_proj_b;
  int cot_max_seq = 512;

  static HeadsParamsT init(Rng& rng, int d_model, int vocab, int cot_layers, int cot_ffn_dim,
                           int cot_max_seq, double init_std);
  NamedParams<S> named_params();
};

// Raw [1 x 10] output at the final token position of the last frame.
template <class S>
TensorT<S> predict_waypoints_raw(TapeT<S>* tape, const HiddenStatesT<S>& hidden,
                                 const HeadsParamsT<S>& params);

// Raw output materialized as a plan; values clamped into the valid range.
template <class S>
WaypointPlan predict_waypoints(const HiddenStatesT<S>& hidden, const HeadsParamsT<S>& params);

template <class S>
TensorT<S> predict_end_logits(TapeT<S>* tape, const HiddenStatesT<S>& hidden,
                              const HeadsParamsT<S>& params);

template <class S>
CompletionSignal predict_end(const HiddenStatesT<S>& hidden, const HeadsParamsT<S>& params);

// Teacher-forcing token layout: EOS appended when missing, decoder input is
// the sequence minus its last token, targets are the sequence shifted left.
struct TeacherForcingLayout {
  std::vector<int> input_tokens;
  std::vector<int> target_tokens;
};
TeacherForcingLayout teacher_forcing_layout(const tok::TokenSequence& gt_tokens);

template <class S>
struct TeacherForcedResult {
  TensorT<S> logits;          // [n x V] at answer positions (after truncation)
  TensorT<S> loss;            // scalar cross-entropy
  std::vector<int> targets;   // labels actually scored (after truncation)
};

// Reasoning context: all hidden positions of the most recent frame.
template <class S>
TensorT<S> reasoning_context(TapeT<S>* tape, const HiddenStatesT<S>& hidden);

template <class S>
TeacherForcedResult<S> reason_teacher_forced(TapeT<S>* tape, const HiddenStatesT<S>& hidden,
                                             const tok::TokenSequence& gt_tokens,
                                             const HeadsParamsT<S>& params,
                                             const TensorT<S>& token_table, int n_heads);

// Logits at the last position after decoding [context || embed(prefix)].
// The autoregressive loop and the consistency checks both run through here.
template <class S>
TensorT<S> cot_prefix_logits(TapeT<S>* tape, const TensorT<S>& context,
                             std::span<const int> prefix_tokens, const HeadsParamsT<S>& params,
                             const TensorT<S>& token_table, int n_heads);

// logit[t] <- logit[t] / penalty if positive else logit[t] * penalty, once
// per distinct previously generated token. Never raises a generated logit.
template <class S>
void apply_repeat_penalty(std::span<S> logits, std::span<const int> generated, S penalty);

// Greedy decoding from BOS with repeat penalty; stops at EOS or max_tokens.
template <class S>
ReasoningTrace reason_autoregressive(const HiddenStatesT<S>& hidden, int max_tokens, S penalty,
                                     const HeadsParamsT<S>& params, const TensorT<S>& token_table,
                                     int n_heads);

}  // namespace dsdrive
