#pragma once

#include <utility>
#include <vector>

#include "dsdrive/blocks.hpp"
#include "dsdrive/tokenizer.hpp"

namespace dsdrive {

struct BackboneConfig {
  int layers = 4;
  int heads = 4;
  int d_model = 128;
  int ffn_dim = 512;
  int vocab = tok::kVocabSize;
  int max_seq = 512;
};

// Interval [begin, end) of sequence rows belonging to one frame.
using FrameBoundaries = std::vector<std::pair<int64_t, int64_t>>;

// Shared hidden substrate all three heads decode from.
template <class S>
struct HiddenStatesT {
  TensorT<S> h;  // [L x D]
  FrameBoundaries frame_boundaries;

  int64_t length() const { return h.rows(); }
  const std::pair<int64_t, int64_t>& last_frame() const { return frame_boundaries.back(); }
};

template <class S>
struct BackboneParamsT {
  TensorT<S> token_table;  // [V x D], shared with text embedding and the reasoning head
  TensorT<S> pos_table;    // [max_seq x D], learned absolute positions
  std::vector<DecoderLayerParamsT<S>> layers;
  TensorT<S> final_norm_gain;

  static BackboneParamsT init(Rng& rng, const BackboneConfig& cfg, double init_std);
  NamedParams<S> named_params();
};

// Per frame t the layout is [fused scene tokens || navigation || question];
// frames are concatenated temporally. The same text embeddings repeat in
// every frame block.
template <class S>
std::pair<TensorT<S>, FrameBoundaries> assemble_sequence(
    TapeT<S>* tape, const std::vector<TensorT<S>>& scene_frames, const TensorT<S>& navigation,
    const TensorT<S>& question, int max_seq);

// Pre-norm decoder stack under a causal mask; emits hidden states, not logits.
template <class S>
HiddenStatesT<S> backbone_forward(TapeT<S>* tape, const TensorT<S>& seq,
                                  FrameBoundaries boundaries, const BackboneParamsT<S>& params,
                                  const BackboneConfig& cfg);

}  // namespace dsdrive
