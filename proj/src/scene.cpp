#include "dsdrive/scene.hpp"

#include <algorithm>
#include <cmath>

#include "dsdrive/errors.hpp"

namespace dsdrive {

std::string actor_kind_name(ActorKind k) {
  switch (k) {
    case ActorKind::vehicle: return "vehicle";
    case ActorKind::cyclist: return "cyclist";
    case ActorKind::pedestrian: return "pedestrian";
    case ActorKind::stationary: return "static";
  }
  throw Error("unknown actor kind");
}

ActorKind actor_kind_from_name(const std::string& name) {
  if (name == "vehicle") return ActorKind::vehicle;
  if (name == "cyclist") return ActorKind::cyclist;
  if (name == "pedestrian") return ActorKind::pedestrian;
  if (name == "static") return ActorKind::stationary;
  throw ValidationError("unknown actor kind \"" + name + "\"");
}

std::string light_state_name(LightState s) {
  switch (s) {
    case LightState::none: return "none";
    case LightState::red: return "red";
    case LightState::yellow: return "yellow";
    case LightState::green: return "green";
  }
  throw Error("unknown light state");
}

LightState light_state_from_name(const std::string& name) {
  if (name == "none") return LightState::none;
  if (name == "red") return LightState::red;
  if (name == "yellow") return LightState::yellow;
  if (name == "green") return LightState::green;
  throw ValidationError("unknown light state \"" + name + "\"");
}

double ActorObs::distance() const { return std::hypot(x, y); }

void SceneObservation::validate() const {
  std::string problems;
  if (ego.speed < 0) problems += " ego.speed<0;";
  if (static_cast<int>(actors.size()) > kMaxActors) problems += " more than 8 actors;";
  for (const auto& a : actors)
    if (a.speed < 0) problems += " actor.speed<0;";
  if (traffic_light.state != LightState::none && traffic_light.distance < 0)
    problems += " traffic_light.distance<0;";
  if (!problems.empty()) throw ValidationError("invalid observation:" + problems);
}

void SceneSequence::validate() const {
  if (frames.empty()) throw ValidationError("scene sequence is empty");
  if (static_cast<int>(frames.size()) > kMaxFrames) {
    throw ValidationError("scene sequence has " + std::to_string(frames.size()) +
                          " frames, maximum is " + std::to_string(kMaxFrames));
  }
  for (const auto& f : frames) f.validate();
}

template <class S>
SceneEncoderParamsT<S> SceneEncoderParamsT<S>::init(Rng& rng, int d_model, double init_std) {
  auto normal = [&](Shape shape) {
    TensorT<S> t = TensorT<S>::zeros(std::move(shape), true);
    for (auto& x : t.values()) x = static_cast<S>(rng.normal(0.0, init_std));
    return t;
  };
  SceneEncoderParamsT p;
  p.w1 = normal({kSceneFeatureDim, d_model});
  p.b1 = TensorT<S>::zeros({d_model}, true);
  p.w2 = normal({d_model, d_model});
  p.b2 = TensorT<S>::zeros({d_model}, true);
  p.kind_embedding = normal({kSlotKinds, d_model});
  return p;
}

template <class S>
std::vector<std::pair<std::string, TensorT<S>*>> SceneEncoderParamsT<S>::named_params() {
  return {{"scene.w1", &w1},
          {"scene.b1", &b1},
          {"scene.w2", &w2},
          {"scene.b2", &b2},
          {"scene.kind_embedding", &kind_embedding}};
}

template <class S>
std::pair<TensorT<S>, std::array<uint8_t, kSceneTokens>> encode_frame(
    TapeT<S>* tape, const SceneObservation& obs, const SceneEncoderParamsT<S>& params) {
  obs.validate();

  // nearest-first slot assignment keeps the encoding order-invariant
  std::vector<ActorObs> actors = obs.actors;
  std::stable_sort(actors.begin(), actors.end(),
                   [](const ActorObs& a, const ActorObs& b) { return a.distance() < b.distance(); });

  std::array<uint8_t, kSceneTokens> mask{};
  std::vector<S> feats(kSceneTokens * kSceneFeatureDim, S{0});
  std::vector<int> kinds(kSceneTokens, static_cast<int>(SlotKind::vehicle));
  auto row = [&](int slot) { return feats.data() + slot * kSceneFeatureDim; };

  // slot 0: ego (position is the frame origin; speed and lane offset matter)
  mask[0] = 1;
  kinds[0] = static_cast<int>(SlotKind::ego);
  row(0)[2] = S{1};  // cos(0)
  row(0)[4] = static_cast<S>(obs.ego.speed * kSpeedScale);
  row(0)[5] = static_cast<S>(obs.lane_offset * kLaneOffsetScale);

  // slots 1..8: actors, ego frame
  for (std::size_t i = 0; i < actors.size(); ++i) {
    const int slot = 1 + static_cast<int>(i);
    const ActorObs& a = actors[i];
    mask[slot] = 1;
    switch (a.kind) {
      case ActorKind::vehicle: kinds[slot] = static_cast<int>(SlotKind::vehicle); break;
      case ActorKind::cyclist: kinds[slot] = static_cast<int>(SlotKind::cyclist); break;
      case ActorKind::pedestrian: kinds[slot] = static_cast<int>(SlotKind::pedestrian); break;
      case ActorKind::stationary: kinds[slot] = static_cast<int>(SlotKind::stationary); break;
    }
    row(slot)[0] = static_cast<S>(a.x * kPositionScale);
    row(slot)[1] = static_cast<S>(a.y * kPositionScale);
    row(slot)[2] = static_cast<S>(std::cos(a.yaw));
    row(slot)[3] = static_cast<S>(std::sin(a.yaw));
    row(slot)[4] = static_cast<S>(a.speed * kSpeedScale);
  }

  // slot 9: traffic light, one-hot state in the aux fields
  const int light_slot = 1 + kMaxActors;
  mask[light_slot] = 1;
  kinds[light_slot] = static_cast<int>(SlotKind::light);
  row(light_slot)[0] = static_cast<S>(obs.traffic_light.distance * kPositionScale);
  if (obs.traffic_light.state == LightState::red) row(light_slot)[5] = S{1};
  if (obs.traffic_light.state == LightState::yellow) row(light_slot)[6] = S{1};
  if (obs.traffic_light.state == LightState::green) row(light_slot)[7] = S{1};

  // slots 10..14: route preview points
  for (int i = 0; i < kRoutePreviewPoints; ++i) {
    const int slot = light_slot + 1 + i;
    mask[slot] = 1;
    kinds[slot] = static_cast<int>(SlotKind::route);
    row(slot)[0] = static_cast<S>(obs.route_preview[i][0] * kPositionScale);
    row(slot)[1] = static_cast<S>(obs.route_preview[i][1] * kPositionScale);
  }

  TensorT<S> features = TensorT<S>::from({kSceneTokens, kSceneFeatureDim}, std::move(feats));
  TensorT<S> h = ops::affine(tape, features, params.w1, params.b1);
  h = ops::relu(tape, h);
  h = ops::affine(tape, h, params.w2, params.b2);
  TensorT<S> kind_rows = ops::embedding(tape, params.kind_embedding, kinds);
  TensorT<S> tokens = ops::add(tape, h, kind_rows);
  return {tokens, mask};
}

template <class S>
SceneFeaturesT<S> encode_sequence(TapeT<S>* tape, const SceneSequence& seq,
                                  const SceneEncoderParamsT<S>& params) {
  seq.validate();
  SceneFeaturesT<S> out;
  out.frames.reserve(seq.frames.size());
  out.masks.reserve(seq.frames.size());
  for (const auto& obs : seq.frames) {
    auto [tokens, mask] = encode_frame(tape, obs, params);
    out.frames.push_back(std::move(tokens));
    out.masks.push_back(mask);
  }
  return out;
}

template struct SceneEncoderParamsT<double>;
template struct SceneEncoderParamsT<float>;
template std::pair<TensorT<double>, std::array<uint8_t, kSceneTokens>> encode_frame<double>(
    TapeT<double>*, const SceneObservation&, const SceneEncoderParamsT<double>&);
template std::pair<TensorT<float>, std::array<uint8_t, kSceneTokens>> encode_frame<float>(
    TapeT<float>*, const SceneObservation&, const SceneEncoderParamsT<float>&);
template SceneFeaturesT<double> encode_sequence<double>(TapeT<double>*, const SceneSequence&,
                                                        const SceneEncoderParamsT<double>&);
template SceneFeaturesT<float> encode_sequence<float>(TapeT<float>*, const SceneSequence&,
                                                      const SceneEncoderParamsT<float>&);

}  // namespace dsdrive
