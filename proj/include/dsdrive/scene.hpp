#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dsdrive/ops.hpp"
#include "dsdrive/rng.hpp"
#include "dsdrive/tensor.hpp"

namespace dsdrive {

inline constexpr int kMaxActors = 8;
inline constexpr int kRoutePreviewPoints = 5;
inline constexpr int kSceneTokens = 15;  // 1 ego + 8 actors + 1 light + 5 route
inline constexpr int kMaxFrames = 8;
inline constexpr int kDefaultFrames = 4;

enum class ActorKind { vehicle, cyclist, pedestrian, stationary };
enum class LightState { none, red, yellow, green };

std::string actor_kind_name(ActorKind k);    // "static" for stationary
ActorKind actor_kind_from_name(const std::string& name);
std::string light_state_name(LightState s);
LightState light_state_from_name(const std::string& name);

// Scenario-level context the structured frames cannot carry themselves.
struct ScenarioMeta {
  std::string weather = "clear";
  std::string time_of_day = "day";
  std::string road_type = "urban";
};

struct EgoState {
  double x = 0;  // meters, world frame
  double y = 0;
  double yaw = 0;  // radians
  double speed = 0;
};

// Other traffic participant as seen from the ego (x forward, y left).
struct ActorObs {
  ActorKind kind = ActorKind::vehicle;
  double x = 0;
  double y = 0;
  double yaw = 0;
  double speed = 0;

  double distance() const;
};

struct LightObs {
  LightState state = LightState::none;
  double distance = 0;  // meters along the route to the stop line
};

// Structured per-frame world state; the informational stand-in for one image.
struct SceneObservation {
  EgoState ego;
  std::vector<ActorObs> actors;  // up to 8
  LightObs traffic_light;
  std::array<std::array<double, 2>, kRoutePreviewPoints> route_preview{};  // ego frame
  double lane_offset = 0;  // meters, signed, positive = left of lane center

  void validate() const;
};

struct SceneSequence {
  std::vector<SceneObservation> frames;  // time-ordered at fixed dt

  int length() const { return static_cast<int>(frames.size()); }
  void validate() const;
};

// Per-frame token matrices [15 x D] plus validity masks consumed by attention.
template <class S>
struct SceneFeaturesT {
  std::vector<TensorT<S>> frames;
  std::vector<std::array<uint8_t, kSceneTokens>> masks;

  int length() const { return static_cast<int>(frames.size()); }
};

// Kind-embedding rows; route preview points and the light get kinds of their own.
enum class SlotKind : int {
  ego = 0,
  vehicle = 1,
  cyclist = 2,
  pedestrian = 3,
  stationary = 4,
  light = 5,
  route = 6,
};
inline constexpr int kSlotKinds = 7;
inline constexpr int kSceneFeatureDim = 8;

// Normalization scales applied before embedding.
inline constexpr double kPositionScale = 1.0 / 50.0;
inline constexpr double kSpeedScale = 1.0 / 20.0;
inline constexpr double kLaneOffsetScale = 1.0 / 5.0;

template <class S>
struct SceneEncoderParamsT {
  TensorT<S> w1;  // [kSceneFeatureDim x D]
  TensorT<S> b1;  // [D]
  TensorT<S> w2;  // [D x D]
  TensorT<S> b2;  // [D]
  TensorT<S> kind_embedding;  // [kSlotKinds x D]

  static SceneEncoderParamsT init(Rng& rng, int d_model, double init_std);
  std::vector<std::pair<std::string, TensorT<S>*>> named_params();
};

// Shared two-layer feed-forward net over normalized numeric fields plus a
// learned kind embedding per slot. Slot order: ego, actors by distance
// ascending, light, route points. Absent slots are masked.
template <class S>
std::pair<TensorT<S>, std::array<uint8_t, kSceneTokens>> encode_frame(
    TapeT<S>* tape, const SceneObservation& obs, const SceneEncoderParamsT<S>& params);

template <class S>
SceneFeaturesT<S> encode_sequence(TapeT<S>* tape, const SceneSequence& seq,
                                  const SceneEncoderParamsT<S>& params);

}  // namespace dsdrive
