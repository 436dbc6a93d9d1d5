#include "dsdrive/serde.hpp"

#include "dsdrive/errors.hpp"

namespace dsdrive {

Json observation_to_json(const SceneObservation& obs) {
  Json j;
  j["ego"] = {{"x", obs.ego.x}, {"y", obs.ego.y}, {"yaw", obs.ego.yaw}, {"speed", obs.ego.speed}};
  Json actors = Json::array();
  for (const auto& a : obs.actors) {
    actors.push_back({{"kind", actor_kind_name(a.kind)},
                      {"x", a.x},
                      {"y", a.y},
                      {"yaw", a.yaw},
                      {"speed", a.speed}});
  }
  j["actors"] = std::move(actors);
  j["traffic_light"] = {{"state", light_state_name(obs.traffic_light.state)},
                        {"distance", obs.traffic_light.distance}};
  Json preview = Json::array();
  for (const auto& p : obs.route_preview) preview.push_back({p[0], p[1]});
  j["route_preview"] = std::move(preview);
  j["lane_offset"] = obs.lane_offset;
  return j;
}

SceneObservation observation_from_json(const Json& j) {
  SceneObservation obs;
  obs.ego.x = j.at("ego").at("x").get<double>();
  obs.ego.y = j.at("ego").at("y").get<double>();
  obs.ego.yaw = j.at("ego").at("yaw").get<double>();
  obs.ego.speed = j.at("ego").at("speed").get<double>();
  for (const auto& a : j.at("actors")) {
    ActorObs actor;
    actor.kind = actor_kind_from_name(a.at("kind").get<std::string>());
    actor.x = a.at("x").get<double>();
    actor.y = a.at("y").get<double>();
    actor.yaw = a.at("yaw").get<double>();
    actor.speed = a.at("speed").get<double>();
    obs.actors.push_back(actor);
  }
  obs.traffic_light.state = light_state_from_name(j.at("traffic_light").at("state").get<std::string>());
  obs.traffic_light.distance = j.at("traffic_light").at("distance").get<double>();
  const auto& preview = j.at("route_preview");
  if (preview.size() != kRoutePreviewPoints) {
    throw ValidationError("route_preview must hold " + std::to_string(kRoutePreviewPoints) +
                          " points, got " + std::to_string(preview.size()));
  }
  for (int i = 0; i < kRoutePreviewPoints; ++i) {
    obs.route_preview[i] = {preview[i][0].get<double>(), preview[i][1].get<double>()};
  }
  obs.lane_offset = j.at("lane_offset").get<double>();
  obs.validate();
  return obs;
}

Json sequence_to_json(const SceneSequence& seq) {
  Json frames = Json::array();
  for (const auto& f : seq.frames) frames.push_back(observation_to_json(f));
  return frames;
}

SceneSequence sequence_from_json(const Json& j) {
  SceneSequence seq;
  for (const auto& f : j) seq.frames.push_back(observation_from_json(f));
  seq.validate();
  return seq;
}

Json waypoints_to_json(const WaypointPlan& plan) {
  Json j = Json::array();
  for (const auto& p : plan.points) j.push_back({p[0], p[1]});
  return j;
}

WaypointPlan waypoints_from_json(const Json& j) {
  if (j.size() != kWaypointCount) {
    throw ValidationError("waypoint list must hold " + std::to_string(kWaypointCount) +
                          " pairs, got " + std::to_string(j.size()));
  }
  WaypointPlan plan;
  for (int i = 0; i < kWaypointCount; ++i) {
    plan.points[i] = {j[i][0].get<double>(), j[i][1].get<double>()};
  }
  plan.validate();
  return plan;
}

}  // namespace dsdrive
