#include "dsdrive/teacher.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

#include "dsdrive/errors.hpp"
#include "dsdrive/serde.hpp"

namespace dsdrive {

namespace {

std::string round_meters(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.0f", v);
  return buf;
}

}  // namespace

TeacherAnswer ScriptedTeacher::query(const std::string& clip_id, const SceneSequence& frames,
                                     const PromptBundle& prompts) {
  (void)clip_id;
  (void)prompts;
  frames.validate();
  const SceneObservation& obs = frames.frames.back();

  TeacherAnswer a;
  a.scenario = "A " + meta_.weather + " " + meta_.time_of_day + " on a " + meta_.road_type +
               " road; the lane ahead is visible.";

  const bool light_governs = (obs.traffic_light.state == LightState::red ||
                              obs.traffic_light.state == LightState::yellow) &&
                             obs.traffic_light.distance < 40.0;
  const ActorObs* lead = nullptr;
  const ActorObs* nearest = nullptr;
  for (const auto& actor : obs.actors) {
    if (actor.distance() < 20.0) {
      if (!nearest || actor.distance() < nearest->distance()) nearest = &actor;
      if (actor.x > 0.0 && std::abs(actor.y) < 3.0 &&
          (!lead || actor.distance() < lead->distance())) {
        lead = &actor;
      }
    }
  }

  if (light_governs) {
    a.key_object = "A " + light_state_name(obs.traffic_light.state) + " traffic light " +
                   round_meters(obs.traffic_light.distance) +
                   " m ahead controls the lane; running it risks a violation.";
    a.plan = "Slow down and stop before the stop line.";
    a.explanation = "Stopping for the signal avoids a red-light violation and keeps the "
                    "intersection safe.";
  } else if (lead) {
    a.key_object = "A " + actor_kind_name(lead->kind) + " about " + round_meters(lead->distance()) +
                   " m ahead in the lane; closing on it risks a collision.";
    a.plan = "Slow down and keep a safe gap behind it.";
    a.explanation = "Holding distance leaves room to brake if it slows.";
  } else if (nearest) {
    a.key_object = "A " + actor_kind_name(nearest->kind) + " about " +
                   round_meters(nearest->distance()) + " m to the " +
                   (nearest->y >= 0 ? "left" : "right") + "; it stays clear of the ego path.";
    a.plan = "Proceed along the route at a steady speed.";
    a.explanation = "The object does not block the lane, so normal driving is safe.";
  } else {
    a.key_object = "No critical object is nearby; the route ahead is clear.";
    a.plan = "Proceed along the route at a steady speed.";
    a.explanation = "With a clear path the navigation can be followed directly.";
  }
  return a;
}

TeacherAnswer HttpTeacherClient::query(const std::string& clip_id, const SceneSequence& frames,
                                       const PromptBundle& prompts) {
  Json request;
  request["clip_id"] = clip_id;
  request["frames"] = sequence_to_json(frames);
  request["system"] = prompts.system;
  request["prompts"] = Json::array({prompts.q1, prompts.q2, prompts.q3});
  request["navigation"] = prompts.navigation;
  const std::string body = request.dump();

  std::string last_error;
  for (int attempt = 0; attempt < cfg_.attempts; ++attempt) {
    if (attempt > 0) {
      const auto wait = std::chrono::milliseconds(cfg_.initial_backoff_ms << (attempt - 1));
      std::this_thread::sleep_for(wait);
    }
    httplib::Client client(cfg_.base_url);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    auto res = client.Post(kTeacherEndpoint, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    Json parsed;
    try {
      parsed = Json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("teacher response is not JSON (" + std::string(e.what()) +
                            "); raw payload: " + res->body);
    }
    TeacherAnswer answer;
    for (const char* field : {"scenario", "key_object", "plan", "explanation"}) {
      if (!parsed.contains(field)) {
        throw ValidationError(std::string("teacher response missing field \"") + field +
                              "\"; raw payload: " + res->body);
      }
    }
    answer.scenario = parsed.at("scenario").get<std::string>();
    answer.key_object = parsed.at("key_object").get<std::string>();
    answer.plan = parsed.at("plan").get<std::string>();
    answer.explanation = parsed.at("explanation").get<std::string>();
    return answer;
  }
  throw IoError("teacher at " + cfg_.base_url + " unreachable after " +
                std::to_string(cfg_.attempts) + " attempts (" + last_error + ")");
}

TeacherAnswer query_teacher(TeacherClient& client, const std::string& clip_id,
                            const SceneSequence& frames, const PromptBundle& prompts) {
  TeacherAnswer answer = client.query(clip_id, frames, prompts);
  answer.validate();
  return answer;
}

}  // namespace dsdrive
