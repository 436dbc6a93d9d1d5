#pragma once

#include <json.hpp>

#include "dsdrive/heads.hpp"
#include "dsdrive/scene.hpp"

namespace dsdrive {

// Insertion-ordered JSON keeps serialized field order stable.
using Json = nlohmann::ordered_json;

Json observation_to_json(const SceneObservation& obs);
SceneObservation observation_from_json(const Json& j);

Json sequence_to_json(const SceneSequence& seq);
SceneSequence sequence_from_json(const Json& j);

Json waypoints_to_json(const WaypointPlan& plan);
WaypointPlan waypoints_from_json(const Json& j);

}  // namespace dsdrive
