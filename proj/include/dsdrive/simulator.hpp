#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dsdrive/controller.hpp"
#include "dsdrive/scene.hpp"
#include "dsdrive/serde.hpp"
#include "dsdrive/vehicle.hpp"

namespace dsdrive {

inline constexpr double kSimDt = 0.1;  // closed loop at 10 Hz

// Longitudinal response and collision geometry.
inline constexpr double kThrottleAccel = 3.0;  // m/s^2 per unit throttle
inline constexpr double kBrakeDecel = 8.0;     // m/s^2 per unit brake
inline constexpr double kDragCoef = 0.1;       // 1/s
inline constexpr double kBodyRadius = 1.4;     // m, bounding circle

// Kinematic bicycle with a first-order longitudinal response:
// a = 3*throttle - 8*brake - 0.1*v, yaw' += v*tan(steer*0.6)/2.8 * dt.
VehicleState step_vehicle(const VehicleState& state, const ControlCommand& cmd, double dt = kSimDt);

enum class RouteTier { tiny, short_route, long_route };
std::string route_tier_name(RouteTier t);  // "tiny" / "short" / "long"
RouteTier route_tier_from_name(const std::string& name);

struct RouteInstruction {
  double trigger_arc = 0;  // meters along the route
  std::string text;
};

struct RouteSpec {
  std::vector<std::array<double, 2>> polyline;  // world frame
  RouteTier tier = RouteTier::tiny;
  double lane_half_width = 1.75;
  std::vector<RouteInstruction> instructions;

  double arclength() const;
  void validate() const;  // >= 2 points, arclength within the tier bounds

  std::array<double, 2> point_at_arc(double s) const;
  double heading_at_arc(double s) const;
  // Closest-point projection; returns arclength of the projection.
  double project(double x, double y) const;
  // Signed lateral offset (positive left of the centerline) at a given arc.
  double lateral_offset(double x, double y, double arc) const;
  // Instruction active at a given arc (last trigger passed).
  const RouteInstruction& instruction_at(double arc) const;
  // Arc where the active instruction ends (next trigger or route end).
  double instruction_end_arc(double arc) const;
};

struct LightPhase {
  LightState state = LightState::red;
  double duration = 10;  // seconds
};

struct TrafficLightSpec {
  double stop_arc = 0;  // stop line position along the route
  std::vector<LightPhase> phases;
  double phase_offset = 0;  // seconds into the cycle at t = 0

  LightState state_at(double time) const;
};

// Scripted actor: follows its own polyline at constant speed; a single-point
// path is a parked obstacle.
struct ActorSpec {
  ActorKind kind = ActorKind::vehicle;
  std::vector<std::array<double, 2>> path;
  double speed = 0;
  double start_arc = 0;
};

struct Scenario {
  std::string name;
  uint64_t seed = 0;
  ScenarioMeta meta;
  RouteSpec route;
  std::vector<TrafficLightSpec> lights;
  std::vector<ActorSpec> actors;

  void validate() const;
};

inline constexpr const char* kScenarioFormat = "dsdrive-scenario";
inline constexpr int kScenarioVersion = 1;

Json scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const Json& j);
void write_scenario(const Scenario& s, const std::string& path);
Scenario read_scenario(const std::string& path);

struct IncidentCounts {
  int vehicle_collision = 0;
  int red_light = 0;
  int off_lane = 0;

  int total() const { return vehicle_collision + red_light + off_lane; }
};

// One event per excursion: fires once when |offset| stays beyond the lane
// half-width for more than 1.0 s continuously.
class OffLaneTracker {
 public:
  explicit OffLaneTracker(double threshold_seconds = 1.0) : threshold_(threshold_seconds) {}
  bool update(double time, bool outside);
  void reset();

 private:
  double threshold_;
  double since_ = -1;
  bool reported_ = false;
};

struct TickEvents {
  int collisions = 0;
  bool red_light = false;
  bool off_lane = false;
};

// Deterministic closed-loop world; one instance per episode, single-threaded.
class World {
 public:
  explicit World(Scenario scenario);

  SceneObservation observe() const;
  TickEvents tick(const ControlCommand& cmd);

  const Scenario& scenario() const { return scenario_; }
  const VehicleState& ego() const { return ego_; }
  void set_ego(const VehicleState& s) { ego_ = s; }  // test hook
  double time() const { return time_; }
  int tick_index() const { return tick_; }
  double ego_arc() const { return ego_arc_; }
  double completion_percent() const;
  std::array<double, 2> actor_position(std::size_t i) const;

 private:
  Scenario scenario_;
  VehicleState ego_;
  std::vector<double> actor_arcs_;
  double time_ = 0;
  int tick_ = 0;
  double ego_arc_ = 0;  // monotone projection onto the route
  std::vector<uint8_t> overlapping_;
  OffLaneTracker off_lane_;
};

struct TickRecord {
  int tick = 0;
  double t = 0;
  VehicleState ego;
  ControlCommand cmd;
  uint8_t collision_event = 0;
  uint8_t red_light_event = 0;
  uint8_t off_lane_event = 0;
  std::string trace_text;  // optional reasoning trace
};

enum class Termination { completed, timeout, blocked, failed };
std::string termination_name(Termination t);

struct EpisodeLog {
  std::string scenario_name;
  std::vector<TickRecord> ticks;
  Termination termination = Termination::timeout;
  std::string failure_reason;
  IncidentCounts counts;

  double duration() const { return static_cast<double>(ticks.size()) * kSimDt; }
};

struct AgentOutput {
  WaypointPlan plan;
  CompletionSignal completion;
  std::optional<ReasoningTrace> trace;
};

// Maps the rolling observation window to a plan; invoked every tick.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual AgentOutput act(const SceneSequence& frames, const std::string& navigation,
                          const std::string& question) = 0;
};

struct EpisodeConfig {
  int max_ticks = 3000;
  int history = kDefaultFrames;
  double rc_complete_percent = 99.9;
  double blocked_speed = 0.1;     // m/s
  double blocked_seconds = 30.0;
  ControllerGains gains;
};

EpisodeLog run_episode(Agent& agent, const Scenario& scenario, const EpisodeConfig& cfg);

// Episode export: CSV per tick plus a self-contained JSON summary (embeds the
// route so evaluation needs no scenario directory).
void write_episode_csv(const EpisodeLog& log, const std::string& path);
void write_episode_summary(const EpisodeLog& log, const Scenario& scenario,
                           const std::string& csv_name, const std::string& path);

}  // namespace dsdrive
