#include "dsdrive/controller.hpp"

#include <algorithm>
#include <cmath>

#include "dsdrive/errors.hpp"

namespace dsdrive {

void ControlCommand::validate() const {
  std::string problems;
  if (steer < -1.0 || steer > 1.0) problems += " steer outside [-1,1];";
  if (throttle < 0.0 || throttle > 1.0) problems += " throttle outside [0,1];";
  if (brake < 0.0 || brake > 1.0) problems += " brake outside [0,1];";
  if (throttle * brake != 0.0) problems += " throttle and brake both engaged;";
  if (!problems.empty()) throw ValidationError("invalid control command:" + problems);
}

ControlCommand track_waypoints(const VehicleState& vehicle, const WaypointPlan& plan,
                               const ControllerGains& gains) {
  plan.validate();
  const double lookahead = std::max(gains.min_lookahead, gains.lookahead_speed_gain * vehicle.v);

  // first plan point at or beyond the lookahead; the last point as fallback
  const auto* target = &plan.points.back();
  for (const auto& p : plan.points) {
    if (std::hypot(p[0], p[1]) >= lookahead) {
      target = &p;
      break;
    }
  }
  const double curvature = 2.0 * (*target)[1] / (lookahead * lookahead);

  ControlCommand cmd;
  cmd.steer = std::clamp(curvature * kWheelbase / kMaxSteerAngle, -1.0, 1.0);

  const auto& last = plan.points.back();
  const double v_des = std::hypot(last[0], last[1]) / 2.0;
  if (v_des < gains.stop_speed) {
    cmd.throttle = 0;
    cmd.brake = 1;
  } else if (v_des >= vehicle.v) {
    cmd.throttle = std::clamp(gains.k_p * (v_des - vehicle.v), 0.0, 1.0);
    cmd.brake = 0;
  } else {
    cmd.throttle = 0;
    cmd.brake = std::clamp(gains.k_p * (vehicle.v - v_des), 0.0, 1.0);
  }
  return cmd;
}

}  // namespace dsdrive
