#pragma once

#include "dsdrive/heads.hpp"
#include "dsdrive/vehicle.hpp"

namespace dsdrive {

// Steering is positive to the left, matching the y-left ego frame. Throttle
// and brake are mutually exclusive by construction.
struct ControlCommand {
  double steer = 0;     // [-1, 1]
  double throttle = 0;  // [0, 1]
  double brake = 0;     // [0, 1]

  void validate() const;
};

struct ControllerGains {
  double k_p = 0.5;                 // speed proportional gain
  double min_lookahead = 2.0;       // meters
  double lookahead_speed_gain = 0.5;  // seconds (lookahead = max(min, gain * v))
  double stop_speed = 0.3;          // m/s; below this desired speed, full brake
};

// Pure pursuit on the first plan point at or beyond the lookahead distance
// (curvature 2*y / L_d^2), proportional speed control toward
// v_des = |last waypoint| / 2.0 s. A degenerate all-zero plan stops the car.
ControlCommand track_waypoints(const VehicleState& vehicle, const WaypointPlan& plan,
                               const ControllerGains& gains);

}  // namespace dsdrive
