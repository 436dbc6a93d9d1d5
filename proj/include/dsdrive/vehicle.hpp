#pragma once

namespace dsdrive {

inline constexpr double kWheelbase = 2.8;      // meters
inline constexpr double kMaxSteerAngle = 0.6;  // radians

struct VehicleState {
  double x = 0;    // meters, world frame
  double y = 0;
  double yaw = 0;  // radians
  double v = 0;    // m/s, never negative
};

}  // namespace dsdrive
