#pragma once

// Gaze-direction representations. Convention: camera looks down -z,
//   x = -cos(pitch) sin(yaw), y = -sin(pitch), z = -cos(pitch) cos(yaw).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "jitterlab/errors.hpp"

namespace jitterlab {

inline constexpr double kPi = std::numbers::pi;

inline constexpr double rad_to_deg(double r) { return r * 180.0 / kPi; }
inline constexpr double deg_to_rad(double d) { return d * kPi / 180.0; }

struct GazeLabel {
  double pitch = 0.0;  // radians
  double yaw = 0.0;    // radians

  bool in_range() const {
    return std::isfinite(pitch) && std::isfinite(yaw) && pitch >= -kPi / 2 && pitch <= kPi / 2 &&
           yaw >= -kPi && yaw <= kPi;
  }
  friend bool operator==(const GazeLabel&, const GazeLabel&) = default;
};

struct GazeVector {
  double x = 0.0;
  double y = 0.0;
  double z = -1.0;

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  double dot(const GazeVector& o) const { return x * o.x + y * o.y + z * o.z; }
  GazeVector operator-() const { return {-x, -y, -z}; }
};

inline void require_in_range(const GazeLabel& g) {
  if (!g.in_range()) {
    std::ostringstream os;
    os << "gaze label out of range: pitch=" << g.pitch << " yaw=" << g.yaw;
    throw DomainError(os.str());
  }
}

// Same formula without the range check; model predictions are arbitrary reals.
inline GazeVector direction_of(const GazeLabel& g) {
  const double cp = std::cos(g.pitch);
  return {-cp * std::sin(g.yaw), -std::sin(g.pitch), -cp * std::cos(g.yaw)};
}

inline GazeVector pitchyaw_to_vector(const GazeLabel& g) {
  require_in_range(g);
  return direction_of(g);
}

// Non-unit inputs are normalized first. At the poles yaw is 0.
inline GazeLabel vector_to_pitchyaw(const GazeVector& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("cannot convert a zero or non-finite vector to pitch/yaw");
  const double x = v.x / n, y = v.y / n, z = v.z / n;
  const double pitch = std::asin(std::clamp(-y, -1.0, 1.0));
  const double horiz = std::hypot(x, z);
  const double yaw = horiz < 1e-15 ? 0.0 : std::atan2(-x, -z);
  return {pitch, yaw};
}

// Angle between two directions in degrees, in [0, 180].
inline double angular_between(const GazeVector& a, const GazeVector& b) {
  const double c = std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
  return rad_to_deg(std::acos(c));
}

inline double angular_between(const GazeLabel& a, const GazeLabel& b) {
  return angular_between(pitchyaw_to_vector(a), pitchyaw_to_vector(b));
}

}  // namespace jitterlab
