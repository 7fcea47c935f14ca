#pragma once

#include <algorithm>
#include <cmath>

namespace gridfall {

inline constexpr double kMinPowerFactor = 0.9;

/// tan(acos(pf)): reactive headroom per unit of active power at the
/// minimum allowed power factor.
inline double tan_phi_max(double min_pf = kMinPowerFactor) {
    return std::sqrt(1.0 - min_pf * min_pf) / min_pf;
}

/// Tighter of the power-factor cone and the apparent-power circle, in the
/// same unit as p (percent or fraction of S_max, as long as s_max matches).
inline double q_limit(double p, double s_max = 100.0, double min_pf = kMinPowerFactor) {
    p = std::clamp(p, 0.0, s_max);
    const double cone = p * tan_phi_max(min_pf);
    const double circle = std::sqrt(std::max(0.0, s_max * s_max - p * p));
    return std::min(cone, circle);
}

}  // namespace gridfall
