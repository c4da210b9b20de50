#pragma once

namespace massgrid {

// Quintic smoothstep s(t) = 6t^5 - 15t^4 + 10t^3 on [0,1], clamped outside.
// s and its first two derivatives vanish at t=0; s(1)=1, s'(1)=s''(1)=0,
// so any piecewise construction glued with it is C^2.

inline double smoothstep(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0);
}

inline double smoothstep_d1(double t) {
    if (t <= 0.0 || t >= 1.0) return 0.0;
    double u = t * (1.0 - t);
    return 30.0 * u * u;
}

inline double smoothstep_d2(double t) {
    if (t <= 0.0 || t >= 1.0) return 0.0;
    return 60.0 * t * (2.0 * t - 1.0) * (t - 1.0);
}

/// C^2 bump rising 0 -> 1 -> 0 over [0,1], peak value 1 at t = 1/2.
inline double smoothbump(double t) {
    return smoothstep(2.0 * t) * smoothstep(2.0 - 2.0 * t);
}

} // namespace massgrid
