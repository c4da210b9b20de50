#pragma once

#include <cmath>
#include <vector>

#include "errors.hpp"

namespace massgrid {

/// Richardson extrapolation of a resolution series m_h = m + C h^q.
struct ExtrapolationFit {
    double value = 0.0;     // extrapolated m
    double error_bar = 0.0; // half the increment between the two finest levels
    double coefficient = 0.0;
    double order = 0.0;     // q used (fixed or fitted)
    bool order_fitted = false;
};

/// Least-squares fit of (m, C) at fixed order q over >= 2 levels.
inline ExtrapolationFit fit_fixed_order(const std::vector<std::pair<double, double>>& hm,
                                        double q = 2.0) {
    if (hm.size() < 2) throw ConfigError("fit_fixed_order: need at least 2 levels");
    double s1 = double(hm.size()), sx = 0, sxx = 0, sy = 0, sxy = 0;
    for (auto [h, m] : hm) {
        double x = std::pow(h, q);
        sx += x;
        sxx += x * x;
        sy += m;
        sxy += x * m;
    }
    double det = s1 * sxx - sx * sx;
    if (std::fabs(det) < 1e-300) throw ConfigError("fit_fixed_order: degenerate levels");
    ExtrapolationFit f;
    f.value = (sy * sxx - sx * sxy) / det;
    f.coefficient = (s1 * sxy - sx * sy) / det;
    f.order = q;
    // error bar: half the last increment of the series (finest two levels)
    std::size_t k = hm.size();
    f.error_bar = 0.5 * std::fabs(hm[k - 1].second - hm[k - 2].second);
    return f;
}

/// Exact 3-point fit with free order: solves
///   (m1 - m2)/(m2 - m3) = (h1^q - h2^q)/(h2^q - h3^q)
/// for q by bisection on [0.25, 5]. When the increments do not bracket a root
/// (non-monotone series, e.g. boundary-staircase wobble at coarse h), the
/// coarsest level is discarded and the two finest levels are extrapolated at
/// the caller-supplied fallback order instead.
inline ExtrapolationFit fit_free_order(const std::vector<std::pair<double, double>>& hm,
                                       double fallback_order = 2.0) {
    if (hm.size() != 3) throw ConfigError("fit_free_order: need exactly 3 levels");
    double h1 = hm[0].first, h2 = hm[1].first, h3 = hm[2].first;
    double m1 = hm[0].second, m2 = hm[1].second, m3 = hm[2].second;
    if (!(h1 > h2 && h2 > h3))
        throw ConfigError("fit_free_order: levels must be in decreasing h order");
    double target = (m1 - m2) / (m2 - m3);
    auto ratio = [&](double q) {
        return (std::pow(h1, q) - std::pow(h2, q)) / (std::pow(h2, q) - std::pow(h3, q));
    };
    double lo = 0.25, hi = 5.0;
    double flo = ratio(lo) - target, fhi = ratio(hi) - target;
    if (!std::isfinite(target) || flo * fhi > 0.0)
        return fit_fixed_order({hm[1], hm[2]}, fallback_order);
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi), fm = ratio(mid) - target;
        if (fm == 0.0) { lo = hi = mid; break; }
        if (flo * fm < 0.0) {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    ExtrapolationFit f;
    f.order = 0.5 * (lo + hi);
    f.order_fitted = true;
    double x2 = std::pow(h2, f.order), x3 = std::pow(h3, f.order);
    f.coefficient = (m2 - m3) / (x2 - x3);
    f.value = m3 - f.coefficient * x3;
    f.error_bar = 0.5 * std::fabs(m3 - m2);
    return f;
}

} // namespace massgrid
