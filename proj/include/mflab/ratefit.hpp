#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mflab/moments.hpp"

namespace mflab {

struct RateFit {
    double slope = 0.0;
    std::size_t points_used = 0;
    bool truncated = false;  // trailing underflowed values were dropped
};

/// OLS slope of log w2 against t (sigma > 0 regime) or against
/// log alpha(t) (sigma = 0 regime), over the trailing `window` fraction of the
/// grid. Values below 1e-300 truncate the window with a warning flag.
inline RateFit fit_rate(const std::vector<double>& t, const std::vector<double>& w2,
                        double window, double sigma) {
    if (t.size() != w2.size()) throw ValidationError("fit_rate: t/w2 lengths differ");
    if (!(window > 0.0 && window <= 1.0)) throw ValidationError("fit_rate: window in (0,1] required");

    const std::size_t n = t.size();
    std::size_t begin = n - std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(window * n)));
    std::size_t end = n;

    RateFit fit;
    while (end > begin && w2[end - 1] < 1e-300) {
        --end;
        fit.truncated = true;
    }
    for (std::size_t i = begin; i < end; ++i)
        if (w2[i] < 1e-300) throw ValidationError("fit_rate: nonpositive w2 inside fit window");
    if (end - begin < 4) throw ValidationError("fit_rate: need at least 4 points in the window");

    double sx = 0.0, sy = 0.0;
    const auto xval = [&](std::size_t i) {
        return sigma > 0.0 ? t[i] : std::log(envelope_alpha(0.0, t[i]));
    };
    for (std::size_t i = begin; i < end; ++i) {
        sx += xval(i);
        sy += std::log(w2[i]);
    }
    const double count = static_cast<double>(end - begin);
    const double mx = sx / count, my = sy / count;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        const double dx = xval(i) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(w2[i]) - my);
    }
    if (sxx == 0.0) throw ValidationError("fit_rate: degenerate abscissa in fit window");
    fit.slope = sxy / sxx;
    fit.points_used = end - begin;
    return fit;
}

}  // namespace mflab
