// Test-only reference implementations, kept independent of the library code
// paths they are used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ssos/geometry.hpp"

namespace oracle {

// Brute-force bilinear interpolation at a clamped continuous coordinate,
// pixel (ix, iy) at coordinate (ix, iy).
inline double bilinear(const ssos::FeatureMap& map, double x, double y, int c) {
    x = std::min(std::max(x, 0.0), static_cast<double>(map.width - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(map.height - 1));
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    int x1 = std::min(x0 + 1, map.width - 1);
    int y1 = std::min(y0 + 1, map.height - 1);
    double fx = x - x0;
    double fy = y - y0;
    return map.at(y0, x0, c) * (1 - fx) * (1 - fy) + map.at(y0, x1, c) * fx * (1 - fy) +
           map.at(y1, x0, c) * (1 - fx) * fy + map.at(y1, x1, c) * fx * fy;
}

// Reference RoIAlign: bins partition the box uniformly, samples_per_bin^2
// regular interior samples per bin, averaged.
inline ssos::FeatureMap roi_align_reference(const ssos::FeatureMap& map, const ssos::Box& box,
                                            int out_h, int out_w, int spb) {
    ssos::FeatureMap out = ssos::FeatureMap::zeros(out_h, out_w, map.channels);
    for (int by = 0; by < out_h; ++by)
        for (int bx = 0; bx < out_w; ++bx)
            for (int c = 0; c < map.channels; ++c) {
                double sum = 0;
                for (int sy = 0; sy < spb; ++sy)
                    for (int sx = 0; sx < spb; ++sx) {
                        double fy = (by + (sy + 0.5) / spb) / out_h;
                        double fx = (bx + (sx + 0.5) / spb) / out_w;
                        sum += bilinear(map, box.x + fx * box.w, box.y + fy * box.h, c);
                    }
                out.at(by, bx, c) = sum / (spb * spb);
            }
    return out;
}

struct LloydResult {
    std::vector<std::vector<double>> centres;
    std::vector<int> labels;
    std::vector<double> inertia_per_iteration;
};

inline double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// Full-batch Lloyd iterations: exact nearest-centre assignment, exact mean
// refit, inertia recorded each iteration.
inline LloydResult lloyd_kmeans(const std::vector<std::vector<double>>& points,
                                std::vector<std::vector<double>> centres, int iterations) {
    LloydResult r;
    r.centres = std::move(centres);
    const size_t k = r.centres.size();
    const size_t dim = points.at(0).size();
    r.labels.assign(points.size(), 0);
    for (int it = 0; it < iterations; ++it) {
        double inertia = 0;
        for (size_t i = 0; i < points.size(); ++i) {
            int best = 0;
            double best_d = sqdist(points[i], r.centres[0]);
            for (size_t c = 1; c < k; ++c) {
                double d = sqdist(points[i], r.centres[c]);
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(c);
                }
            }
            r.labels[i] = best;
            inertia += best_d;
        }
        r.inertia_per_iteration.push_back(inertia);
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<int> counts(k, 0);
        for (size_t i = 0; i < points.size(); ++i) {
            for (size_t d = 0; d < dim; ++d) sums[r.labels[i]][d] += points[i][d];
            counts[r.labels[i]] += 1;
        }
        for (size_t c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (size_t d = 0; d < dim; ++d) r.centres[c][d] = sums[c][d] / counts[c];
    }
    return r;
}

// Central finite difference of a scalar function wrt one in-place parameter.
inline double central_diff(const std::function<double()>& f, double& param, double step) {
    double orig = param;
    param = orig + step;
    double hi = f();
    param = orig - step;
    double lo = f();
    param = orig;
    return (hi - lo) / (2.0 * step);
}

// Relative error with an absolute floor, so that jointly-tiny gradients are
// not compared at noise level.
inline double grad_rel_err(double analytic, double fd) {
    double denom = std::max(std::abs(analytic), std::abs(fd));
    if (denom < 1e-6) return 0.0;
    return std::abs(analytic - fd) / denom;
}

}  // namespace oracle
