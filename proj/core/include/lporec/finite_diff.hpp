#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "lporec/errors.hpp"
#include "lporec/rng.hpp"
#include "lporec/tensor.hpp"

namespace lporec {

// A differentiable scalar function of a parameter pack. The callable is
// invoked with grads == nullptr for value-only probes and with a vector of
// parameter-shaped tensors to fill for the analytic pass. It must be
// deterministic (fixed RNG, dropout off).
using DiffFn =
    std::function<double(const std::vector<Tensor<double>>&, std::vector<Tensor<double>>*)>;

// Central-difference check of analytic gradients. Returns the max over
// checked coordinates of |analytic - numeric| / max(1, |numeric|). When
// max_coords >= 0 and the parameter count exceeds it, a seeded random subset
// of coordinates is probed.
inline double finite_diff_check(const DiffFn& f, std::vector<Tensor<double>> params, double eps,
                                int64_t max_coords = -1, uint64_t seed = 0) {
    if (eps < 1e-7 || eps > 1e-3)
        throw ValidationError("InvalidEpsilon", "epsilon must be in [1e-7, 1e-3]");

    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.emplace_back(p.rows(), p.cols());
    const double base = f(params, &analytic);
    if (!std::isfinite(base)) throw RuntimeFailure("NonFinite", "f(params) is not finite");

    struct Coord {
        size_t tensor;
        size_t index;
    };
    std::vector<Coord> coords;
    for (size_t t = 0; t < params.size(); ++t)
        for (size_t i = 0; i < params[t].size(); ++i) coords.push_back({t, i});
    if (max_coords >= 0 && static_cast<int64_t>(coords.size()) > max_coords) {
        Rng rng(seed);
        shuffle(coords, rng);
        coords.resize(static_cast<size_t>(max_coords));
    }

    double max_rel = 0.0;
    for (const Coord& c : coords) {
        double& slot = params[c.tensor].raw()[c.index];
        const double orig = slot;
        slot = orig + eps;
        const double fp = f(params, nullptr);
        slot = orig - eps;
        const double fm = f(params, nullptr);
        slot = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw RuntimeFailure("NonFinite", "finite-difference probe produced NaN/Inf");
        const double numeric = (fp - fm) / (2.0 * eps);
        const double rel = std::fabs(analytic[c.tensor].raw()[c.index] - numeric) /
                           std::max(1.0, std::fabs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace lporec
