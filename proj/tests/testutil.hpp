#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "subsel/params.hpp"
#include "subsel/rng.hpp"
#include "subsel/tape.hpp"
#include "subsel/tensor.hpp"

namespace testutil {

// Central-difference gradient check. `build` must construct the loss graph on
// a fresh tape from the current parameter values and be deterministic (fix
// any dropout masks or sampling seeds inside). Relative error uses
// max(|analytic|, |numeric|, 0.01) as the denominator so near-zero gradients
// are compared absolutely at a 1e-6 scale under the 1e-4 bound.
struct FdResult {
    double max_rel_error = 0.0;
    std::string worst;  // "param[i]" of the worst entry
};

inline FdResult fd_check(subsel::ParamSet& params,
                         const std::function<subsel::Val(subsel::Tape&)>& build,
                         double h = 1e-5) {
    auto loss_value = [&] {
        subsel::Tape tape;
        return tape.value(build(tape)).value();
    };
    {
        subsel::Tape tape;
        subsel::Val loss = build(tape);
        subsel::forward_backward(tape, loss, params);
    }
    FdResult result;
    for (const auto& p : params.all()) {
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const double saved = p->value.data[i];
            p->value.data[i] = saved + h;
            const double up = loss_value();
            p->value.data[i] = saved - h;
            const double down = loss_value();
            p->value.data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p->grad.data[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-2});
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

// Gaussian fill for deterministic test fixtures.
inline subsel::Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed,
                                    double scale = 1.0) {
    subsel::Rng rng(seed);
    subsel::Tensor t = subsel::Tensor::zeros({r, c});
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    subsel::Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace testutil
