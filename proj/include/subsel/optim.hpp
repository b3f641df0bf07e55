#pragma once

#include <map>
#include <optional>
#include <string>

#include "subsel/params.hpp"

namespace subsel {

enum class OptimKind { Adam, AdamW };
enum class ScheduleKind { Constant, CosineAnnealing };

// Adam/AdamW state with optional cosine-annealing schedule and global-norm
// gradient clipping. Moments are keyed by parameter name and created lazily,
// mirroring each parameter's shape.
struct OptimizerState {
    OptimKind kind = OptimKind::Adam;
    std::uint64_t step_count = 0;

    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    ScheduleKind schedule = ScheduleKind::Constant;
    std::uint64_t t_max = 0;
    double lr_min = 0.0;

    std::optional<double> clip_norm;

    struct Moments {
        Tensor m;
        Tensor v;
    };
    std::map<std::string, Moments> moments;

    // Learning rate the next step will use.
    double current_lr() const;
};

OptimizerState make_adam(double lr, std::optional<double> clip_norm = std::nullopt);
OptimizerState make_adamw(double lr, double weight_decay,
                          std::optional<double> clip_norm = std::nullopt);

// Clips grads in place to the given global L2 norm; returns the pre-clip norm.
double clip_global_norm(ParamSet& params, double max_norm);

// One optimizer update over all params. Applies clipping first (when set),
// then the Adam/AdamW rule with bias correction, then advances the schedule.
// Throws if called before any forward_backward on this ParamSet.
void optimizer_step(OptimizerState& state, ParamSet& params);

}  // namespace subsel
