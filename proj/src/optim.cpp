#include "subsel/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace subsel {

double OptimizerState::current_lr() const {
    if (schedule == ScheduleKind::Constant || t_max == 0) return lr;
    const double t = static_cast<double>(std::min(step_count, t_max));
    const double cosv = std::cos(3.14159265358979323846 * t / static_cast<double>(t_max));
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + cosv);
}

OptimizerState make_adam(double lr, std::optional<double> clip_norm) {
    OptimizerState s;
    s.kind = OptimKind::Adam;
    s.lr = lr;
    s.clip_norm = clip_norm;
    return s;
}

OptimizerState make_adamw(double lr, double weight_decay, std::optional<double> clip_norm) {
    OptimizerState s;
    s.kind = OptimKind::AdamW;
    s.lr = lr;
    s.weight_decay = weight_decay;
    s.clip_norm = clip_norm;
    return s;
}

double clip_global_norm(ParamSet& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params.all())
        for (double gv : p->grad.data) sq += gv * gv;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const auto& p : params.all())
            for (double& gv : p->grad.data) gv *= s;
    }
    return norm;
}

void optimizer_step(OptimizerState& state, ParamSet& params) {
    if (params.grad_passes == 0)
        throw std::logic_error("optimizer_step: no backward pass has populated grads");
    if (state.clip_norm) clip_global_norm(params, *state.clip_norm);

    const double lr_t = state.current_lr();
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);

    for (const auto& p : params.all()) {
        auto [it, fresh] = state.moments.try_emplace(p->name);
        if (fresh) {
            it->second.m = Tensor::zeros(p->value.shape);
            it->second.v = Tensor::zeros(p->value.shape);
        }
        Tensor& m = it->second.m;
        Tensor& v = it->second.v;
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            double gv = p->grad.data[i];
            // Classic Adam folds decay into the gradient; AdamW decouples it.
            if (state.kind == OptimKind::Adam && state.weight_decay != 0.0)
                gv += state.weight_decay * p->value.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gv;
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gv * gv;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            double upd = lr_t * mhat / (std::sqrt(vhat) + state.eps);
            if (state.kind == OptimKind::AdamW && state.weight_decay != 0.0)
                upd += lr_t * state.weight_decay * p->value.data[i];
            p->value.data[i] -= upd;
        }
        require_finite(p->value, p->name.c_str());
    }
}

}  // namespace subsel
