#include "subsel/approximator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "subsel/math.hpp"
#include "subsel/optim.hpp"
#include "subsel/rng.hpp"

namespace subsel {

namespace {

Tensor gaussian_init(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

}  // namespace

const char* approx_variant_name(ApproxVariant v) {
    switch (v) {
        case ApproxVariant::Attention: return "attention";
        case ApproxVariant::Feedforward: return "feedforward";
        case ApproxVariant::Recurrent: return "recurrent";
    }
    return "attention";
}

ApproxVariant approx_variant_from_name(const std::string& name) {
    if (name == "attention") return ApproxVariant::Attention;
    if (name == "feedforward") return ApproxVariant::Feedforward;
    if (name == "recurrent") return ApproxVariant::Recurrent;
    throw std::invalid_argument("unknown approximator variant '" + name + "'");
}

ApproximatorParams make_approximator(const ApproxConfig& config) {
    if (config.d_x == 0 || config.classes == 0)
        throw std::invalid_argument("make_approximator: d_x and classes must be set");
    ApproximatorParams ap;
    ap.config = config;
    Rng rng(config.init_seed);
    ParamSet& ps = ap.params;

    auto scale_for = [](std::size_t fan_in) {
        return 1.0 / std::sqrt(static_cast<double>(fan_in));
    };
    ps.add("approx/proj/w", gaussian_init(rng, config.in_width, config.proj,
                                          scale_for(config.in_width)));
    ps.add("approx/proj/b", Tensor::zeros({1, config.proj}));
    if (config.variant == ApproxVariant::Attention) {
        ps.add("approx/att/wq",
               gaussian_init(rng, config.proj, config.att, scale_for(config.proj)));
        ps.add("approx/att/wk",
               gaussian_init(rng, config.proj, config.att, scale_for(config.proj)));
        ps.add("approx/att/wv",
               gaussian_init(rng, config.proj, config.att, scale_for(config.proj)));
        ps.add("approx/att/wc",
               gaussian_init(rng, config.att, config.proj, scale_for(config.att)));
    } else if (config.variant == ApproxVariant::Recurrent) {
        ps.add("approx/rnn/w_in",
               gaussian_init(rng, config.proj, config.att, scale_for(config.proj)));
        ps.add("approx/rnn/w_rec",
               gaussian_init(rng, config.att, config.att, scale_for(config.att)));
        ps.add("approx/rnn/b", Tensor::zeros({1, config.att}));
        ps.add("approx/rnn/w_out",
               gaussian_init(rng, config.att, config.proj, scale_for(config.att)));
    }
    ps.add("approx/ln1/gamma", Tensor::full({1, config.proj}, 1.0));
    ps.add("approx/ln1/beta", Tensor::zeros({1, config.proj}));
    ps.add("approx/ffn/w1", gaussian_init(rng, config.proj, config.ffn, scale_for(config.proj)));
    ps.add("approx/ffn/w2", gaussian_init(rng, config.ffn, config.proj, scale_for(config.ffn)));
    ps.add("approx/ln2/gamma", Tensor::full({1, config.proj}, 1.0));
    ps.add("approx/ln2/beta", Tensor::zeros({1, config.proj}));
    const std::size_t head_in = config.proj + config.d_x;
    ps.add("approx/head/w1", gaussian_init(rng, head_in, config.head_hidden, scale_for(head_in)));
    ps.add("approx/head/b1", Tensor::zeros({1, config.head_hidden}));
    ps.add("approx/head/w2", gaussian_init(rng, config.head_hidden, config.classes,
                                           scale_for(config.head_hidden)));
    ps.add("approx/head/b2", Tensor::zeros({1, config.classes}));
    return ap;
}

namespace {

// Elman pass down the rows: s_t = tanh(h_t W_in + s_{t-1} W_rec + b),
// mixed row t = s_t W_out. Row count is a node count, so the loop is short.
Val recurrent_mix_on_tape(Tape& tape, ApproximatorParams& ap, Val h_proj) {
    ParamSet& ps = ap.params;
    const std::size_t n = tape.value(h_proj).rows();
    Val w_in = tape.param(ps.at("approx/rnn/w_in"));
    Val w_rec = tape.param(ps.at("approx/rnn/w_rec"));
    Val b = tape.param(ps.at("approx/rnn/b"));
    Val w_out = tape.param(ps.at("approx/rnn/w_out"));
    Val state = tape.constant(Tensor::zeros({1, ap.config.att}), "rnn_state0");
    std::vector<Val> mixed;
    for (std::size_t t = 0; t < n; ++t) {
        Val row = tape.gather_rows(h_proj, {t});
        state = tape.tanh_(
            tape.add_row(tape.add(tape.matmul(row, w_in), tape.matmul(state, w_rec)), b));
        mixed.push_back(tape.matmul(state, w_out));
    }
    return tape.concat_rows(mixed);
}

}  // namespace

Val approx_block_on_tape(Tape& tape, ApproximatorParams& ap, Val h_proj) {
    ParamSet& ps = ap.params;
    Val pre = h_proj;  // Feedforward: no mixing, residual input is the projection
    if (ap.config.variant == ApproxVariant::Attention) {
        Val q = tape.matmul(h_proj, tape.param(ps.at("approx/att/wq")));
        Val k = tape.matmul(h_proj, tape.param(ps.at("approx/att/wk")));
        Val vv = tape.matmul(h_proj, tape.param(ps.at("approx/att/wv")));
        const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(ap.config.att));
        Val att_rows =
            tape.softmax_rows(tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_k));
        Val att = tape.matmul(tape.matmul(att_rows, vv), tape.param(ps.at("approx/att/wc")));
        pre = tape.add(att, h_proj);
    } else if (ap.config.variant == ApproxVariant::Recurrent) {
        pre = tape.add(recurrent_mix_on_tape(tape, ap, h_proj), h_proj);
    }

    Val zeta1 = tape.layer_norm(pre, tape.param(ps.at("approx/ln1/gamma")),
                                tape.param(ps.at("approx/ln1/beta")));
    Val zeta2 = tape.matmul(tape.relu(tape.matmul(zeta1, tape.param(ps.at("approx/ffn/w1")))),
                            tape.param(ps.at("approx/ffn/w2")));
    return tape.layer_norm(tape.add(zeta1, zeta2), tape.param(ps.at("approx/ln2/gamma")),
                           tape.param(ps.at("approx/ln2/beta")));
}

Val attention_block_on_tape(Tape& tape, ApproximatorParams& ap, Val h_proj) {
    if (ap.config.variant != ApproxVariant::Attention)
        throw std::invalid_argument("attention_block: params built for a different variant");
    return approx_block_on_tape(tape, ap, h_proj);
}

Tensor attention_block(ApproximatorParams& ap, const Tensor& h_proj) {
    Tape tape;
    return tape.value(attention_block_on_tape(tape, ap, tape.constant(h_proj, "h_proj")));
}

Val zeta_last_on_tape(Tape& tape, ApproximatorParams& ap, const Tensor& h,
                      const BfsOrder& rho) {
    if (h.cols() != ap.config.in_width)
        throw std::invalid_argument("zeta_last: embedding width mismatch");
    Tensor ordered = Tensor::zeros({rho.order.size(), h.cols()});
    for (std::size_t i = 0; i < rho.order.size(); ++i)
        for (std::size_t j = 0; j < h.cols(); ++j) ordered.at(i, j) = h.at(rho.order[i], j);
    Val x = tape.constant(std::move(ordered), "h_ordered");
    Val proj = tape.add_row(tape.matmul(x, tape.param(ap.params.at("approx/proj/w"))),
                            tape.param(ap.params.at("approx/proj/b")));
    Val zeta = approx_block_on_tape(tape, ap, proj);
    return tape.gather_rows(zeta, {rho.order.size() - 1});
}

Val head_probs_on_tape(Tape& tape, ApproximatorParams& ap, Val zeta_last, Val x_rows,
                       const Tensor* dropout_mask) {
    ParamSet& ps = ap.params;
    const std::size_t batch = tape.value(x_rows).rows();
    if (tape.value(x_rows).cols() != ap.config.d_x)
        throw std::invalid_argument("head_probs: x width mismatch");
    Val zeta_rep = tape.gather_rows(zeta_last, std::vector<std::size_t>(batch, 0));
    Val joint = tape.concat_cols(zeta_rep, x_rows);
    Val hidden = tape.relu(tape.add_row(tape.matmul(joint, tape.param(ps.at("approx/head/w1"))),
                                        tape.param(ps.at("approx/head/b1"))));
    if (dropout_mask != nullptr)
        hidden = tape.mul(hidden, tape.constant(*dropout_mask, "dropout_mask"));
    Val logits = tape.add_row(tape.matmul(hidden, tape.param(ps.at("approx/head/w2"))),
                              tape.param(ps.at("approx/head/b2")));
    return tape.softmax_rows(logits);
}

Tensor predict(const EmbeddingMatrix& h, const BfsOrder& rho, const Tensor& x_row,
               ApproximatorParams& ap) {
    Tape tape;
    Val zeta = zeta_last_on_tape(tape, ap, h.h, rho);
    Val probs = head_probs_on_tape(tape, ap, zeta, tape.constant(x_row, "x"), nullptr);
    return tape.value(probs);
}

double uniform_kl(const Tensor& targets) {
    const double c = static_cast<double>(targets.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < targets.rows(); ++i)
        for (std::size_t j = 0; j < targets.cols(); ++j) {
            const double t = targets.at(i, j);
            if (t > 0.0) total += t * std::log(t * c);
        }
    return total / static_cast<double>(targets.rows());
}

double mean_kl(const std::vector<ArchSupervision>& archs, const Tensor& train_features,
               ApproximatorParams& ap) {
    double total = 0.0;
    std::size_t rows = 0;
    for (const auto& sup : archs) {
        Tape tape;
        Val zeta = zeta_last_on_tape(tape, ap, sup.h, sup.rho);
        Val probs = head_probs_on_tape(tape, ap, zeta,
                                       tape.constant(train_features, "x_all"), nullptr);
        const Tensor p = tape.value(probs);
        total += kl_div(sup.targets, p) * static_cast<double>(p.rows());
        rows += p.rows();
    }
    return total / static_cast<double>(rows);
}

TrainedApproximator train_approximator(const std::vector<ArchSupervision>& train_archs,
                                       const std::vector<ArchSupervision>& val_archs,
                                       const Tensor& train_features,
                                       const ApproxTrainConfig& config,
                                       const ApproxConfig& net_config) {
    if (train_archs.empty()) throw std::invalid_argument("train_approximator: no training archs");
    const std::size_t n_inst = train_features.rows();
    for (const auto& sup : train_archs)
        if (sup.targets.rows() != n_inst)
            throw std::invalid_argument("train_approximator: targets/instances mismatch for " +
                                        sup.arch_id);

    TrainedApproximator out;
    out.params = make_approximator(net_config);

    const std::size_t pairs = train_archs.size() * n_inst;
    const std::size_t steps_per_epoch = (pairs + config.batch - 1) / config.batch;
    OptimizerState opt = make_adamw(config.lr, config.weight_decay, config.clip_norm);
    opt.schedule = ScheduleKind::CosineAnnealing;
    opt.t_max = config.epochs * steps_per_epoch;
    opt.lr_min = 0.0;

    Rng rng(config.seed);
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_values;  // best-val snapshot, insertion order

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_kl = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            // Uniform (arch, instance) pairs, grouped per arch so each arch's
            // attention pass is computed once per batch.
            std::map<std::size_t, std::vector<std::size_t>> by_arch;
            for (std::size_t b = 0; b < config.batch; ++b)
                by_arch[rng.index(train_archs.size())].push_back(rng.index(n_inst));

            Tape tape;
            std::vector<Val> losses;
            for (auto& [ai, inst] : by_arch) {
                const ArchSupervision& sup = train_archs[ai];
                Val zeta = zeta_last_on_tape(tape, out.params, sup.h, sup.rho);
                Tensor x = rows_at(train_features, inst);
                Tensor t = rows_at(sup.targets, inst);
                Tensor mask = Tensor::zeros({inst.size(), net_config.head_hidden});
                const double keep = 1.0 - net_config.dropout;
                for (double& mv : mask.data) mv = rng.uniform() < keep ? 1.0 / keep : 0.0;
                Val probs = head_probs_on_tape(tape, out.params, zeta,
                                               tape.constant(std::move(x), "x_batch"), &mask);
                Val kl = tape.kl_div_mean(tape.constant(std::move(t), "targets"), probs);
                losses.push_back(
                    tape.scale(kl, static_cast<double>(inst.size()) /
                                       static_cast<double>(config.batch)));
            }
            Val loss = losses.size() == 1 ? losses[0] : tape.add_many(losses);
            forward_backward(tape, loss, out.params.params);
            optimizer_step(opt, out.params.params);
            epoch_kl += tape.value(loss).value();
        }
        out.train_kl_curve.push_back(epoch_kl / static_cast<double>(steps_per_epoch));

        if (!val_archs.empty()) {
            const double val = mean_kl(val_archs, train_features, out.params);
            out.val_kl_curve.push_back(val);
            if (val < best_val) {
                best_val = val;
                best_values.clear();
                for (const auto& p : out.params.params.all()) best_values.push_back(p->value);
            }
        }
    }

    if (!best_values.empty()) {
        std::size_t i = 0;
        for (const auto& p : out.params.params.all()) p->value = best_values[i++];
        out.best_val_kl = best_val;
    }
    return out;
}

}  // namespace subsel
