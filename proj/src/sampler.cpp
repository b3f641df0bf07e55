#include "subsel/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "subsel/math.hpp"
#include "subsel/optim.hpp"
#include "subsel/rng.hpp"

namespace subsel {

double sequence_log_prob(const std::vector<double>& pi, const std::vector<std::size_t>& s) {
    std::set<std::size_t> used;
    for (std::size_t idx : s) {
        if (idx >= pi.size())
            throw std::invalid_argument("sequence_prob: index out of range");
        if (!used.insert(idx).second)
            throw std::invalid_argument("sequence_prob: repeated index");
    }
    std::vector<bool> taken(pi.size(), false);
    double log_p = 0.0;
    for (std::size_t idx : s) {
        // log of exp(pi_idx) / sum over remaining.
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < pi.size(); ++j)
            if (!taken[j]) mx = std::max(mx, pi[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < pi.size(); ++j)
            if (!taken[j]) z += std::exp(pi[j] - mx);
        log_p += pi[idx] - (mx + std::log(z));
        taken[idx] = true;
    }
    return log_p;
}

double sequence_prob(const std::vector<double>& pi, const std::vector<std::size_t>& s) {
    return std::exp(sequence_log_prob(pi, s));
}

SubsetSelection sample_subset(const std::vector<double>& pi, std::size_t b, std::uint64_t seed) {
    if (b > pi.size())
        throw std::invalid_argument("sample_subset: b exceeds population size");
    Rng rng(seed);
    std::vector<std::pair<double, std::size_t>> keys(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) keys[i] = {pi[i] + rng.gumbel(), i};
    // Descending keys give the Plackett-Luce draw order; index tie-break for
    // determinism (ties have measure zero but float equality can happen).
    std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b2) {
        return a.first != b2.first ? a.first > b2.first : a.second < b2.second;
    });
    SubsetSelection sel;
    sel.pi = pi;
    sel.seed = seed;
    for (std::size_t t = 0; t < b; ++t) sel.order.push_back(keys[t].second);

    std::vector<std::pair<double, std::size_t>> plain(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) plain[i] = {pi[i], i};
    std::sort(plain.begin(), plain.end(), [](const auto& a, const auto& b2) {
        return a.first != b2.first ? a.first > b2.first : a.second < b2.second;
    });
    for (std::size_t t = 0; t < b; ++t) sel.argtop.push_back(plain[t].second);
    return sel;
}

double sampler_entropy(const std::vector<double>& pi) {
    return entropy(softmax(Tensor::row(std::vector<double>(pi.begin(), pi.end()))));
}

double surrogate_loss(const std::vector<double>& pi, const std::vector<double>& losses,
                      std::size_t b, double lambda) {
    if (pi.size() != losses.size())
        throw std::invalid_argument("surrogate_loss: pi/losses size mismatch");
    const Tensor p = softmax(Tensor::row(std::vector<double>(pi.begin(), pi.end())));
    double expected = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) expected += p.data[i] * losses[i];
    return static_cast<double>(b) * expected - lambda * entropy(p);
}

Val surrogate_loss_on_tape(Tape& tape, Val pi, const std::vector<double>& losses, std::size_t b,
                           double lambda) {
    const Tensor& piv = tape.value(pi);
    if (piv.numel() != losses.size())
        throw std::invalid_argument("surrogate_loss: pi/losses size mismatch");
    Val p = tape.softmax_rows(pi);
    Val loss_row = tape.constant(Tensor::row(std::vector<double>(losses.begin(), losses.end())),
                                 "losses");
    Val expected = tape.dot(p, loss_row);
    Val ent = tape.scale(tape.dot(p, tape.log_(p)), -1.0);
    return tape.sub(tape.scale(expected, static_cast<double>(b)), tape.scale(ent, lambda));
}

SamplerArchContext make_arch_context(const Architecture& arch, EncoderParams& enc,
                                     ApproximatorParams& ap, const Tensor& train_features,
                                     const std::vector<std::size_t>& train_labels) {
    SamplerArchContext ctx;
    const EmbeddingMatrix em = encode(arch, enc);
    ctx.arch_id = em.arch_id;

    ctx.pooled_h = Tensor::zeros({1, em.h.cols()});
    for (std::size_t i = 0; i < em.h.rows(); ++i)
        for (std::size_t j = 0; j < em.h.cols(); ++j) ctx.pooled_h.data[j] += em.h.at(i, j);
    for (double& v : ctx.pooled_h.data) v /= static_cast<double>(em.h.rows());

    const BfsOrder rho = bfs_order(arch);
    Tape tape;
    Val zeta = zeta_last_on_tape(tape, ap, em.h, rho);
    Val probs = head_probs_on_tape(tape, ap, zeta, tape.constant(train_features, "x_all"),
                                   nullptr);
    ctx.o = tape.value(probs);

    ctx.losses.resize(train_labels.size());
    for (std::size_t i = 0; i < train_labels.size(); ++i) {
        Tensor row = Tensor::zeros({1, ctx.o.cols()});
        for (std::size_t j = 0; j < ctx.o.cols(); ++j) row.data[j] = ctx.o.at(i, j);
        ctx.losses[i] = cross_entropy(row, train_labels[i]);
    }
    return ctx;
}

SubsetSelection optimize_and_sample(const std::vector<double>& losses, std::size_t b,
                                    const TransductiveConfig& config) {
    if (b > losses.size())
        throw std::invalid_argument("optimize_and_sample: b exceeds population size");
    ParamSet ps;
    Parameter& pi = ps.add("pi", Tensor::zeros({1, losses.size()}));
    OptimizerState opt = make_adam(config.lr);
    for (std::size_t step = 0; step < config.steps; ++step) {
        Tape tape;
        Val loss = surrogate_loss_on_tape(tape, tape.param(pi), losses, b, config.lambda);
        forward_backward(tape, loss, ps);
        optimizer_step(opt, ps);
    }
    SubsetSelection sel = sample_subset(pi.value.data, b, config.seed);
    sel.method = "transductive";
    return sel;
}

SubsetSelection transductive_select(const SamplerArchContext& ctx, std::size_t b,
                                    const TransductiveConfig& config) {
    return optimize_and_sample(ctx.losses, b, config);
}

InductiveParams make_inductive(const InductiveConfig& config) {
    if (config.d_x == 0 || config.classes == 0)
        throw std::invalid_argument("make_inductive: d_x and classes must be set");
    InductiveParams ind;
    ind.config = config;
    Rng rng(config.init_seed);
    const std::size_t in = config.pooled_width + config.classes + config.d_x + config.classes;
    auto init = [&rng](std::size_t r, std::size_t c) {
        Tensor t = Tensor::zeros({r, c});
        const double s = 1.0 / std::sqrt(static_cast<double>(r));
        for (double& v : t.data) v = s * rng.normal();
        return t;
    };
    ind.params.add("inductive/w1", init(in, config.h1));
    ind.params.add("inductive/b1", Tensor::zeros({1, config.h1}));
    ind.params.add("inductive/w2", init(config.h1, config.h2));
    ind.params.add("inductive/b2", Tensor::zeros({1, config.h2}));
    ind.params.add("inductive/w3", init(config.h2, 1));
    ind.params.add("inductive/b3", Tensor::zeros({1, 1}));
    return ind;
}

Tensor inductive_input_matrix(const Tensor& pooled_h, const Tensor& o, const Tensor& x,
                              const std::vector<std::size_t>& labels, std::size_t classes) {
    const std::size_t n = x.rows();
    if (o.rows() != n || labels.size() != n)
        throw std::invalid_argument("inductive_input_matrix: row count mismatch");
    const std::size_t f = pooled_h.cols() + o.cols() + x.cols() + classes;
    Tensor in = Tensor::zeros({n, f});
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t off = 0;
        for (std::size_t j = 0; j < pooled_h.cols(); ++j) in.at(i, off++) = pooled_h.data[j];
        for (std::size_t j = 0; j < o.cols(); ++j) in.at(i, off++) = o.at(i, j);
        for (std::size_t j = 0; j < x.cols(); ++j) in.at(i, off++) = x.at(i, j);
        in.at(i, off + labels[i]) = 1.0;
    }
    return in;
}

namespace {

// Pre-sigmoid activation z; scores are sigmoid(z) and logit(scores) is z.
Val inductive_preact_on_tape(Tape& tape, InductiveParams& ind, Val input_rows) {
    ParamSet& ps = ind.params;
    Val h = tape.leaky_relu(tape.add_row(tape.matmul(input_rows, tape.param(ps.at("inductive/w1"))),
                                         tape.param(ps.at("inductive/b1"))),
                            ind.config.leaky_slope);
    h = tape.leaky_relu(tape.add_row(tape.matmul(h, tape.param(ps.at("inductive/w2"))),
                                     tape.param(ps.at("inductive/b2"))),
                        ind.config.leaky_slope);
    return tape.add_row(tape.matmul(h, tape.param(ps.at("inductive/w3"))),
                        tape.param(ps.at("inductive/b3")));
}

}  // namespace

Val inductive_scores_on_tape(Tape& tape, InductiveParams& ind, Val input_rows) {
    return tape.sigmoid(inductive_preact_on_tape(tape, ind, input_rows));
}

Tensor inductive_scores(InductiveParams& ind, const SamplerArchContext& ctx, const Tensor& x,
                        const std::vector<std::size_t>& labels) {
    Tape tape;
    Val scores = inductive_scores_on_tape(
        tape, ind,
        tape.constant(inductive_input_matrix(ctx.pooled_h, ctx.o, x, labels, ind.config.classes),
                      "inductive_in"));
    return tape.value(scores);
}

double inductive_score(const Tensor& pooled_h, const Tensor& x_row, std::size_t y,
                       const Tensor& o_row, InductiveParams& ind) {
    Tensor x(std::vector<std::size_t>{1, x_row.numel()},
             std::vector<double>(x_row.data.begin(), x_row.data.end()));
    Tensor o(std::vector<std::size_t>{1, o_row.numel()},
             std::vector<double>(o_row.data.begin(), o_row.data.end()));
    Tape tape;
    Val scores = inductive_scores_on_tape(
        tape, ind,
        tape.constant(inductive_input_matrix(pooled_h, o, x, {y}, ind.config.classes),
                      "inductive_in"));
    return tape.value(scores).value();
}

InductiveParams train_inductive(const std::vector<SamplerArchContext>& contexts,
                                const Tensor& train_features,
                                const std::vector<std::size_t>& train_labels, std::size_t b,
                                const InductiveTrainConfig& config,
                                const InductiveConfig& net_config) {
    if (contexts.empty()) throw std::invalid_argument("train_inductive: no contexts");
    InductiveParams ind = make_inductive(net_config);
    OptimizerState opt = make_adam(config.lr);
    Rng rng(config.seed);
    std::vector<std::size_t> order(contexts.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t ai : order) {
            const SamplerArchContext& ctx = contexts[ai];
            Tape tape;
            Val in = tape.constant(
                inductive_input_matrix(ctx.pooled_h, ctx.o, train_features, train_labels,
                                       net_config.classes),
                "inductive_in");
            // logit(sigmoid(z)) = z, so the pre-sigmoid activation is pi.
            Val z = inductive_preact_on_tape(tape, ind, in);
            Val scores = tape.sigmoid(z);
            Val pi_row = tape.transpose(z);
            Val surr = surrogate_loss_on_tape(tape, pi_row, ctx.losses, b, config.lambda);
            Val budget = tape.affine(tape.sum_all(scores), config.lambda_prime,
                                     -config.lambda_prime * static_cast<double>(b));
            Val loss = tape.add(surr, budget);
            forward_backward(tape, loss, ind.params);
            optimizer_step(opt, ind.params);
        }
    }
    return ind;
}

SubsetSelection inductive_select(InductiveParams& ind, const SamplerArchContext& ctx,
                                 const Tensor& x, const std::vector<std::size_t>& labels,
                                 std::size_t b, std::uint64_t seed) {
    Tape tape;
    Val z = inductive_preact_on_tape(
        tape, ind,
        tape.constant(inductive_input_matrix(ctx.pooled_h, ctx.o, x, labels, ind.config.classes),
                      "inductive_in"));
    // logit(sigmoid(z)) = z: the pre-sigmoid activations are the logits.
    const Tensor& zv = tape.value(z);
    SubsetSelection sel = sample_subset(zv.data, b, seed);
    sel.method = "inductive";
    return sel;
}

SubsetSelection hybrid_select(InductiveParams& ind, const SamplerArchContext& ctx,
                              const Tensor& x, const std::vector<std::size_t>& labels,
                              std::size_t big_b, std::size_t b,
                              const TransductiveConfig& config) {
    // B = b is allowed (degenerate: result is exactly the stage-1 superset).
    if (b > big_b) throw std::invalid_argument("hybrid_select: need b <= B");
    Rng seeder(config.seed);
    const std::uint64_t stage1_seed = seeder.fork(1).bits();

    SubsetSelection stage1 = inductive_select(ind, ctx, x, labels, big_b, stage1_seed);
    std::vector<std::size_t> superset = stage1.order;
    std::sort(superset.begin(), superset.end());

    std::vector<double> restricted(superset.size());
    for (std::size_t i = 0; i < superset.size(); ++i) restricted[i] = ctx.losses[superset[i]];

    TransductiveConfig stage2 = config;
    SubsetSelection local = optimize_and_sample(restricted, b, stage2);

    SubsetSelection sel;
    sel.method = "hybrid";
    sel.seed = config.seed;
    sel.pi = local.pi;
    for (std::size_t i : local.order) sel.order.push_back(superset[i]);
    for (std::size_t i : local.argtop) sel.argtop.push_back(superset[i]);
    return sel;
}

}  // namespace subsel
