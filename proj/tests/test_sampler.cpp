#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "subsel/sampler.hpp"
#include "subsel/zoo.hpp"
#include "testutil.hpp"

using namespace subsel;

namespace {

// All ordered b-tuples of distinct indices from [0, n).
void ordered_tuples(std::size_t n, std::size_t b, std::vector<std::size_t>& cur,
                    std::vector<std::vector<std::size_t>>& out) {
    if (cur.size() == b) {
        out.push_back(cur);
        return;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (std::find(cur.begin(), cur.end(), i) != cur.end()) continue;
        cur.push_back(i);
        ordered_tuples(n, b, cur, out);
        cur.pop_back();
    }
}

std::vector<std::vector<std::size_t>> all_ordered(std::size_t n, std::size_t b) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur;
    ordered_tuples(n, b, cur, out);
    return out;
}

std::vector<std::size_t> sorted_copy(std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

// A tiny but real selection context: encoder + approximator forward passes
// over a materialized-and-pretrained zoo arch.
struct Fixture {
    DatasetBundle data = make_blobs(60, 4, 3, 6.0, 71);
    EncoderParams enc = make_encoder(EncoderConfig{2, 4, 8, 4, 23});
    ApproximatorParams ap;
    Tensor train_x;
    std::vector<std::size_t> train_y;
    std::vector<SamplerArchContext> contexts;

    explicit Fixture(std::size_t n_archs) {
        ApproxConfig cfg;
        cfg.in_width = 8;
        cfg.proj = 8;
        cfg.att = 4;
        cfg.ffn = 16;
        cfg.head_hidden = 32;
        cfg.d_x = 4;
        cfg.classes = 3;
        cfg.init_seed = 29;
        ap = make_approximator(cfg);
        train_x = rows_at(data.features, data.train_idx);
        train_y = labels_at(data.labels, data.train_idx);
        for (const Architecture& a : generate_space(61, n_archs))
            contexts.push_back(make_arch_context(a, enc, ap, train_x, train_y));
    }
};

InductiveConfig inductive_config_for(const Fixture& fx) {
    InductiveConfig cfg;
    cfg.pooled_width = fx.contexts[0].pooled_h.cols();
    cfg.d_x = 4;
    cfg.classes = 3;
    cfg.h1 = 16;
    cfg.h2 = 8;
    cfg.init_seed = 9;
    return cfg;
}

}  // namespace

TEST_CASE("sequence_prob matches the Plackett-Luce closed forms") {
    const std::vector<double> uniform3(3, 0.4);
    for (const auto& pair : all_ordered(3, 2))
        CHECK(sequence_prob(uniform3, pair) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

    const std::vector<double> two{std::log(2.0), 0.0};
    CHECK(sequence_prob(two, {0}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(sequence_prob(two, {1}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    const auto pi = testutil::random_vector(5, 3, 1.5);
    const auto triples = all_ordered(5, 3);
    REQUIRE(triples.size() == 60);
    double total = 0.0;
    for (const auto& s : triples) total += sequence_prob(pi, s);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // Shift invariance of the exact probability.
    auto shifted = pi;
    for (double& v : shifted) v += 7.25;
    for (const auto& s : triples)
        CHECK(sequence_prob(shifted, s) == doctest::Approx(sequence_prob(pi, s)).epsilon(1e-12));

    CHECK_THROWS_AS(sequence_prob(pi, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(sequence_prob(pi, {9}), std::invalid_argument);
}

TEST_CASE("sample_subset draws exact Plackett-Luce samples") {
    const auto pi = testutil::random_vector(6, 11, 1.0);
    const SubsetSelection all = sample_subset(pi, 6, 5);
    CHECK(sorted_copy(all.order) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    CHECK(all.pi == pi);
    CHECK(all.seed == 5);
    CHECK_THROWS_AS(sample_subset(pi, 7, 5), std::invalid_argument);

    // Dominant logit wins nearly always.
    std::vector<double> spiked(8, 0.0);
    spiked[3] = 20.0;
    std::size_t hits = 0;
    for (std::size_t s = 0; s < 10000; ++s) hits += sample_subset(spiked, 1, s).order[0] == 3;
    CHECK(static_cast<double>(hits) / 10000.0 >= 0.999);

    // Empirical ordered-pair frequencies vs the exact distribution.
    const std::vector<double> pi5{0.9, -0.3, 0.1, 1.4, -1.0};
    std::map<std::vector<std::size_t>, double> freq;
    const std::size_t draws = 100000;
    for (std::size_t s = 0; s < draws; ++s)
        freq[sample_subset(pi5, 2, s).order] += 1.0 / static_cast<double>(draws);
    double tv = 0.0;
    for (const auto& s : all_ordered(5, 2))
        tv += 0.5 * std::abs(freq[s] - sequence_prob(pi5, s));
    CHECK(tv <= 0.02);

    // Same seed, shifted logits: identical draw and identical argtop.
    auto shifted = pi5;
    for (double& v : shifted) v += 4.5;
    const auto a = sample_subset(pi5, 2, 77);
    const auto b = sample_subset(shifted, 2, 77);
    CHECK(a.order == b.order);
    CHECK(a.argtop == b.argtop);
    CHECK(sample_subset(pi5, 2, 77).order == a.order);

    // argtop is the deterministic descending top-b of pi.
    CHECK(a.argtop == std::vector<std::size_t>{3, 0});
}

TEST_CASE("sampler_entropy follows the categorical closed forms") {
    CHECK(sampler_entropy(std::vector<double>(7, 1.3)) ==
          doctest::Approx(std::log(7.0)).epsilon(1e-12));

    std::vector<double> spiked(5, 0.0);
    spiked[2] = 20.0;
    CHECK(sampler_entropy(spiked) <= 1e-6);

    const auto pi = testutil::random_vector(9, 19, 2.0);
    auto shifted = pi;
    for (double& v : shifted) v -= 3.75;
    CHECK(sampler_entropy(shifted) == doctest::Approx(sampler_entropy(pi)).epsilon(1e-12));
}

TEST_CASE("surrogate_loss closed forms and mean-field fidelity") {
    const std::vector<double> losses{0.3, 0.9, 0.1, 0.6, 0.45};
    const std::vector<double> uniform(5, 0.7);
    const double mean_l = (0.3 + 0.9 + 0.1 + 0.6 + 0.45) / 5.0;
    CHECK(surrogate_loss(uniform, losses, 2, 0.1) ==
          doctest::Approx(2.0 * mean_l - 0.1 * std::log(5.0)).epsilon(1e-12));

    std::vector<double> concentrated(5, 0.0);
    concentrated[3] = 40.0;
    CHECK(surrogate_loss(concentrated, losses, 2, 0.0) ==
          doctest::Approx(2.0 * losses[3]).epsilon(1e-9));

    // First term vs the exact expectation over all ordered pairs.
    for (std::uint64_t draw = 0; draw < 20; ++draw) {
        const auto pi = testutil::random_vector(5, 100 + draw, 1.0);
        double exact = 0.0;
        for (const auto& s : all_ordered(5, 2))
            exact += sequence_prob(pi, s) * (losses[s[0]] + losses[s[1]]);
        const double surrogate = surrogate_loss(pi, losses, 2, 0.0);
        CHECK(std::abs(surrogate - exact) <= 0.15 * std::abs(exact));
    }
}

TEST_CASE("surrogate gradients pass the finite-difference bound") {
    const auto losses = testutil::random_vector(8, 7, 0.6);
    std::vector<double> positive(losses);
    for (double& v : positive) v = std::abs(v) + 0.05;
    ParamSet ps;
    Parameter& pi = ps.add("pi", testutil::random_tensor(1, 8, 15, 0.8));
    const auto r = testutil::fd_check(ps, [&](Tape& tape) {
        return surrogate_loss_on_tape(tape, tape.param(pi), positive, 3, 0.1);
    });
    INFO("worst entry: ", r.worst);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("unregularized transductive optimization recovers the bottom-b losses") {
    std::vector<double> losses{0.62, 0.17, 1.05, 0.33, 0.91, 0.08, 0.74, 0.49, 1.3, 0.26,
                               0.55, 0.99};
    TransductiveConfig cfg;
    cfg.steps = 300;
    cfg.lr = 0.05;
    cfg.lambda = 0.0;
    cfg.seed = 4;

    Tape::reset_grad_evals();
    const SubsetSelection sel = optimize_and_sample(losses, 4, cfg);
    CHECK(Tape::grad_evals() == 300);

    REQUIRE(sel.order.size() == 4);
    CHECK(std::set<std::size_t>(sel.order.begin(), sel.order.end()).size() == 4);
    // bottom-4 losses: indices 5 (0.08), 1 (0.17), 9 (0.26), 3 (0.33)
    CHECK(sorted_copy(sel.argtop) == std::vector<std::size_t>{1, 3, 5, 9});

    const SubsetSelection again = optimize_and_sample(losses, 4, cfg);
    CHECK(again.order == sel.order);
    CHECK(again.pi == sel.pi);
}

TEST_CASE("make_arch_context exposes coherent forward-only quantities") {
    Fixture fx(2);
    const std::size_t n_tr = fx.train_y.size();
    for (const auto& ctx : fx.contexts) {
        CHECK(ctx.pooled_h.rows() == 1);
        CHECK(ctx.pooled_h.cols() == 8);
        REQUIRE(ctx.o.rows() == n_tr);
        REQUIRE(ctx.o.cols() == 3);
        REQUIRE(ctx.losses.size() == n_tr);
        for (std::size_t i = 0; i < n_tr; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 3; ++j) sum += ctx.o.at(i, j);
            CHECK(std::abs(sum - 1.0) < 1e-6);
            // losses are the cross-entropy of the o rows
            CHECK(ctx.losses[i] ==
                  doctest::Approx(-std::log(ctx.o.at(i, fx.train_y[i]))).epsilon(1e-9));
        }
    }

    TransductiveConfig cfg;
    cfg.steps = 250;
    cfg.lambda = 0.0;
    cfg.seed = 8;
    const auto sel = transductive_select(fx.contexts[0], 5, cfg);
    std::vector<std::size_t> want(n_tr);
    std::iota(want.begin(), want.end(), 0);
    std::sort(want.begin(), want.end(), [&](std::size_t a, std::size_t b) {
        return fx.contexts[0].losses[a] < fx.contexts[0].losses[b];
    });
    want.resize(5);
    CHECK(sorted_copy(sel.argtop) == sorted_copy(want));
}

TEST_CASE("inductive scorer: bounds, budget scale, determinism, zero gradients") {
    Fixture fx(3);
    const std::size_t n_tr = fx.train_y.size();
    const std::size_t b = n_tr / 5;

    // The linear budget penalty drifts the score mass monotonically; 30
    // epochs is where the pinned-seed trajectory crosses b (measured ~8.0).
    InductiveTrainConfig tcfg;
    tcfg.epochs = 30;
    tcfg.seed = 14;
    auto ind = train_inductive(fx.contexts, fx.train_x, fx.train_y, b, tcfg,
                               inductive_config_for(fx));

    for (const auto& ctx : fx.contexts) {
        const Tensor scores = inductive_scores(ind, ctx, fx.train_x, fx.train_y);
        REQUIRE(scores.rows() == n_tr);
        double total = 0.0;
        for (std::size_t i = 0; i < n_tr; ++i) {
            CHECK(scores.at(i, 0) > 0.0);
            CHECK(scores.at(i, 0) < 1.0);
            total += scores.at(i, 0);
        }
        // The lambda' budget term anchors the score mass near b.
        CHECK(total >= 0.75 * static_cast<double>(b));
        CHECK(total <= 1.25 * static_cast<double>(b));
    }

    // Identical inputs produce identical per-instance scores.
    SamplerArchContext clone = fx.contexts[0];
    clone.arch_id = "elsewhere";
    const Tensor s1 = inductive_scores(ind, fx.contexts[0], fx.train_x, fx.train_y);
    const Tensor s2 = inductive_scores(ind, clone, fx.train_x, fx.train_y);
    CHECK(s1.data == s2.data);

    // Selection is pure inference: no gradient passes, deterministic in seed,
    // and its logits are the pre-sigmoid scores.
    Tape::reset_grad_evals();
    const auto sel = inductive_select(ind, fx.contexts[0], fx.train_x, fx.train_y, b, 21);
    CHECK(Tape::grad_evals() == 0);
    CHECK(inductive_select(ind, fx.contexts[0], fx.train_x, fx.train_y, b, 21).order ==
          sel.order);
    for (std::size_t i = 0; i < n_tr; ++i) {
        const double sigmoid_pi = 1.0 / (1.0 + std::exp(-sel.pi[i]));
        CHECK(sigmoid_pi == doctest::Approx(s1.at(i, 0)).epsilon(1e-9));
    }

    // Re-serializing the arch does not change the selection.
    const Architecture reloaded = deserialize(serialize(generate_space(61, 3)[0]));
    const auto ctx2 = make_arch_context(reloaded, fx.enc, fx.ap, fx.train_x, fx.train_y);
    const auto sel2 = inductive_select(ind, ctx2, fx.train_x, fx.train_y, b, 21);
    CHECK(sel2.order == sel.order);
}

TEST_CASE("hybrid selection degenerates to its two parents at the budget ends") {
    Fixture fx(2);
    const std::size_t n_tr = fx.train_y.size();
    const std::size_t b = 6;

    InductiveTrainConfig tcfg;
    tcfg.epochs = 30;
    tcfg.seed = 2;
    auto ind = train_inductive(fx.contexts, fx.train_x, fx.train_y, b, tcfg,
                               inductive_config_for(fx));
    const SamplerArchContext& ctx = fx.contexts[1];

    TransductiveConfig cfg;
    cfg.steps = 120;
    cfg.seed = 31;

    // B = b: the stage-1 superset is the whole answer.
    const auto tight = hybrid_select(ind, ctx, fx.train_x, fx.train_y, b, b, cfg);
    const std::uint64_t stage1_seed = Rng(cfg.seed).fork(1).bits();
    const auto stage1 = inductive_select(ind, ctx, fx.train_x, fx.train_y, b, stage1_seed);
    CHECK(sorted_copy(tight.order) == sorted_copy(stage1.order));

    // B = |D_tr|: the restriction is a no-op and hybrid equals transductive.
    const auto wide = hybrid_select(ind, ctx, fx.train_x, fx.train_y, n_tr, b, cfg);
    const auto trans = transductive_select(ctx, b, cfg);
    CHECK(wide.order == trans.order);
    CHECK(wide.argtop == trans.argtop);

    // Any intermediate B keeps the result inside its stage-1 superset.
    const std::size_t mid_b = 2 * b;
    const auto mid = hybrid_select(ind, ctx, fx.train_x, fx.train_y, mid_b, b, cfg);
    const auto mid_stage1 =
        inductive_select(ind, ctx, fx.train_x, fx.train_y, mid_b, stage1_seed);
    const auto superset = std::set<std::size_t>(mid_stage1.order.begin(),
                                                mid_stage1.order.end());
    REQUIRE(mid.order.size() == b);
    for (const std::size_t i : mid.order) CHECK(superset.count(i) == 1);

    CHECK_THROWS_AS(hybrid_select(ind, ctx, fx.train_x, fx.train_y, b - 1, b, cfg),
                    std::invalid_argument);
}
