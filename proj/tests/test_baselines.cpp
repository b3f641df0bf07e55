#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "subsel/baselines.hpp"
#include "testutil.hpp"

using namespace subsel;

namespace {

Architecture arch_from(std::vector<OpCode> nodes,
                       std::vector<std::pair<std::size_t, std::size_t>> edges) {
    Architecture a;
    a.nodes = std::move(nodes);
    a.edges = std::move(edges);
    a.id = canonical_hash(a);
    return a;
}

std::vector<std::size_t> sorted_copy(std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

// All b-element index subsets of [0, n), for exhaustive FL optima.
void subsets_rec(std::size_t n, std::size_t b, std::size_t from, std::vector<std::size_t>& cur,
                 std::vector<std::vector<std::size_t>>& out) {
    if (cur.size() == b) {
        out.push_back(cur);
        return;
    }
    for (std::size_t i = from; i < n; ++i) {
        cur.push_back(i);
        subsets_rec(n, b, i + 1, cur, out);
        cur.pop_back();
    }
}

std::vector<std::vector<std::size_t>> all_subsets(std::size_t n, std::size_t b) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur;
    subsets_rec(n, b, 0, cur, out);
    return out;
}

}  // namespace

TEST_CASE("select_random is uniform, deterministic, and total at b=n") {
    const auto all = select_random(6, 6, 3);
    CHECK(sorted_copy(all.order) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    CHECK(all.method == "random");

    CHECK(select_random(20, 5, 9).order == select_random(20, 5, 9).order);
    CHECK_THROWS_AS(select_random(4, 5, 0), std::invalid_argument);

    std::vector<std::size_t> counts(10, 0);
    for (std::uint64_t s = 0; s < 10000; ++s) counts[select_random(10, 1, s).order[0]] += 1;
    const double sigma = std::sqrt(0.1 * 0.9 / 10000.0);
    for (const std::size_t c : counts)
        CHECK(std::abs(c / 10000.0 - 0.1) <= 3.0 * sigma);
}

TEST_CASE("facility location: first pick, tie-break, and greedy guarantee") {
    const Tensor features = testutil::random_tensor(9, 4, 13, 1.0);

    // b=1 is the exhaustive optimum: argmax_i sum_j x_i.x_j.
    std::size_t best = 0;
    double best_sum = -1e300;
    for (std::size_t i = 0; i < 9; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 9; ++j)
            for (std::size_t c = 0; c < 4; ++c) s += features.at(i, c) * features.at(j, c);
        if (s > best_sum) best_sum = s, best = i;
    }
    const auto one = select_facility_location(features, 1);
    REQUIRE(one.order.size() == 1);
    CHECK(one.order[0] == best);
    CHECK(facility_location_value(features, one.order) ==
          doctest::Approx(best_sum).epsilon(1e-12));

    // Duplicate best row later in the matrix: ties keep the lowest index.
    Tensor tied = features;
    for (std::size_t c = 0; c < 4; ++c) tied.at(8, c) = tied.at(best, c);
    if (best != 8) CHECK(select_facility_location(tied, 1).order[0] == std::min(best, (std::size_t)8));

    // Non-negative features: greedy objective is monotone and near-optimal.
    Tensor pos = testutil::random_tensor(8, 3, 29, 1.0);
    for (double& v : pos.data) v = std::abs(v);
    const auto greedy = select_facility_location(pos, 3);
    double prev = 0.0;
    for (std::size_t t = 1; t <= 3; ++t) {
        const std::vector<std::size_t> prefix(greedy.order.begin(), greedy.order.begin() + t);
        const double val = facility_location_value(pos, prefix);
        CHECK(val >= prev - 1e-12);
        prev = val;
    }
    double opt = -1e300;
    for (const auto& s : all_subsets(8, 3))
        opt = std::max(opt, facility_location_value(pos, s));
    CHECK(facility_location_value(pos, greedy.order) >= (1.0 - 1.0 / std::exp(1.0)) * opt);

    // Negated-Euclidean knob: b=1 picks the medoid.
    std::size_t medoid = 0;
    double medoid_val = -1e300;
    for (std::size_t i = 0; i < 8; ++i) {
        const double v = facility_location_value(pos, {i}, FlSimilarity::NegEuclidean);
        if (v > medoid_val) medoid_val = v, medoid = i;
    }
    CHECK(select_facility_location(pos, 1, FlSimilarity::NegEuclidean).order[0] == medoid);

    CHECK_THROWS_AS(select_facility_location(features, 0), std::invalid_argument);
    CHECK_THROWS_AS(select_facility_location(features, 10), std::invalid_argument);
}

TEST_CASE("bottom-b loss selection and its Gumbel variant") {
    std::vector<double> increasing{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    const auto plain = select_bottom_b_loss(increasing, 3);
    CHECK(plain.order == std::vector<std::size_t>{0, 1, 2});
    CHECK(plain.method == "bottom_b_loss");
    CHECK(plain.argtop == std::vector<std::size_t>{0, 1, 2});
    for (std::size_t i = 0; i < increasing.size(); ++i)
        CHECK(plain.pi[i] == -increasing[i]);

    const auto zero_noise = select_bottom_b_loss(increasing, 3, 0.0, 42);
    CHECK(zero_noise.order == plain.order);
    CHECK(zero_noise.method == "bottom_b_loss_gumbel");

    // Tied losses under scale 0.025: both orderings occur across seeds.
    const std::vector<double> tied{0.5, 0.5};
    std::size_t first_wins = 0;
    for (std::uint64_t s = 0; s < 1000; ++s)
        first_wins += select_bottom_b_loss(tied, 1, 0.025, s).order[0] == 0;
    CHECK(first_wins > 0);
    CHECK(first_wins < 1000);

    CHECK_THROWS_AS(select_bottom_b_loss(increasing, 7), std::invalid_argument);
}

TEST_CASE("EL2N closed forms on a frozen head") {
    DatasetBundle data;
    data.features = testutil::random_tensor(4, 3, 7, 1.0);
    data.labels = {0, 0, 0, 0};
    data.classes = 2;
    data.train_idx = {0, 1, 2, 3};

    auto net = materialize(arch_from({OpCode::Input, OpCode::Output}, {{0, 1}}),
                           Dims{3, 2, 2}, 5);
    Tensor& w = net.params.at("net/head/w").value;
    Tensor& bias = net.params.at("net/head/b").value;
    std::fill(w.data.begin(), w.data.end(), 0.0);

    // Uniform prediction: score = sqrt((C-1)/C) exactly.
    std::fill(bias.data.begin(), bias.data.end(), 0.0);
    for (const double s : el2n_scores(net, data))
        CHECK(s == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));

    // Confident correct prediction: score ~ 0.
    bias.at(0, 0) = 40.0;
    for (const double s : el2n_scores(net, data)) CHECK(s <= 1e-12);
}

TEST_CASE("GraNd factorization matches the autodiff gradient norm") {
    const auto data = make_blobs(40, 5, 3, 4.0, 19);
    const Architecture a = arch_from({OpCode::Input, OpCode::OpA, OpCode::Output},
                                     {{0, 1}, {1, 2}, {0, 2}});
    auto net = materialize(a, Dims{5, 6, 3}, 11);
    const auto scores = grand_scores(net, data);
    REQUIRE(scores.size() == data.train_idx.size());

    for (std::size_t i = 0; i < 8; ++i) {  // spot-check a prefix of instances
        Tensor x_row = rows_at(data.features, {data.train_idx[i]});
        const std::size_t y = data.labels[data.train_idx[i]];
        Tape tape;
        const Val pen = net_penultimate(tape, net, tape.constant(x_row, "x"));
        const Val logits = net_head(tape, net, pen);
        const Val loss = tape.cross_entropy_mean(logits, {y});
        forward_backward(tape, loss, net.params);
        double frob = 0.0;
        for (const double g : net.params.at("net/head/w").grad.data) frob += g * g;
        CHECK(scores[i] == doctest::Approx(std::sqrt(frob)).epsilon(1e-9));
    }
}

TEST_CASE("warmup-based selectors produce valid subsets and train for real") {
    const auto data = make_blobs(60, 4, 3, 5.0, 37);
    const Architecture a = arch_from({OpCode::Input, OpCode::OpB, OpCode::Output},
                                     {{0, 1}, {1, 2}});
    const Dims dims{4, 5, 3};
    const std::size_t n_tr = data.train_idx.size();

    Tape::reset_grad_evals();
    const auto el2n = select_el2n(a, dims, data, 5, 2, 3);
    CHECK(Tape::grad_evals() > 0);
    REQUIRE(el2n.order.size() == 5);
    CHECK(std::set<std::size_t>(el2n.order.begin(), el2n.order.end()).size() == 5);
    for (const std::size_t i : el2n.order) CHECK(i < n_tr);
    CHECK(select_el2n(a, dims, data, 5, 2, 3).order == el2n.order);
    CHECK(el2n.method == "el2n");

    const auto grand = select_grand(a, dims, data, 5, 2, 3);
    REQUIRE(grand.order.size() == 5);
    CHECK(grand.method == "grand");
    // Scores are the selection logits; argtop mirrors the pick order.
    CHECK(grand.argtop == grand.order);
    CHECK_THROWS_AS(select_el2n(a, dims, data, n_tr + 1, 2, 3), std::invalid_argument);
}

TEST_CASE("baseline configs are validated per method") {
    BaselineConfig ok;
    ok.method = "bottom_b_loss";
    ok.b = 4;
    ok.gumbel_scale = 0.025;
    CHECK_NOTHROW(validate_baseline_config(ok));

    BaselineConfig bad = ok;
    bad.method = "coreset";
    CHECK_THROWS_AS(validate_baseline_config(bad), std::invalid_argument);

    bad = ok;
    bad.b = 0;
    CHECK_THROWS_AS(validate_baseline_config(bad), std::invalid_argument);

    bad = ok;
    bad.method = "el2n";
    bad.gumbel_scale = std::nullopt;
    bad.warmup_epochs = 0;
    CHECK_THROWS_AS(validate_baseline_config(bad), std::invalid_argument);

    bad = ok;
    bad.method = "random";
    CHECK_THROWS_AS(validate_baseline_config(bad), std::invalid_argument);

    bad = ok;
    bad.gumbel_scale = -0.5;
    CHECK_THROWS_AS(validate_baseline_config(bad), std::invalid_argument);
}
