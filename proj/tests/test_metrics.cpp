#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "subsel/metrics.hpp"

using namespace subsel;

namespace {

SubsetSelection with_order(std::vector<std::size_t> order) {
    SubsetSelection s;
    s.order = std::move(order);
    return s;
}

}  // namespace

TEST_CASE("rar arithmetic and preconditions") {
    const std::map<std::string, double> full{{"a", 0.8}, {"b", 0.6}};
    CHECK(rar(full, full) == doctest::Approx(0.0));
    std::map<std::string, double> half;
    for (const auto& [id, v] : full) half[id] = v / 2.0;
    CHECK(rar(half, full) == doctest::Approx(0.5).epsilon(1e-12));

    const std::map<std::string, double> sub{{"a", 0.8 * 0.9}, {"b", 0.6 * 0.7}};
    CHECK(rar(sub, full) == doctest::Approx(0.2).epsilon(1e-12));

    CHECK_THROWS_AS(rar({{"a", 0.5}}, full), std::invalid_argument);
    CHECK_THROWS_AS(rar({{"a", 0.5}, {"c", 0.5}}, full), std::invalid_argument);
    CHECK_THROWS_AS(rar({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(rar(full, {{"a", 0.0}, {"b", 0.6}}), std::invalid_argument);
}

TEST_CASE("speedup ratios and monotonicity") {
    CHECK(speedup(4.0, 1.0, 3.0) == doctest::Approx(1.0));
    CHECK(speedup(10.0, 0.0, 1.0) == doctest::Approx(10.0));
    CHECK(speedup(10.0, 2.0, 1.0) < speedup(10.0, 1.0, 1.0));
    CHECK_THROWS_AS(speedup(0.0, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(speedup(5.0, 0.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(speedup(5.0, -1.0, 2.0), std::invalid_argument);
}

TEST_CASE("ranking metrics closed forms") {
    const std::map<std::string, double> full{{"a", 0.9}, {"b", 0.8}, {"c", 0.7}, {"d", 0.6}};
    const auto same = ranking_metrics(full, full, 4);
    CHECK(same.kendall_tau == doctest::Approx(1.0));
    CHECK(same.jaccard == doctest::Approx(1.0));

    // Swap the middle pair: one discordant pair out of C(4,2)=6.
    const std::map<std::string, double> swapped{{"a", 0.9}, {"c", 0.8}, {"b", 0.7}, {"d", 0.6}};
    const auto swap = ranking_metrics(full, swapped, 4);
    CHECK(swap.kendall_tau == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(swap.jaccard == doctest::Approx(1.0));

    // Reversed preference on top-2: disjoint top-k sets.
    const std::map<std::string, double> reversed{{"a", 0.6}, {"b", 0.7}, {"c", 0.8}, {"d", 0.9}};
    const auto rev = ranking_metrics(full, reversed, 2);
    CHECK(rev.jaccard == doctest::Approx(0.0));
    CHECK(rev.kendall_tau == doctest::Approx(-1.0));

    CHECK_THROWS_AS(ranking_metrics(full, full, 0), std::invalid_argument);
    CHECK_THROWS_AS(ranking_metrics(full, full, 5), std::invalid_argument);
    CHECK_THROWS_AS(ranking_metrics(full, {{"a", 1.0}}, 1), std::invalid_argument);
}

TEST_CASE("ranking metrics agree with brute force over all 24 permutations") {
    const std::vector<std::string> ids{"a", "b", "c", "d"};
    const std::map<std::string, double> full{{"a", 0.9}, {"b", 0.8}, {"c", 0.7}, {"d", 0.6}};

    std::vector<double> accs{0.9, 0.8, 0.7, 0.6};  // assigned by permutation
    std::vector<std::size_t> perm{0, 1, 2, 3};
    do {
        std::map<std::string, double> subset;
        for (std::size_t i = 0; i < 4; ++i) subset[ids[i]] = accs[perm[i]];

        // Brute force: accs is sorted descending, so ids[i] lands at rank
        // perm[i] in the subset ordering; count discordant pairs against the
        // full order (a,b,c,d).
        const std::vector<std::size_t>& pos = perm;
        std::size_t disc = 0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = i + 1; j < 4; ++j) disc += pos[i] > pos[j];
        const double want_tau = 1.0 - 2.0 * static_cast<double>(disc) / 6.0;

        const auto got = ranking_metrics(full, subset, 4);
        CHECK(got.kendall_tau == doctest::Approx(want_tau).epsilon(1e-12));
        CHECK(got.jaccard == doctest::Approx(1.0));
    } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("subset overlap matrix") {
    const auto m1 = subset_overlap({with_order({1, 2, 3}), with_order({3, 2, 1})});
    CHECK(m1.at(0, 1) == doctest::Approx(1.0));
    CHECK(m1.at(0, 0) == doctest::Approx(1.0));

    const auto m0 = subset_overlap({with_order({0, 1}), with_order({2, 3})});
    CHECK(m0.at(0, 1) == doctest::Approx(0.0));
    CHECK(m0.at(1, 0) == doctest::Approx(0.0));

    // |S|=4 with 2 shared elements: 2 / (4+4-2) = 1/3.
    const auto m = subset_overlap({with_order({0, 1, 2, 3}), with_order({2, 3, 4, 5})});
    REQUIRE(m.rows() == 2);
    CHECK(m.at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(m.at(1, 0) == m.at(0, 1));

    CHECK(jaccard_overlap({5, 5, 6}, {6, 5}) == doctest::Approx(1.0));  // dedup first

    CHECK_THROWS_AS(subset_overlap({}), std::invalid_argument);
    CHECK_THROWS_AS(subset_overlap({with_order({1}), with_order({1, 2})}),
                    std::invalid_argument);
}
