#include "subsel/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "subsel/math.hpp"
#include "subsel/rng.hpp"
#include "subsel/tape.hpp"

namespace subsel {

namespace {

// Uniform packaging: order in method-native pick order, argtop as the
// deterministic top-b of pi (or a copy of order when no score vector exists).
SubsetSelection pack_scored(const std::vector<double>& pi, std::vector<std::size_t> order,
                            std::size_t b, const std::string& method, std::uint64_t seed) {
    SubsetSelection sel;
    sel.method = method;
    sel.seed = seed;
    sel.pi = pi;
    sel.order = std::move(order);
    if (pi.empty()) {
        sel.argtop = sel.order;
        return sel;
    }
    std::vector<std::pair<double, std::size_t>> keys(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) keys[i] = {pi[i], i};
    std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& c) {
        return a.first != c.first ? a.first > c.first : a.second < c.second;
    });
    for (std::size_t t = 0; t < b; ++t) sel.argtop.push_back(keys[t].second);
    return sel;
}

double pair_similarity(const Tensor& features, std::size_t i, std::size_t j,
                       FlSimilarity similarity) {
    const std::size_t d = features.cols();
    double acc = 0.0;
    if (similarity == FlSimilarity::Dot) {
        for (std::size_t c = 0; c < d; ++c) acc += features.at(i, c) * features.at(j, c);
        return acc;
    }
    for (std::size_t c = 0; c < d; ++c) {
        const double diff = features.at(i, c) - features.at(j, c);
        acc += diff * diff;
    }
    return -std::sqrt(acc);
}

std::vector<std::size_t> top_b_by_score(const std::vector<double>& scores, std::size_t b) {
    std::vector<std::pair<double, std::size_t>> keys(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) keys[i] = {scores[i], i};
    std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& c) {
        return a.first != c.first ? a.first > c.first : a.second < c.second;
    });
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < b; ++t) out.push_back(keys[t].second);
    return out;
}

}  // namespace

void validate_baseline_config(const BaselineConfig& config) {
    const std::string& m = config.method;
    if (m != "random" && m != "facility_location" && m != "bottom_b_loss" && m != "el2n" &&
        m != "grand")
        throw std::invalid_argument("baseline config: unknown method '" + m + "'");
    if (config.b == 0) throw std::invalid_argument("baseline config: b must be positive");
    if ((m == "el2n" || m == "grand") && config.warmup_epochs == 0)
        throw std::invalid_argument("baseline config: " + m + " needs warmup_epochs >= 1");
    if (config.gumbel_scale) {
        if (m != "bottom_b_loss")
            throw std::invalid_argument("baseline config: gumbel_scale only applies to "
                                        "bottom_b_loss");
        if (!(*config.gumbel_scale >= 0.0) || !std::isfinite(*config.gumbel_scale))
            throw std::invalid_argument("baseline config: gumbel_scale must be finite and >= 0");
    }
}

SubsetSelection select_random(std::size_t n, std::size_t b, std::uint64_t seed) {
    if (b > n) throw std::invalid_argument("select_random: b exceeds population size");
    Rng rng(seed);
    return pack_scored({}, rng.sample_indices(n, b), b, "random", seed);
}

double facility_location_value(const Tensor& features, const std::vector<std::size_t>& subset,
                               FlSimilarity similarity) {
    if (subset.empty()) return 0.0;
    const std::size_t n = features.rows();
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i : subset) {
            if (i >= n) throw std::invalid_argument("facility_location_value: index out of range");
            best = std::max(best, pair_similarity(features, i, j, similarity));
        }
        total += best;
    }
    return total;
}

SubsetSelection select_facility_location(const Tensor& features, std::size_t b,
                                         FlSimilarity similarity) {
    const std::size_t n = features.rows();
    if (b < 1) throw std::invalid_argument("select_facility_location: b must be >= 1");
    if (b > n) throw std::invalid_argument("select_facility_location: b exceeds population size");

    // Desk-scale population: materializing the similarity matrix keeps the
    // greedy loop O(b*n^2) instead of O(b*n^2*d).
    std::vector<double> sim(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) sim[i * n + j] = pair_similarity(features, i, j, similarity);

    std::vector<double> cover(n, 0.0);  // max similarity into the current set
    std::vector<bool> chosen(n, false);
    std::vector<std::size_t> order;
    for (std::size_t step = 0; step < b; ++step) {
        double best_gain = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i]) continue;
            double gain = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double s = sim[i * n + j];
                gain += step == 0 ? s : std::max(0.0, s - cover[j]);
            }
            if (gain > best_gain) {  // strict: ties keep the lowest index
                best_gain = gain;
                best_i = i;
            }
        }
        chosen[best_i] = true;
        order.push_back(best_i);
        for (std::size_t j = 0; j < n; ++j) {
            const double s = sim[best_i * n + j];
            cover[j] = step == 0 ? s : std::max(cover[j], s);
        }
    }
    return pack_scored({}, std::move(order), b, "facility_location", 0);
}

SubsetSelection select_bottom_b_loss(const std::vector<double>& losses, std::size_t b,
                                     std::optional<double> gumbel_scale, std::uint64_t seed) {
    const std::size_t n = losses.size();
    if (b > n) throw std::invalid_argument("select_bottom_b_loss: b exceeds population size");

    std::vector<double> keys = losses;
    if (gumbel_scale) {
        Rng rng(seed);
        for (double& k : keys) k += *gumbel_scale * rng.gumbel();
    }
    std::vector<std::pair<double, std::size_t>> ranked(n);
    for (std::size_t i = 0; i < n; ++i) ranked[i] = {keys[i], i};
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& c) {
        return a.first != c.first ? a.first < c.first : a.second < c.second;
    });
    std::vector<std::size_t> order;
    for (std::size_t t = 0; t < b; ++t) order.push_back(ranked[t].second);

    // Snapshot preference logits so argtop keeps its top-of-pi meaning: low
    // loss = preferred, and the snapshot stays noiseless like the sampler's.
    std::vector<double> pi(n);
    for (std::size_t i = 0; i < n; ++i) pi[i] = -losses[i];
    const std::string method = gumbel_scale ? "bottom_b_loss_gumbel" : "bottom_b_loss";
    return pack_scored(pi, std::move(order), b, method, seed);
}

std::vector<double> el2n_scores(MaterializedNet& net, const DatasetBundle& data) {
    const Tensor x = rows_at(data.features, data.train_idx);
    const std::vector<std::size_t> y = labels_at(data.labels, data.train_idx);
    const Tensor p = net_predict(net, x);
    std::vector<double> scores(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double diff = p.at(i, c) - (c == y[i] ? 1.0 : 0.0);
            acc += diff * diff;
        }
        scores[i] = std::sqrt(acc);
    }
    return scores;
}

std::vector<double> grand_scores(MaterializedNet& net, const DatasetBundle& data) {
    const Tensor x = rows_at(data.features, data.train_idx);
    const std::vector<std::size_t> y = labels_at(data.labels, data.train_idx);

    Tape tape;
    const Val pen = net_penultimate(tape, net, tape.constant(x, "grand input"));
    const Val logits = net_head(tape, net, pen);
    const Tensor p = softmax(tape.value(logits));
    const Tensor& a = tape.value(pen);

    // d(ce)/d(head weights) for row i is outer(a_i, p_i - onehot(y_i)), whose
    // Frobenius norm factors into the two Euclidean norms.
    std::vector<double> scores(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double resid = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double diff = p.at(i, c) - (c == y[i] ? 1.0 : 0.0);
            resid += diff * diff;
        }
        double act = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) act += a.at(i, c) * a.at(i, c);
        scores[i] = std::sqrt(resid) * std::sqrt(act);
    }
    return scores;
}

namespace {

SubsetSelection select_by_warm_scores(const Architecture& arch, const Dims& dims,
                                      const DatasetBundle& data, std::size_t b,
                                      std::size_t warmup_epochs, std::uint64_t seed,
                                      const std::string& method) {
    if (b > data.train_idx.size())
        throw std::invalid_argument("select_" + method + ": b exceeds population size");
    MaterializedNet net = materialize(arch, dims, seed);
    PretrainConfig warm;
    warm.epochs = warmup_epochs;
    warm.seed = seed;
    pretrain(net, data, warm);
    const std::vector<double> scores =
        method == "el2n" ? el2n_scores(net, data) : grand_scores(net, data);
    return pack_scored(scores, top_b_by_score(scores, b), b, method, seed);
}

}  // namespace

SubsetSelection select_el2n(const Architecture& arch, const Dims& dims, const DatasetBundle& data,
                            std::size_t b, std::size_t warmup_epochs, std::uint64_t seed) {
    return select_by_warm_scores(arch, dims, data, b, warmup_epochs, seed, "el2n");
}

SubsetSelection select_grand(const Architecture& arch, const Dims& dims, const DatasetBundle& data,
                             std::size_t b, std::size_t warmup_epochs, std::uint64_t seed) {
    return select_by_warm_scores(arch, dims, data, b, warmup_epochs, seed, "grand");
}

}  // namespace subsel
