#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "subsel/archspace.hpp"
#include "subsel/dataset.hpp"
#include "subsel/sampler.hpp"
#include "subsel/tensor.hpp"
#include "subsel/zoo.hpp"

namespace subsel {

// Pairwise similarity used by facility location. Dot product is the primary
// contract; negated Euclidean distance is available but not relied on.
enum class FlSimilarity { Dot, NegEuclidean };

struct BaselineConfig {
    std::string method;  // random | facility_location | bottom_b_loss | el2n | grand
    std::size_t b = 0;
    std::uint64_t seed = 0;
    std::size_t warmup_epochs = 5;                // el2n / grand
    std::optional<double> gumbel_scale;           // bottom_b_loss noise, e.g. 0.025
    FlSimilarity fl_similarity = FlSimilarity::Dot;
};

// Throws std::invalid_argument when a knob is out of range for the method.
void validate_baseline_config(const BaselineConfig& config);

// Uniform draw of b training-row indices without replacement. `n` is the
// population size (typically |D_tr|). Throws when b > n.
SubsetSelection select_random(std::size_t n, std::size_t b, std::uint64_t seed);

// Greedy maximization of FL(S) = sum_j max_{i in S} sim(x_i, x_j) over the
// given feature rows; ties broken by lowest index. Requires b >= 1.
SubsetSelection select_facility_location(const Tensor& features, std::size_t b,
                                         FlSimilarity similarity = FlSimilarity::Dot);

// FL objective of an arbitrary subset; empty subsets score 0. Test oracle and
// greedy bookkeeping share this definition.
double facility_location_value(const Tensor& features, const std::vector<std::size_t>& subset,
                               FlSimilarity similarity = FlSimilarity::Dot);

// Ascending sort of losses (plus Gumbel(0, scale) noise when set), first b.
// Deterministic when no scale is given; scale 0 matches the noiseless order.
SubsetSelection select_bottom_b_loss(const std::vector<double>& losses, std::size_t b,
                                     std::optional<double> gumbel_scale = std::nullopt,
                                     std::uint64_t seed = 0);

// Per-instance difficulty scores over the training split of `data`.
// el2n: ||softmax(logits) - onehot(y)||_2.
// grand: last-layer weight-gradient norm of the cross entropy, which for a
// dense head factors as ||p - onehot(y)||_2 * ||penultimate||_2.
std::vector<double> el2n_scores(MaterializedNet& net, const DatasetBundle& data);
std::vector<double> grand_scores(MaterializedNet& net, const DatasetBundle& data);

// Warm up the materialized architecture for `warmup_epochs` on the full
// training split, then keep the top-b hardest instances by score. Propagates
// divergence errors from the warmup.
SubsetSelection select_el2n(const Architecture& arch, const Dims& dims, const DatasetBundle& data,
                            std::size_t b, std::size_t warmup_epochs, std::uint64_t seed);
SubsetSelection select_grand(const Architecture& arch, const Dims& dims, const DatasetBundle& data,
                             std::size_t b, std::size_t warmup_epochs, std::uint64_t seed);

}  // namespace subsel
