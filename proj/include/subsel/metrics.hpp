#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "subsel/sampler.hpp"
#include "subsel/tensor.hpp"

namespace subsel {

// Relative accuracy reduction: mean over architectures of
// 1 - acc_subset/acc_full. Both maps must cover the same architecture ids and
// every full accuracy must be positive.
double rar(const std::map<std::string, double>& acc_subset,
           const std::map<std::string, double>& acc_full);

// t_full / (t_select + t_train_subset); inputs are the already-averaged
// times. t_full must be positive and the denominator nonzero.
double speedup(double t_full, double t_select, double t_train_subset);

struct RankingMetrics {
    double kendall_tau = 0.0;
    double jaccard = 0.0;
};

// Top-k agreement between the accuracy ranking under full training and under
// subset training. Ties broken by architecture id before the top-k cut;
// Kendall's tau is computed over the union of the two top-k sets using the
// rankings it induces.
RankingMetrics ranking_metrics(const std::map<std::string, double>& full_acc,
                               const std::map<std::string, double>& subset_acc,
                               std::size_t k = 15);

// Jaccard coefficient between two index sets (inputs deduplicated).
double jaccard_overlap(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

// Pairwise Jaccard matrix over the selections' index sets; symmetric with a
// unit diagonal. All selections must share the same subset size.
Tensor subset_overlap(const std::vector<SubsetSelection>& selections);

}  // namespace subsel
