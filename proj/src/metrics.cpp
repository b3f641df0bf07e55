#include "subsel/metrics.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace subsel {

double rar(const std::map<std::string, double>& acc_subset,
           const std::map<std::string, double>& acc_full) {
    if (acc_subset.size() != acc_full.size())
        throw std::invalid_argument("rar: architecture sets differ");
    if (acc_full.empty()) throw std::invalid_argument("rar: empty architecture set");
    double total = 0.0;
    for (const auto& [arch, full] : acc_full) {
        const auto it = acc_subset.find(arch);
        if (it == acc_subset.end())
            throw std::invalid_argument("rar: missing subset accuracy for arch " + arch);
        if (!(full > 0.0))
            throw std::invalid_argument("rar: non-positive full accuracy for arch " + arch);
        total += 1.0 - it->second / full;
    }
    return total / static_cast<double>(acc_full.size());
}

double speedup(double t_full, double t_select, double t_train_subset) {
    if (!(t_full > 0.0)) throw std::invalid_argument("speedup: t_full must be positive");
    if (t_select < 0.0 || t_train_subset < 0.0)
        throw std::invalid_argument("speedup: negative time");
    const double denom = t_select + t_train_subset;
    if (denom == 0.0) throw std::invalid_argument("speedup: zero denominator");
    return t_full / denom;
}

namespace {

// Ids sorted by accuracy descending, id ascending on ties.
std::vector<std::string> ranked_ids(const std::map<std::string, double>& acc) {
    std::vector<std::pair<double, std::string>> keyed;
    keyed.reserve(acc.size());
    for (const auto& [id, a] : acc) keyed.push_back({a, id});
    std::sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    std::vector<std::string> ids;
    ids.reserve(keyed.size());
    for (const auto& [a, id] : keyed) ids.push_back(id);
    return ids;
}

}  // namespace

RankingMetrics ranking_metrics(const std::map<std::string, double>& full_acc,
                               const std::map<std::string, double>& subset_acc,
                               std::size_t k) {
    if (full_acc.size() != subset_acc.size())
        throw std::invalid_argument("ranking_metrics: architecture sets differ");
    for (const auto& [id, a] : full_acc) {
        (void)a;
        if (subset_acc.find(id) == subset_acc.end())
            throw std::invalid_argument("ranking_metrics: missing subset accuracy for " + id);
    }
    if (k == 0 || k > full_acc.size())
        throw std::invalid_argument("ranking_metrics: k out of range");

    const std::vector<std::string> full_rank = ranked_ids(full_acc);
    const std::vector<std::string> subset_rank = ranked_ids(subset_acc);
    const std::set<std::string> top_full(full_rank.begin(),
                                         full_rank.begin() + static_cast<std::ptrdiff_t>(k));
    const std::set<std::string> top_subset(subset_rank.begin(),
                                           subset_rank.begin() + static_cast<std::ptrdiff_t>(k));

    std::set<std::string> unite = top_full;
    unite.insert(top_subset.begin(), top_subset.end());
    std::size_t common = 0;
    for (const std::string& id : top_full) common += top_subset.count(id);

    RankingMetrics out;
    out.jaccard = static_cast<double>(common) / static_cast<double>(unite.size());

    // Induced rankings: the union members in the order each full ranking
    // lists them. Positions are unique, so no tie handling is needed.
    std::map<std::string, std::size_t> pos_full;
    std::map<std::string, std::size_t> pos_subset;
    for (std::size_t i = 0; i < full_rank.size(); ++i) pos_full[full_rank[i]] = i;
    for (std::size_t i = 0; i < subset_rank.size(); ++i) pos_subset[subset_rank[i]] = i;

    const std::vector<std::string> members(unite.begin(), unite.end());
    std::size_t concordant = 0;
    std::size_t discordant = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
            const bool f = pos_full[members[i]] < pos_full[members[j]];
            const bool s = pos_subset[members[i]] < pos_subset[members[j]];
            (f == s ? concordant : discordant) += 1;
        }
    }
    const std::size_t pairs = concordant + discordant;
    out.kendall_tau =
        pairs == 0 ? 1.0
                   : (static_cast<double>(concordant) - static_cast<double>(discordant)) /
                         static_cast<double>(pairs);
    return out;
}

double jaccard_overlap(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    const std::set<std::size_t> sa(a.begin(), a.end());
    const std::set<std::size_t> sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t common = 0;
    for (std::size_t v : sa) common += sb.count(v);
    const std::size_t unite = sa.size() + sb.size() - common;
    return static_cast<double>(common) / static_cast<double>(unite);
}

Tensor subset_overlap(const std::vector<SubsetSelection>& selections) {
    if (selections.empty()) throw std::invalid_argument("subset_overlap: no selections");
    std::vector<std::set<std::size_t>> sets;
    sets.reserve(selections.size());
    for (const SubsetSelection& s : selections)
        sets.emplace_back(s.order.begin(), s.order.end());
    for (const auto& s : sets)
        if (s.size() != sets.front().size())
            throw std::invalid_argument("subset_overlap: mismatched subset sizes");

    const std::size_t m = sets.size();
    Tensor out = Tensor::zeros({m, m});
    for (std::size_t i = 0; i < m; ++i) {
        out.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < m; ++j) {
            std::size_t common = 0;
            for (std::size_t v : sets[i]) common += sets[j].count(v);
            const std::size_t unite = sets[i].size() + sets[j].size() - common;
            const double jac = static_cast<double>(common) / static_cast<double>(unite);
            out.at(i, j) = jac;
            out.at(j, i) = jac;
        }
    }
    return out;
}

}  // namespace subsel
