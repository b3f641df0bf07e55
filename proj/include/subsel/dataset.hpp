#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "subsel/tensor.hpp"

namespace subsel {

// Features plus class labels with a fixed 70/10/20 split. Index lists
// partition [0, n) and stay sorted ascending.
struct DatasetBundle {
    Tensor features;  // n x d_x
    std::vector<std::size_t> labels;
    std::size_t classes = 0;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::vector<std::size_t> test_idx;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
};

// Balanced Gaussian clusters, unit covariance, centers on a scaled basis
// simplex with pairwise distance >= separation. Splits are stratified per
// class so every class lands in every fold. Deterministic in seed.
DatasetBundle make_blobs(std::size_t n, std::size_t d_x, std::size_t classes, double separation,
                         std::uint64_t seed);

// Rectangular numeric CSV with a header row. Features are standardized per
// column using train-split statistics (variance floor 1e-12); labels come
// from the named column, remapped to dense ids by sorted value. Splits are a
// seeded 70/10/20 shuffle.
DatasetBundle ingest_csv(const std::filesystem::path& path, const std::string& label_column,
                         std::uint64_t seed = 0);

// Writes features + label column; ingest_csv on the result (same seed)
// reproduces the bundle within float round-off.
void export_csv(const DatasetBundle& data, const std::filesystem::path& path);

// Gathers the feature rows / labels at idx.
Tensor rows_at(const Tensor& features, const std::vector<std::size_t>& idx);
std::vector<std::size_t> labels_at(const std::vector<std::size_t>& labels,
                                   const std::vector<std::size_t>& idx);

}  // namespace subsel
