#include "subsel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "subsel/rng.hpp"

namespace subsel {

namespace {

// 70/10/20 by integer division: val gets n/10, train gets 7n/10, test the rest.
void split_sizes(std::size_t n, std::size_t& tr, std::size_t& va, std::size_t& te) {
    tr = 7 * n / 10;
    va = n / 10;
    te = n - tr - va;
}

}  // namespace

DatasetBundle make_blobs(std::size_t n, std::size_t d_x, std::size_t classes, double separation,
                         std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("make_blobs: need at least 2 classes");
    if (n < 10 * classes) throw std::invalid_argument("make_blobs: need n >= 10*classes");
    if (separation <= 0.0) throw std::invalid_argument("make_blobs: separation must be positive");
    if (classes > d_x)
        throw std::invalid_argument(
            "make_blobs: d_x too small to place " + std::to_string(classes) +
            " simplex centers at separation " + std::to_string(separation));

    // Centers s*e_c are pairwise s*sqrt(2) apart.
    const double s = separation / std::sqrt(2.0);

    Rng rng(seed);
    DatasetBundle out;
    out.classes = classes;
    out.features = Tensor::zeros({n, d_x});
    out.labels.resize(n);

    // Balanced counts; any remainder goes to the lowest class ids.
    std::vector<std::size_t> per_class(classes, n / classes);
    for (std::size_t c = 0; c < n % classes; ++c) per_class[c] += 1;

    std::size_t row = 0;
    std::vector<std::vector<std::size_t>> class_rows(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < per_class[c]; ++k, ++row) {
            out.labels[row] = c;
            class_rows[c].push_back(row);
            for (std::size_t j = 0; j < d_x; ++j)
                out.features.at(row, j) = (j == c ? s : 0.0) + rng.normal();
        }
    }

    // Stratified split keeps every class in every fold.
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<std::size_t> rows = class_rows[c];
        rng.shuffle(rows);
        std::size_t tr, va, te;
        split_sizes(rows.size(), tr, va, te);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (i < tr) out.train_idx.push_back(rows[i]);
            else if (i < tr + va) out.val_idx.push_back(rows[i]);
            else out.test_idx.push_back(rows[i]);
        }
    }
    std::sort(out.train_idx.begin(), out.train_idx.end());
    std::sort(out.val_idx.begin(), out.val_idx.end());
    std::sort(out.test_idx.begin(), out.test_idx.end());
    return out;
}

DatasetBundle ingest_csv(const std::filesystem::path& path, const std::string& label_column,
                         std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ingest_csv: cannot read " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("ingest_csv: empty file");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::size_t label_col = header.size();
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == label_column) label_col = j;
    if (label_col == header.size())
        throw std::runtime_error("ingest_csv: missing label column '" + label_column + "'");

    std::vector<std::vector<double>> rows;
    std::vector<double> raw_labels;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument("trailing junk");
                vals.push_back(v);
            } catch (const std::exception&) {
                throw std::runtime_error("ingest_csv: non-numeric cell at row " +
                                         std::to_string(lineno) + ", column " +
                                         std::to_string(col + 1) + " ('" + cell + "')");
            }
            ++col;
        }
        if (vals.size() != header.size())
            throw std::runtime_error("ingest_csv: row " + std::to_string(lineno) + " has " +
                                     std::to_string(vals.size()) + " cells, expected " +
                                     std::to_string(header.size()));
        raw_labels.push_back(vals[label_col]);
        vals.erase(vals.begin() + static_cast<std::ptrdiff_t>(label_col));
        rows.push_back(std::move(vals));
    }
    const std::size_t n = rows.size();
    if (n == 0) throw std::runtime_error("ingest_csv: no data rows");
    const std::size_t d = rows[0].size();

    DatasetBundle out;
    out.features = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out.features.at(i, j) = rows[i][j];

    // Dense class ids by sorted distinct label value.
    std::map<double, std::size_t> remap;
    for (double v : raw_labels) remap.emplace(v, 0);
    std::size_t next = 0;
    for (auto& [v, id] : remap) id = next++;
    out.classes = remap.size();
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.labels[i] = remap[raw_labels[i]];

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::size_t tr, va, te;
    split_sizes(n, tr, va, te);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < tr) out.train_idx.push_back(order[i]);
        else if (i < tr + va) out.val_idx.push_back(order[i]);
        else out.test_idx.push_back(order[i]);
    }
    std::sort(out.train_idx.begin(), out.train_idx.end());
    std::sort(out.val_idx.begin(), out.val_idx.end());
    std::sort(out.test_idx.begin(), out.test_idx.end());

    // Standardize on train-split statistics.
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i : out.train_idx) mean += out.features.at(i, j);
        mean /= static_cast<double>(out.train_idx.size());
        double var = 0.0;
        for (std::size_t i : out.train_idx) {
            const double dv = out.features.at(i, j) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(out.train_idx.size());
        const double inv = var < 1e-12 ? 0.0 : 1.0 / std::sqrt(var);
        for (std::size_t i = 0; i < n; ++i)
            out.features.at(i, j) = (out.features.at(i, j) - mean) * inv;
    }
    return out;
}

void export_csv(const DatasetBundle& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_csv: cannot write " + path.string());
    out.precision(17);
    for (std::size_t j = 0; j < data.dim(); ++j) out << "f" << j << ",";
    out << "label\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < data.dim(); ++j) out << data.features.at(i, j) << ",";
        out << data.labels[i] << "\n";
    }
}

Tensor rows_at(const Tensor& features, const std::vector<std::size_t>& idx) {
    Tensor out = Tensor::zeros({idx.size(), features.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < features.cols(); ++j)
            out.at(i, j) = features.at(idx[i], j);
    return out;
}

std::vector<std::size_t> labels_at(const std::vector<std::size_t>& labels,
                                   const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
}

}  // namespace subsel
