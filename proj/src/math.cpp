#include "subsel/math.hpp"

#include <algorithm>
#include <cmath>

#include "subsel/kernels.hpp"

namespace subsel {

namespace {
constexpr double kLogFloor = 1e-12;

void check_distribution(const Tensor& t, const char* who) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < t.cols(); ++j) {
            const double x = t.at(i, j);
            if (x < 0.0) throw NumericError(std::string(who) + ": negative probability");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw NumericError(std::string(who) + ": row does not sum to 1");
    }
}
}  // namespace

Tensor softmax(const Tensor& logits, int axis) {
    if (axis != -1 && axis != 1)
        throw NumericError("softmax: only the last axis is supported");
    Tensor out = Tensor::zeros({logits.rows(), logits.cols()});
    kern::rows_softmax(logits.data.data(), out.data.data(), logits.rows(), logits.cols());
    out.shape = logits.shape;
    return out;
}

double cross_entropy(const Tensor& probs, std::size_t label) {
    check_distribution(probs, "cross_entropy");
    if (probs.rows() != 1) throw NumericError("cross_entropy: expected one distribution row");
    if (label >= probs.cols()) throw NumericError("cross_entropy: label index out of range");
    return -std::log(std::max(probs.data[label], kLogFloor));
}

double kl_div(const Tensor& p, const Tensor& q) {
    if (!p.same_shape(q))
        throw NumericError("kl_div: shape mismatch " + p.shape_str() + " vs " + q.shape_str());
    check_distribution(p, "kl_div");
    check_distribution(q, "kl_div");
    double total = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t j = 0; j < p.cols(); ++j) {
            const double pv = p.at(i, j);
            if (pv <= 0.0) continue;
            total += pv * (std::log(pv) - std::log(std::max(q.at(i, j), kLogFloor)));
        }
    return total / static_cast<double>(p.rows());
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.cols() != n || bias.cols() != n)
        throw NumericError("layer_norm: gain/bias width mismatch");
    Tensor out = Tensor::zeros({m, n});
    kern::rows_standardize(x.data.data(), out.data.data(), m, n, eps);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.at(i, j) = out.at(i, j) * gain.data[j] + bias.data[j];
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor out = x;
    for (double& v : out.data) v = v > 0.0 ? v : slope * v;
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    return out;
}

double entropy(const Tensor& p) {
    check_distribution(p, "entropy");
    double h = 0.0;
    for (double v : p.data)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

double logsumexp(const std::vector<double>& xs) {
    double mx = xs[0];
    for (double x : xs) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}

std::size_t argmax_row(const Tensor& t, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < t.cols(); ++j)
        if (t.at(row, j) > t.at(row, best)) best = j;
    return best;
}

}  // namespace subsel
