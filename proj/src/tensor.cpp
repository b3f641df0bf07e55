#include "subsel/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace subsel {

namespace {
std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
        if (e == 0) throw NumericError("tensor: zero extent in shape");
        n *= e;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        throw NumericError("tensor: data length does not match shape " + shape_str());
}

Tensor Tensor::zeros(const std::vector<std::size_t>& s) {
    Tensor t;
    t.shape = s;
    t.data.assign(shape_numel(s), 0.0);
    return t;
}

Tensor Tensor::full(const std::vector<std::size_t>& s, double v) {
    Tensor t = zeros(s);
    for (double& x : t.data) x = v;
    return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
}

std::size_t Tensor::rows() const {
    if (shape.size() <= 1) return 1;
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (shape.empty()) return 1;
    return shape.back();
}

double Tensor::value() const {
    if (!is_scalar()) throw NumericError("tensor: value() on non-scalar " + shape_str());
    return data[0];
}

bool Tensor::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

void require_finite(const Tensor& t, const char* where) {
    if (!t.all_finite())
        throw NumericError(std::string("non-finite value produced by op '") + where + "'");
}

}  // namespace subsel
