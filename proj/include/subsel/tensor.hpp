#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace subsel {

// Error raised whenever a numeric invariant breaks (non-finite value, shape
// mismatch, bad label index). `where` names the op that produced it.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major tensor of doubles. Rank 1 and 2 cover everything at this
// scale; a scalar is shape {1}. A rank-1 tensor behaves as a single row.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor zeros(const std::vector<std::size_t>& s);
    static Tensor full(const std::vector<std::size_t>& s, double v);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> v);  // shape {1, n}
    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v);

    std::size_t numel() const { return data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool is_scalar() const { return numel() == 1; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    double value() const;  // scalar extraction

    bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }
    bool all_finite() const;
    std::string shape_str() const;
};

// Throws NumericError naming `where` if any entry of `t` is NaN/Inf.
void require_finite(const Tensor& t, const char* where);

}  // namespace subsel
