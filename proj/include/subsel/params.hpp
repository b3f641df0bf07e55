#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "subsel/tensor.hpp"

namespace subsel {

// Named trainable value. grad always mirrors value's shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Ordered collection of uniquely named parameters. References returned by
// add()/at() stay valid for the set's lifetime.
class ParamSet {
public:
    Parameter& add(const std::string& name, Tensor init);
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();

    // Incremented by forward_backward; lets optimizer_step reject stepping
    // before any backward pass has populated grads.
    std::uint64_t grad_passes = 0;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace subsel
