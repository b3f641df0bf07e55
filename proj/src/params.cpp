#include "subsel/params.hpp"

#include <stdexcept>

namespace subsel {

Parameter& ParamSet::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    return *params_.back();
}

Parameter& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
    return *params_[it->second];
}

const Parameter& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
    return *params_[it->second];
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

void ParamSet::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

}  // namespace subsel
