#include "gigp/parameters.hpp"

#include <stdexcept>

namespace gigp {

std::size_t ParameterSet::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return i;
    }
    return entries_.size();
}

Tensor& ParameterSet::add(std::string name, Tensor tensor) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    if (!tensor.is_leaf()) throw std::invalid_argument("parameter '" + name + "' must be a leaf tensor");
    entries_.push_back({std::move(name), std::move(tensor), true});
    return entries_.back().tensor;
}

bool ParameterSet::contains(const std::string& name) const { return index_of(name) < entries_.size(); }

const Tensor& ParameterSet::get(const std::string& name) const {
    const std::size_t i = index_of(name);
    if (i == entries_.size()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[i].tensor;
}

Tensor& ParameterSet::get(const std::string& name) {
    const std::size_t i = index_of(name);
    if (i == entries_.size()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[i].tensor;
}

void ParameterSet::set_trainable(const std::string& name, bool trainable) {
    const std::size_t i = index_of(name);
    if (i == entries_.size()) throw std::out_of_range("unknown parameter '" + name + "'");
    entries_[i].trainable = trainable;
    entries_[i].tensor.set_requires_grad(trainable);
}

std::size_t ParameterSet::total_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

ParameterSet ParameterSet::clone(bool requires_grad) const {
    ParameterSet out;
    for (const auto& e : entries_) {
        Tensor t = e.tensor.detach();
        t.set_requires_grad(requires_grad && e.trainable);
        out.entries_.push_back({e.name, std::move(t), e.trainable});
    }
    return out;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

}  // namespace gigp
