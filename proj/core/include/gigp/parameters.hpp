#pragma once

#include "gigp/tensor.hpp"

#include <string>
#include <vector>

namespace gigp {

struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

// Insertion-ordered, uniquely named parameters. Teacher/student pairing and
// checkpoints address parameters by name.
class ParameterSet {
public:
    Tensor& add(std::string name, Tensor tensor);
    bool contains(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    // Frozen parameters keep their values and never require grad.
    void set_trainable(const std::string& name, bool trainable);

    std::vector<Parameter>& entries() { return entries_; }
    const std::vector<Parameter>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t total_values() const;

    // Deep copy of values. Trainable copies require grad iff `requires_grad`.
    ParameterSet clone(bool requires_grad) const;
    void zero_grad();

private:
    std::size_t index_of(const std::string& name) const;
    std::vector<Parameter> entries_;
};

}  // namespace gigp
