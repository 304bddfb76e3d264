#pragma once

// Property suite: invariants, oracles and gradient checks of every module.
// Each property reports once with its witnessing values.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace gigp::selfcheck {

enum class Group { invariants, gradients };

struct PropertyResult {
    std::string name;
    Group group = Group::invariants;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct Options {
    bool invariants = true;
    bool gradients = true;
    std::uint64_t seed = 20240917;
    // Called after each property completes.
    std::function<void(const PropertyResult&)> on_result;
};

std::vector<std::string> property_names(Group group);
std::vector<PropertyResult> run(const Options& options = {});
bool all_passed(const std::vector<PropertyResult>& results);
std::string format_result(const PropertyResult& result);

// Largest per-component gap between the normalized moments of a smooth
// phantom field on `grid`^3 and of its 2x trilinear downsampling, over
// `count` fields.
double scale_invariance_gap(int count, int grid, std::uint64_t seed);

}  // namespace gigp::selfcheck
