// Binary keep/prune indicator over the model parameters, aligned with
// named_parameters() order. 1 = keep, 0 = prune; whole coupled groups only.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hywia/graph.hpp"
#include "hywia/model.hpp"

namespace hywia {

struct Mask {
    std::vector<std::string> names;
    std::vector<Shape> shapes;
    std::vector<std::vector<std::uint8_t>> keep;

    // pruning metadata
    std::vector<DependencyGroup> pruned_groups;
    double target_ratio = 0.0;
    double achieved_ratio = 0.0;   // over prunable parameters
    double whole_model_ratio = 0.0;
    std::size_t prunable_params = 0;
    std::size_t removed_params = 0;

    static Mask ones_like(const DecoderModel& model);

    std::size_t index_of(const std::string& name) const;  // throws InputError
    void zero_slice(const SliceRef& slice);
    std::size_t pruned_count() const;
    std::size_t total_count() const;
};

}  // namespace hywia
