// Turns group scores into a pruning plan for a global removal ratio over the
// prunable parameters, materializes the binary mask, and physically shrinks
// the model.
#pragma once

#include <set>
#include <vector>

#include "hywia/graph.hpp"
#include "hywia/mask.hpp"
#include "hywia/model.hpp"

namespace hywia {

struct PlanEntry {
    int group_id;
    double score;
};

struct PruningPlan {
    std::vector<PlanEntry> removals;  // ascending score, deterministic ties
    double target_ratio = 0.0;
    double achieved_ratio = 0.0;  // removed / prunable
    std::set<std::size_t> protected_layers;
    std::size_t prunable_params = 0;
    std::size_t removed_params = 0;
};

// First and last decoder blocks are never pruned by default.
std::set<std::size_t> default_protected_layers(std::size_t n_layers);

// Ranks unprotected groups globally by score (ascending; ties broken by
// layer, kind, index) and removes the lowest until the removed fraction of
// prunable parameters first reaches target_ratio.
PruningPlan make_plan(const std::vector<double>& group_scores,
                      const std::vector<DependencyGroup>& groups,
                      double target_ratio,
                      const std::set<std::size_t>& protected_layers);

// Physically deletes the plan's member slices. The returned mask records the
// decision against the pre-prune shapes.
Mask apply_plan(DecoderModel& model, const PruningPlan& plan,
                const std::vector<DependencyGroup>& groups);

// Zeroes masked entries in place (dense shapes). Used to check mask/shrink
// equivalence.
void apply_mask_weights(DecoderModel& model, const Mask& mask);

struct LayerAllocation {
    std::size_t layer = 0;
    std::size_t dense_params = 0;
    std::size_t retained_params = 0;
};

// Retained parameters per decoder block under the mask (block-owned tensors:
// norms and projection matrices).
std::vector<LayerAllocation> allocation_report(const Mask& mask,
                                               const DecoderModel& dense_model);

}  // namespace hywia
