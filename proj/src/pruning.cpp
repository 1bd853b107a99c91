#include "hywia/pruning.hpp"

#include <algorithm>
#include <map>

#include "hywia/errors.hpp"
#include "hywia/importance.hpp"

namespace hywia {

std::set<std::size_t> default_protected_layers(std::size_t n_layers) {
    std::set<std::size_t> p;
    if (n_layers > 0) {
        p.insert(0);
        p.insert(n_layers - 1);
    }
    return p;
}

PruningPlan make_plan(const std::vector<double>& group_scores,
                      const std::vector<DependencyGroup>& groups,
                      double target_ratio,
                      const std::set<std::size_t>& protected_layers) {
    if (target_ratio < 0.0 || target_ratio >= 1.0)
        throw InputError("make_plan: target_ratio must be in [0, 1), got " +
                         std::to_string(target_ratio));
    if (group_scores.size() != groups.size())
        throw InputError("make_plan: " + std::to_string(group_scores.size()) +
                         " scores for " + std::to_string(groups.size()) +
                         " groups");
    PruningPlan plan;
    plan.target_ratio = target_ratio;
    plan.protected_layers = protected_layers;

    std::vector<const DependencyGroup*> pool;
    for (const DependencyGroup& g : groups) {
        if (protected_layers.count(g.layer)) continue;
        pool.push_back(&g);
        plan.prunable_params += g.param_count;
    }
    if (pool.empty() && target_ratio > 0.0)
        throw InfeasibleError(
            "make_plan: target ratio " + std::to_string(target_ratio) +
            " requires pruning but every layer is protected");
    if (plan.prunable_params == 0 || target_ratio == 0.0) {
        plan.achieved_ratio = 0.0;
        return plan;
    }

    std::sort(pool.begin(), pool.end(),
              [&](const DependencyGroup* a, const DependencyGroup* b) {
                  const double sa = group_scores[a->id], sb = group_scores[b->id];
                  if (sa != sb) return sa < sb;
                  if (a->layer != b->layer) return a->layer < b->layer;
                  if (a->kind != b->kind)
                      return static_cast<int>(a->kind) < static_cast<int>(b->kind);
                  return a->index < b->index;
              });

    const double target_params =
        target_ratio * static_cast<double>(plan.prunable_params);
    for (const DependencyGroup* g : pool) {
        if (static_cast<double>(plan.removed_params) >= target_params) break;
        plan.removals.push_back(PlanEntry{g->id, group_scores[g->id]});
        plan.removed_params += g->param_count;
    }
    plan.achieved_ratio = static_cast<double>(plan.removed_params) /
                          static_cast<double>(plan.prunable_params);
    return plan;
}

Mask apply_plan(DecoderModel& model, const PruningPlan& plan,
                const std::vector<DependencyGroup>& groups) {
    // A stale plan (built against other shapes) must not touch the model.
    for (const PlanEntry& e : plan.removals) {
        if (e.group_id < 0 || static_cast<std::size_t>(e.group_id) >= groups.size())
            throw StructuralError("apply_plan: group id " +
                                  std::to_string(e.group_id) + " out of range");
        const DependencyGroup& g = groups[static_cast<std::size_t>(e.group_id)];
        for (const SliceRef& s : g.members) {
            const Tensor w = model.param(s.matrix);
            const std::size_t extent = s.axis == 1 ? w.cols() : w.rows();
            if (s.end > extent)
                throw StructuralError("apply_plan: stale plan, slice [" +
                                      std::to_string(s.begin) + ", " +
                                      std::to_string(s.end) + ") of " +
                                      s.matrix + " exceeds " +
                                      shape_str(w.shape()));
        }
    }

    Mask mask = Mask::ones_like(model);
    mask.target_ratio = plan.target_ratio;
    mask.achieved_ratio = plan.achieved_ratio;
    mask.prunable_params = plan.prunable_params;
    mask.removed_params = plan.removed_params;

    const std::size_t before = model.parameter_count();
    std::map<std::size_t, std::vector<std::size_t>> heads_by_layer;
    std::map<std::size_t, std::vector<std::size_t>> chans_by_layer;
    for (const PlanEntry& e : plan.removals) {
        const DependencyGroup& g = groups[static_cast<std::size_t>(e.group_id)];
        for (const SliceRef& s : g.members) mask.zero_slice(s);
        mask.pruned_groups.push_back(g);
        if (g.kind == GroupKind::AttentionHead)
            heads_by_layer[g.layer].push_back(g.index);
        else
            chans_by_layer[g.layer].push_back(g.index);
    }
    mask.whole_model_ratio =
        static_cast<double>(plan.removed_params) / static_cast<double>(before);

    for (auto& [layer, heads] : heads_by_layer) {
        std::sort(heads.begin(), heads.end());
        model.drop_heads(layer, heads);
    }
    for (auto& [layer, chans] : chans_by_layer) {
        std::sort(chans.begin(), chans.end());
        model.drop_mlp_channels(layer, chans);
    }

    const std::size_t after = model.parameter_count();
    if (before - after != plan.removed_params)
        throw StructuralError("apply_plan: removed " +
                              std::to_string(before - after) +
                              " parameters but the plan accounts for " +
                              std::to_string(plan.removed_params));
    return mask;
}

void apply_mask_weights(DecoderModel& model, const Mask& mask) {
    for (const NamedParam& p : model.named_parameters()) {
        const std::size_t i = mask.index_of(p.name);
        if (mask.shapes[i] != p.tensor.shape())
            throw StructuralError("apply_mask_weights: mask for '" + p.name +
                                  "' has shape " + shape_str(mask.shapes[i]) +
                                  ", model has " + shape_str(p.tensor.shape()));
        Tensor w = p.tensor;
        for (std::size_t k = 0; k < w.numel(); ++k)
            if (mask.keep[i][k] == 0) w.data()[k] = 0.0;
    }
}

std::vector<LayerAllocation> allocation_report(const Mask& mask,
                                               const DecoderModel& dense_model) {
    static const char* kLayerRoles[] = {"attn_norm", "wq", "wk", "wv", "wo",
                                        "mlp_norm",  "wgate", "wup", "wdown"};
    std::vector<LayerAllocation> out;
    for (std::size_t l = 0; l < dense_model.n_layers(); ++l) {
        LayerAllocation a;
        a.layer = l;
        for (const char* role : kLayerRoles) {
            const std::string name = layer_param_name(l, role);
            const std::size_t i = mask.index_of(name);
            a.dense_params += mask.keep[i].size();
            for (std::uint8_t v : mask.keep[i]) a.retained_params += (v != 0);
        }
        out.push_back(a);
    }
    return out;
}

}  // namespace hywia
