// Fine- and coarse-grained weight importance from accumulated mask-space
// gradients (dL/dm_w = dL/dw * w at the keep-all mask). Fine: per-weight
// empirical Fisher (mean over samples of the squared mask gradient) summed
// over the weights a channel's removal deletes. Coarse: one scalar per
// dependency group, the mean of the squared accumulated gradient over the
// group's pooled weights.
#pragma once

#include <vector>

#include "hywia/graph.hpp"
#include "hywia/mask.hpp"
#include "hywia/model.hpp"

namespace hywia {

struct GradAccumulator {
    std::vector<NamedParam> sum;     // running mask-gradient sums
    std::vector<NamedParam> sum_sq;  // running squared mask-gradient sums
    std::size_t sample_count = 0;

    const Tensor& sum_of(const std::string& name) const;
    const Tensor& sum_sq_of(const std::string& name) const;
};

// Forward+backward on next-token cross-entropy per sample; model weights are
// untouched. Samples must be nonempty and each at least 2 tokens long.
GradAccumulator accumulate(const DecoderModel& model,
                           const std::vector<std::vector<int>>& samples);

struct ChannelScore {
    Channel channel;
    double score;
};

// Per-channel fine scores, ordered by (layer, kind, channel index).
std::vector<ChannelScore> fine_importance(
    const GradAccumulator& acc, const std::vector<DependencyGroup>& groups,
    std::size_t head_dim);

// Per-group coarse scores, indexed by group id.
std::vector<double> coarse_importance(const GradAccumulator& acc,
                                      const std::vector<DependencyGroup>& groups);

// Alternative coarse granularity: one score per layer from the pooled
// gradients of all that layer's prunable slices. Analysis-only.
std::vector<std::pair<std::size_t, double>> coarse_layer_importance(
    const GradAccumulator& acc, const std::vector<DependencyGroup>& groups);

// Per-parameter empirical Fisher diagonal F_w = sum_sq / sample_count.
std::vector<NamedParam> fisher_diagonal(const GradAccumulator& acc);

// Diagonal quadratic form (1-m)^T diag(F) (1-m): the sum of F over pruned
// weights. Mask entries must be 0/1 and shapes must match the Fisher.
double taylor_objective(const Mask& mask,
                        const std::vector<NamedParam>& fisher);

struct ImportanceTable {
    std::vector<ChannelScore> fine;
    std::vector<double> coarse;  // by group id
    std::vector<NamedParam> fisher_diag;

    double fine_of(const Channel& c) const;
};

ImportanceTable compute_importance(const GradAccumulator& acc,
                                   const std::vector<DependencyGroup>& groups,
                                   std::size_t head_dim);

// Iterates the flat indices of a matrix slice. Exposed for tests.
void for_each_slice_index(const Shape& shape, const SliceRef& slice,
                          const std::function<void(std::size_t)>& fn);

}  // namespace hywia
