// Training-free attention fusion of fine- and coarse-grained importance.
// Random projections map 5-dim gradient-statistic features of each channel to
// d_model space; the per-channel blend factor alpha comes from the Q/K
// interaction and the fused score is alpha*fine + (1-alpha)*coarse on
// standardized scores. The projections are fixed at initialization and never
// updated.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hywia/graph.hpp"
#include "hywia/importance.hpp"
#include "hywia/tensor.hpp"

namespace hywia {

constexpr std::size_t kFeatureDim = 5;  // mean, mean|.|, max|.|, L2, Fisher

struct FusionProjections {
    Tensor wq;  // [d_f x d_model], applied as feats * wq
    Tensor wk;  // [d_c x d_model]
    Tensor wv;  // [d_c x d_model]
    std::size_t d_model = 0;
    std::uint64_t seed = 0;
};

// Entries i.i.d. normal(0, 1/sqrt(d_model)); deterministic in the seed.
FusionProjections init_projections(std::size_t d_f, std::size_t d_c,
                                   std::size_t d_model, std::uint64_t seed);

enum class FusionMode { TwoWay, LiteralAttention };

struct FusionResult {
    FusionMode mode = FusionMode::TwoWay;
    std::vector<double> alpha;       // per channel, in (0,1)
    std::vector<double> fused;       // alpha*fine_std + (1-alpha)*coarse_std
    std::vector<double> fine_std;    // standardized inputs the blend used
    std::vector<double> coarse_std;
    std::vector<double> interaction;  // [n x d_model] attention output,
                                      // literal mode only
};

// Per-channel feature matrices for one group family (all channels of one
// (layer, kind) pair). Fine rows are statistics of the channel's own
// accumulated member-weight gradients; coarse rows are statistics of the
// whole owning group's pooled gradients (all channels of a head share them).
// Each of the five columns is z-scored across the family; a zero-variance
// column standardizes to 0.
struct FamilyFeatures {
    std::size_t n = 0;
    std::vector<Channel> channels;
    std::vector<int> owner_group;      // group id per channel
    std::vector<double> fine;          // [n x kFeatureDim]
    std::vector<double> coarse;        // [n x kFeatureDim]
};

FamilyFeatures compute_features(const GradAccumulator& acc,
                                const std::vector<DependencyGroup>& family,
                                std::size_t head_dim);

// One channel's standardized feature rows, computed in its family context.
std::pair<std::vector<double>, std::vector<double>> features_for_channel(
    const GradAccumulator& acc, const std::vector<DependencyGroup>& family,
    std::size_t head_dim, const Channel& channel);

FusionResult fuse(const std::vector<double>& fine,
                  const std::vector<double>& coarse,
                  const FamilyFeatures& feats, const FusionProjections& proj,
                  FusionMode mode);

// Fixed blend factor over the same standardized scores (ablation mode).
FusionResult fuse_fixed(const std::vector<double>& fine,
                        const std::vector<double>& coarse, double alpha);

// z-score with population variance; constant vectors map to all zeros.
std::vector<double> standardize(const std::vector<double>& v);

struct ResourceUsage {
    std::size_t mem_bytes = 0;
    double seconds = 0.0;
};

// Wall-clock and workspace-allocation delta around a single fuse invocation.
ResourceUsage measure_fusion_resources(const std::function<void()>& fuse_call);

}  // namespace hywia
