#include "hywia/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "hywia/errors.hpp"
#include "hywia/kernels.hpp"

namespace hywia {

namespace {

thread_local std::size_t g_fuse_bytes = 0;

// Workspace vector that reports its footprint to the resource meter.
std::vector<double> workspace(std::size_t n) {
    g_fuse_bytes += n * sizeof(double);
    return std::vector<double>(n, 0.0);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct SliceStats {
    double mean = 0.0, mean_abs = 0.0, max_abs = 0.0, l2 = 0.0;
};

SliceStats stats_over(const GradAccumulator& acc,
                      const std::vector<SliceRef>& slices) {
    SliceStats s;
    double total = 0.0, total_abs = 0.0, total_sq = 0.0;
    std::size_t count = 0;
    for (const SliceRef& sl : slices) {
        const Tensor& sums = acc.sum_of(sl.matrix);
        for_each_slice_index(sums.shape(), sl, [&](std::size_t idx) {
            const double v = sums.data()[idx];
            total += v;
            total_abs += std::fabs(v);
            total_sq += v * v;
            s.max_abs = std::max(s.max_abs, std::fabs(v));
            ++count;
        });
    }
    if (count > 0) {
        s.mean = total / static_cast<double>(count);
        s.mean_abs = total_abs / static_cast<double>(count);
    }
    s.l2 = std::sqrt(total_sq);
    return s;
}

double fine_fisher_over(const GradAccumulator& acc,
                        const std::vector<SliceRef>& slices) {
    double f = 0.0;
    const double inv_s = 1.0 / static_cast<double>(acc.sample_count);
    for (const SliceRef& sl : slices) {
        const Tensor& sq = acc.sum_sq_of(sl.matrix);
        for_each_slice_index(sq.shape(), sl,
                             [&](std::size_t idx) { f += sq.data()[idx] * inv_s; });
    }
    return f;
}

// z-scores one feature column in place across the n rows.
void standardize_column(std::vector<double>& rows, std::size_t n,
                        std::size_t col) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += rows[i * kFeatureDim + col];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = rows[i * kFeatureDim + col] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    if (var == 0.0) {
        for (std::size_t i = 0; i < n; ++i) rows[i * kFeatureDim + col] = 0.0;
        return;
    }
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i)
        rows[i * kFeatureDim + col] = (rows[i * kFeatureDim + col] - mean) / sd;
}

}  // namespace

std::vector<double> standardize(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> out(n, 0.0);
    if (n == 0) return out;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n);
    if (var == 0.0) return out;
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) out[i] = (v[i] - mean) / sd;
    return out;
}

FusionProjections init_projections(std::size_t d_f, std::size_t d_c,
                                   std::size_t d_model, std::uint64_t seed) {
    if (d_f < 1 || d_c < 1 || d_model < 1)
        throw InputError("init_projections: dimensions must be >= 1");
    Rng rng(seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d_model));
    FusionProjections p;
    p.wq = Tensor::randn({d_f, d_model}, rng, stddev);
    p.wk = Tensor::randn({d_c, d_model}, rng, stddev);
    p.wv = Tensor::randn({d_c, d_model}, rng, stddev);
    p.d_model = d_model;
    p.seed = seed;
    return p;
}

FamilyFeatures compute_features(const GradAccumulator& acc,
                                const std::vector<DependencyGroup>& family,
                                std::size_t head_dim) {
    if (acc.sample_count < 1)
        throw ContractError("compute_features: accumulator is empty");
    FamilyFeatures f;
    for (const DependencyGroup& g : family) {
        const SliceStats group_stats = stats_over(acc, g.members);
        // coarse Fisher of the whole owning group: mean squared pooled sum
        double entries = 0.0, sq = 0.0;
        for (const SliceRef& sl : g.members) {
            const Tensor& sums = acc.sum_of(sl.matrix);
            for_each_slice_index(sums.shape(), sl, [&](std::size_t idx) {
                sq += sums.data()[idx] * sums.data()[idx];
                entries += 1.0;
            });
        }
        const double coarse_fisher = entries == 0.0 ? 0.0 : sq / entries;
        for (const Channel& c : group_channels(g, head_dim)) {
            const auto slices = channel_slices(c);
            const SliceStats cs = stats_over(acc, slices);
            const double ff = fine_fisher_over(acc, slices);
            f.channels.push_back(c);
            f.owner_group.push_back(g.id);
            f.fine.insert(f.fine.end(),
                          {cs.mean, cs.mean_abs, cs.max_abs, cs.l2, ff});
            f.coarse.insert(f.coarse.end(),
                            {group_stats.mean, group_stats.mean_abs,
                             group_stats.max_abs, group_stats.l2,
                             coarse_fisher});
        }
    }
    f.n = f.channels.size();
    for (std::size_t col = 0; col < kFeatureDim; ++col) {
        standardize_column(f.fine, f.n, col);
        standardize_column(f.coarse, f.n, col);
    }
    return f;
}

std::pair<std::vector<double>, std::vector<double>> features_for_channel(
    const GradAccumulator& acc, const std::vector<DependencyGroup>& family,
    std::size_t head_dim, const Channel& channel) {
    const FamilyFeatures f = compute_features(acc, family, head_dim);
    for (std::size_t i = 0; i < f.n; ++i) {
        if (f.channels[i] == channel) {
            std::vector<double> fine(f.fine.begin() + i * kFeatureDim,
                                     f.fine.begin() + (i + 1) * kFeatureDim);
            std::vector<double> coarse(f.coarse.begin() + i * kFeatureDim,
                                       f.coarse.begin() + (i + 1) * kFeatureDim);
            return {fine, coarse};
        }
    }
    throw InputError("features_for_channel: channel not in family");
}

FusionResult fuse(const std::vector<double>& fine,
                  const std::vector<double>& coarse,
                  const FamilyFeatures& feats, const FusionProjections& proj,
                  FusionMode mode) {
    const std::size_t n = fine.size();
    if (n == 0) throw InputError("fuse: no channels");
    if (coarse.size() != n)
        throw InputError("fuse: fine has " + std::to_string(n) +
                         " channels, coarse has " +
                         std::to_string(coarse.size()));
    if (feats.n != n)
        throw InputError("fuse: features cover " + std::to_string(feats.n) +
                         " channels, scores cover " + std::to_string(n));
    const std::size_t dm = proj.d_model;
    const auto& K = kernels::active();

    FusionResult r;
    r.mode = mode;
    r.fine_std = standardize(fine);
    r.coarse_std = standardize(coarse);
    r.alpha.assign(n, 0.0);
    r.fused.assign(n, 0.0);

    std::vector<double> q = workspace(n * dm);
    std::vector<double> k = workspace(n * dm);
    K.matmul_acc(q.data(), feats.fine.data(), proj.wq.data(), n, kFeatureDim, dm);
    K.matmul_acc(k.data(), feats.coarse.data(), proj.wk.data(), n, kFeatureDim, dm);
    const double inv_sqrt_dm = 1.0 / std::sqrt(static_cast<double>(dm));

    if (mode == FusionMode::TwoWay) {
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t d = 0; d < dm; ++d) dot += q[i * dm + d] * k[i * dm + d];
            r.alpha[i] = sigmoid(dot * inv_sqrt_dm);
        }
    } else {
        std::vector<double> v = workspace(n * dm);
        K.matmul_acc(v.data(), feats.coarse.data(), proj.wv.data(), n,
                     kFeatureDim, dm);
        std::vector<double> scores = workspace(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t d = 0; d < dm; ++d)
                    dot += q[i * dm + d] * k[j * dm + d];
                scores[i * n + j] = dot * inv_sqrt_dm;
            }
        // row softmax
        for (std::size_t i = 0; i < n; ++i) {
            double mx = scores[i * n];
            for (std::size_t j = 1; j < n; ++j)
                mx = std::max(mx, scores[i * n + j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                scores[i * n + j] = std::exp(scores[i * n + j] - mx);
                denom += scores[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) scores[i * n + j] /= denom;
        }
        r.interaction = workspace(n * dm);
        K.matmul_acc(r.interaction.data(), scores.data(), v.data(), n, n, dm);
        for (std::size_t i = 0; i < n; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < n; ++j) mean += scores[i * n + j];
            r.alpha[i] = mean / static_cast<double>(n);
        }
    }

    for (std::size_t i = 0; i < n; ++i)
        r.fused[i] =
            r.alpha[i] * r.fine_std[i] + (1.0 - r.alpha[i]) * r.coarse_std[i];
    return r;
}

FusionResult fuse_fixed(const std::vector<double>& fine,
                        const std::vector<double>& coarse, double alpha) {
    const std::size_t n = fine.size();
    if (n == 0) throw InputError("fuse_fixed: no channels");
    if (coarse.size() != n)
        throw InputError("fuse_fixed: length mismatch");
    if (alpha < 0.0 || alpha > 1.0)
        throw InputError("fuse_fixed: alpha must be in [0, 1]");
    FusionResult r;
    r.mode = FusionMode::TwoWay;
    r.fine_std = standardize(fine);
    r.coarse_std = standardize(coarse);
    r.alpha.assign(n, alpha);
    r.fused.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        r.fused[i] = alpha * r.fine_std[i] + (1.0 - alpha) * r.coarse_std[i];
    return r;
}

ResourceUsage measure_fusion_resources(const std::function<void()>& fuse_call) {
    g_fuse_bytes = 0;
    const auto t0 = std::chrono::steady_clock::now();
    fuse_call();
    const auto t1 = std::chrono::steady_clock::now();
    ResourceUsage u;
    u.mem_bytes = g_fuse_bytes;
    u.seconds = std::chrono::duration<double>(t1 - t0).count();
    return u;
}

}  // namespace hywia
