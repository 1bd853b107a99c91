#include "hywia/importance.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hywia/errors.hpp"
#include "hywia/kernels.hpp"

namespace hywia {

namespace {

const Tensor& lookup(const std::vector<NamedParam>& params,
                     const std::string& name) {
    for (const NamedParam& p : params)
        if (p.name == name) return p.tensor;
    throw InputError("accumulator: no entry named '" + name + "'");
}

}  // namespace

const Tensor& GradAccumulator::sum_of(const std::string& name) const {
    return lookup(sum, name);
}

const Tensor& GradAccumulator::sum_sq_of(const std::string& name) const {
    return lookup(sum_sq, name);
}

GradAccumulator accumulate(const DecoderModel& model,
                           const std::vector<std::vector<int>>& samples) {
    if (samples.empty()) throw InputError("accumulate: empty sample set");
    const auto params = model.named_parameters();
    GradAccumulator acc;
    for (const NamedParam& p : params) {
        acc.sum.push_back({p.name, Tensor::zeros(p.tensor.shape())});
        acc.sum_sq.push_back({p.name, Tensor::zeros(p.tensor.shape())});
    }
    const auto& K = kernels::active();
    GradientTape tape;
    std::vector<double> mask_grad;
    for (const std::vector<int>& sample : samples) {
        {
            TapeScope scope(tape);
            Tensor loss = model.loss(sample);
            tape.backward(loss);
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!tape.has_grad(params[i].tensor)) continue;
            const Tensor& g = tape.grad(params[i].tensor);
            // Gradient with respect to the keep mask at m = 1:
            // dL/dm_w = dL/dw * w. This is the saliency the Taylor objective
            // is built on; zeroing a weight is a unit step in mask space.
            mask_grad.resize(g.numel());
            K.mul(mask_grad.data(), g.data(), params[i].tensor.data(),
                  g.numel());
            K.axpy(acc.sum[i].tensor.data(), 1.0, mask_grad.data(), g.numel());
            K.acc_sq(acc.sum_sq[i].tensor.data(), mask_grad.data(), g.numel());
        }
        tape.clear();
    }
    acc.sample_count = samples.size();
    return acc;
}

void for_each_slice_index(const Shape& shape, const SliceRef& slice,
                          const std::function<void(std::size_t)>& fn) {
    if (shape.size() != 2)
        throw DimensionError("slice index: expected rank-2 shape, got " +
                             shape_str(shape));
    const std::size_t rows = shape[0], cols = shape[1];
    if (slice.axis == 1) {
        if (slice.end > cols)
            throw DimensionError("slice index: columns [" +
                                 std::to_string(slice.begin) + ", " +
                                 std::to_string(slice.end) + ") out of " +
                                 shape_str(shape));
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = slice.begin; j < slice.end; ++j)
                fn(i * cols + j);
    } else {
        if (slice.end > rows)
            throw DimensionError("slice index: rows [" +
                                 std::to_string(slice.begin) + ", " +
                                 std::to_string(slice.end) + ") out of " +
                                 shape_str(shape));
        for (std::size_t i = slice.begin; i < slice.end; ++i)
            for (std::size_t j = 0; j < cols; ++j) fn(i * cols + j);
    }
}

std::vector<ChannelScore> fine_importance(
    const GradAccumulator& acc, const std::vector<DependencyGroup>& groups,
    std::size_t head_dim) {
    if (acc.sample_count < 1)
        throw ContractError("fine_importance: accumulator is empty");
    std::vector<ChannelScore> out;
    const double inv_s = 1.0 / static_cast<double>(acc.sample_count);
    for (const DependencyGroup& g : groups) {
        for (const Channel& c : group_channels(g, head_dim)) {
            double score = 0.0;
            for (const SliceRef& s : channel_slices(c)) {
                const Tensor& sq = acc.sum_sq_of(s.matrix);
                for_each_slice_index(sq.shape(), s, [&](std::size_t idx) {
                    score += sq.data()[idx] * inv_s;
                });
            }
            out.push_back({c, score});
        }
    }
    return out;
}

std::vector<double> coarse_importance(
    const GradAccumulator& acc, const std::vector<DependencyGroup>& groups) {
    if (acc.sample_count < 1)
        throw ContractError("coarse_importance: accumulator is empty");
    std::vector<double> out(groups.size(), 0.0);
    for (const DependencyGroup& g : groups) {
        double sq_total = 0.0;
        std::size_t entries = 0;
        for (const SliceRef& s : g.members) {
            const Tensor& sums = acc.sum_of(s.matrix);
            for_each_slice_index(sums.shape(), s, [&](std::size_t idx) {
                const double v = sums.data()[idx];
                sq_total += v * v;
                ++entries;
            });
        }
        out[static_cast<std::size_t>(g.id)] =
            entries == 0 ? 0.0 : sq_total / static_cast<double>(entries);
    }
    return out;
}

std::vector<std::pair<std::size_t, double>> coarse_layer_importance(
    const GradAccumulator& acc, const std::vector<DependencyGroup>& groups) {
    std::map<std::size_t, std::pair<double, std::size_t>> pools;
    for (const DependencyGroup& g : groups) {
        auto& [sq_total, entries] = pools[g.layer];
        for (const SliceRef& s : g.members) {
            const Tensor& sums = acc.sum_of(s.matrix);
            for_each_slice_index(sums.shape(), s, [&](std::size_t idx) {
                const double v = sums.data()[idx];
                sq_total += v * v;
                ++entries;
            });
        }
    }
    std::vector<std::pair<std::size_t, double>> out;
    for (const auto& [layer, pool] : pools)
        out.emplace_back(layer, pool.second == 0
                                    ? 0.0
                                    : pool.first / static_cast<double>(pool.second));
    return out;
}

std::vector<NamedParam> fisher_diagonal(const GradAccumulator& acc) {
    if (acc.sample_count < 1)
        throw ContractError("fisher_diagonal: accumulator is empty");
    std::vector<NamedParam> out;
    const double inv_s = 1.0 / static_cast<double>(acc.sample_count);
    for (const NamedParam& p : acc.sum_sq) {
        Tensor f = Tensor::zeros(p.tensor.shape());
        kernels::active().scale(f.data(), inv_s, p.tensor.data(),
                                p.tensor.numel());
        out.push_back({p.name, f});
    }
    return out;
}

double taylor_objective(const Mask& mask,
                        const std::vector<NamedParam>& fisher) {
    double total = 0.0;
    for (const NamedParam& f : fisher) {
        const std::size_t mi = mask.index_of(f.name);
        const std::vector<std::uint8_t>& keep = mask.keep[mi];
        if (keep.size() != f.tensor.numel())
            throw DimensionError("taylor_objective: mask for '" + f.name +
                                 "' has " + std::to_string(keep.size()) +
                                 " entries, Fisher has " +
                                 std::to_string(f.tensor.numel()));
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (keep[i] > 1)
                throw InputError("taylor_objective: mask entry " +
                                 std::to_string(int(keep[i])) +
                                 " is not binary");
            if (keep[i] == 0) total += f.tensor.data()[i];
        }
    }
    return total;
}

double ImportanceTable::fine_of(const Channel& c) const {
    for (const ChannelScore& s : fine)
        if (s.channel == c) return s.score;
    throw InputError("importance: no fine score for channel");
}

ImportanceTable compute_importance(const GradAccumulator& acc,
                                   const std::vector<DependencyGroup>& groups,
                                   std::size_t head_dim) {
    ImportanceTable t;
    t.fine = fine_importance(acc, groups, head_dim);
    t.coarse = coarse_importance(acc, groups);
    t.fisher_diag = fisher_diagonal(acc);
    return t;
}

}  // namespace hywia
