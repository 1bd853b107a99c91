#include "hywia/mask.hpp"

#include "hywia/errors.hpp"
#include "hywia/importance.hpp"

namespace hywia {

Mask Mask::ones_like(const DecoderModel& model) {
    Mask m;
    for (const NamedParam& p : model.named_parameters()) {
        m.names.push_back(p.name);
        m.shapes.push_back(p.tensor.shape());
        m.keep.emplace_back(p.tensor.numel(), std::uint8_t{1});
    }
    return m;
}

std::size_t Mask::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return i;
    throw InputError("mask: no parameter named '" + name + "'");
}

void Mask::zero_slice(const SliceRef& slice) {
    const std::size_t i = index_of(slice.matrix);
    for_each_slice_index(shapes[i], slice,
                         [&](std::size_t idx) { keep[i][idx] = 0; });
}

std::size_t Mask::pruned_count() const {
    std::size_t n = 0;
    for (const auto& k : keep)
        for (std::uint8_t v : k) n += (v == 0);
    return n;
}

std::size_t Mask::total_count() const {
    std::size_t n = 0;
    for (const auto& k : keep) n += k.size();
    return n;
}

}  // namespace hywia
