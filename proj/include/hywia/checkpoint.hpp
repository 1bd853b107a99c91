// Checkpoint format: <prefix>.json manifest listing tensor names, shapes and
// byte offsets, plus <prefix>.bin with the little-endian fp64 payload.
// Round-trips are bit-exact.
#pragma once

#include <string>

#include "hywia/importance.hpp"
#include "hywia/model.hpp"

namespace hywia {

void save_checkpoint(const DecoderModel& model, const std::string& prefix);
DecoderModel load_checkpoint(const std::string& prefix);

// Sums the tensor sizes recorded in a manifest without loading the payload.
std::size_t checkpoint_param_count(const std::string& prefix);

// Gradient accumulators use the same manifest+binary layout, with the sums
// and squared sums stored under sum.<param> / sum_sq.<param>.
void save_accumulator(const GradAccumulator& acc, const std::string& prefix);
GradAccumulator load_accumulator(const std::string& prefix);

}  // namespace hywia
