// Byte-level corpus handling: deterministic 90/5/5 split by contiguous
// blocks, window extraction for estimation samples, and perplexity on the
// held-out split.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hywia/model.hpp"

namespace hywia {

constexpr std::size_t kMinCorpusBytes = 10000;

struct Corpus {
    std::vector<std::uint8_t> train;
    std::vector<std::uint8_t> estimation;
    std::vector<std::uint8_t> eval;
};

// Reads the file as raw bytes (byte-level vocab covers non-UTF-8 content).
// Throws InputError when smaller than kMinCorpusBytes.
Corpus ingest_corpus(const std::string& path);
Corpus split_corpus(std::vector<std::uint8_t> bytes);

// `count` token windows of length <= max_seq with evenly spaced starts
// (windows overlap when the stream is short). Deterministic.
std::vector<std::vector<int>> sample_windows(const std::vector<std::uint8_t>& stream,
                                             std::size_t count,
                                             std::size_t max_seq);

// Non-overlapping windows of max_seq tokens; a final shorter window is kept
// when it still yields a next-token target.
std::vector<std::vector<int>> eval_windows(const std::vector<std::uint8_t>& stream,
                                           std::size_t max_seq);

// exp of the mean per-token negative log-likelihood over the sequences.
double perplexity(const DecoderModel& model,
                  const std::vector<std::vector<int>>& sequences);

}  // namespace hywia
