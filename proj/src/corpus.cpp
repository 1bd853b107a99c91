#include "hywia/corpus.hpp"

#include <cmath>
#include <fstream>

#include "hywia/errors.hpp"

namespace hywia {

namespace {

std::vector<int> window_tokens(const std::vector<std::uint8_t>& stream,
                               std::size_t start, std::size_t len) {
    std::vector<int> t(len);
    for (std::size_t i = 0; i < len; ++i) t[i] = stream[start + i];
    return t;
}

}  // namespace

Corpus split_corpus(std::vector<std::uint8_t> bytes) {
    if (bytes.size() < kMinCorpusBytes)
        throw InputError("corpus: " + std::to_string(bytes.size()) +
                         " bytes, need at least " +
                         std::to_string(kMinCorpusBytes));
    const std::size_t n = bytes.size();
    const std::size_t train_end = n * 90 / 100;
    const std::size_t est_end = n * 95 / 100;
    Corpus c;
    c.train.assign(bytes.begin(), bytes.begin() + train_end);
    c.estimation.assign(bytes.begin() + train_end, bytes.begin() + est_end);
    c.eval.assign(bytes.begin() + est_end, bytes.end());
    return c;
}

Corpus ingest_corpus(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("corpus: cannot read '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return split_corpus(std::move(bytes));
}

std::vector<std::vector<int>> sample_windows(
    const std::vector<std::uint8_t>& stream, std::size_t count,
    std::size_t max_seq) {
    if (count == 0) throw InputError("sample_windows: count must be >= 1");
    if (stream.size() < 2)
        throw InputError("sample_windows: stream too short for a window");
    const std::size_t len = std::min(max_seq, stream.size());
    const std::size_t span = stream.size() - len;
    std::vector<std::vector<int>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t start =
            count == 1 ? 0 : span * i / (count - 1);
        out.push_back(window_tokens(stream, start, len));
    }
    return out;
}

std::vector<std::vector<int>> eval_windows(
    const std::vector<std::uint8_t>& stream, std::size_t max_seq) {
    std::vector<std::vector<int>> out;
    std::size_t pos = 0;
    while (pos + max_seq <= stream.size()) {
        out.push_back(window_tokens(stream, pos, max_seq));
        pos += max_seq;
    }
    if (stream.size() - pos >= 2)
        out.push_back(window_tokens(stream, pos, stream.size() - pos));
    return out;
}

double perplexity(const DecoderModel& model,
                  const std::vector<std::vector<int>>& sequences) {
    if (sequences.empty()) throw InputError("perplexity: no sequences");
    double total_nll = 0.0;
    std::size_t total_targets = 0;
    for (const std::vector<int>& seq : sequences) {
        const std::size_t targets = seq.size() - 1;
        total_nll += model.loss(seq).item() * static_cast<double>(targets);
        total_targets += targets;
    }
    return std::exp(total_nll / static_cast<double>(total_targets));
}

}  // namespace hywia
