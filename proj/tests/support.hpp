// Shared test helpers: deterministic synthetic corpus, temp directories,
// small model configs.
#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "hywia/model.hpp"
#include "hywia/rng.hpp"

namespace hywia::test {

inline std::string synth_text(std::size_t min_bytes, std::uint64_t seed) {
    static const char* nouns[] = {"model", "graph",  "channel", "weight",
                                  "head",  "layer",  "mask",    "score",
                                  "group", "tensor", "stream",  "block"};
    static const char* verbs[] = {"prunes", "keeps",  "ranks",  "blends",
                                  "maps",   "scores", "splits", "merges"};
    static const char* adjs[] = {"sparse", "dense", "coupled", "hybrid",
                                 "fine",   "coarse", "stable", "small"};
    Rng rng(seed);
    std::string s;
    while (s.size() < min_bytes) {
        s += "the ";
        s += adjs[rng.index(8)];
        s += " ";
        s += nouns[rng.index(12)];
        s += " ";
        s += verbs[rng.index(8)];
        s += " the ";
        s += nouns[rng.index(12)];
        s += rng.uniform() < 0.3 ? ".\n" : ". ";
    }
    s.resize(min_bytes);
    return s;
}

inline std::filesystem::path make_temp_dir(const std::string& tag) {
    static std::uint64_t counter = 0;
    const auto base = std::filesystem::temp_directory_path();
    std::filesystem::path dir;
    do {
        dir = base / ("hywia_" + tag + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter++));
    } while (std::filesystem::exists(dir));
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string write_corpus_file(const std::filesystem::path& dir,
                                     std::size_t bytes, std::uint64_t seed) {
    const auto path = dir / "corpus.txt";
    std::ofstream os(path, std::ios::binary);
    os << synth_text(bytes, seed);
    os.close();
    return path.string();
}

// 2-layer, 2-head mini config for gradient and shape tests.
inline ModelConfig mini_config(std::uint64_t seed = 7) {
    ModelConfig c;
    c.vocab_size = 32;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.head_dim = 8;
    c.d_ff = 32;
    c.max_seq = 16;
    c.seed = seed;
    return c;
}

inline std::vector<int> random_tokens(std::size_t n, std::size_t vocab,
                                      Rng& rng) {
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i)
        t[i] = static_cast<int>(rng.index(vocab));
    return t;
}

}  // namespace hywia::test
