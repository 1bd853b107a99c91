#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "hywia/checkpoint.hpp"
#include "hywia/errors.hpp"
#include "hywia/model.hpp"
#include "hywia/train.hpp"
#include "support.hpp"

using namespace hywia;
using namespace hywia::test;

namespace {

bool params_bit_equal(const DecoderModel& a, const DecoderModel& b) {
    const auto pa = a.named_parameters();
    const auto pb = b.named_parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].name != pb[i].name) return false;
        if (pa[i].tensor.shape() != pb[i].tensor.shape()) return false;
        if (std::memcmp(pa[i].tensor.data(), pb[i].tensor.data(),
                        pa[i].tensor.numel() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
    const ModelConfig cfg = ModelConfig::toy_default();
    CHECK(params_bit_equal(DecoderModel::init(cfg), DecoderModel::init(cfg)));
}

TEST_CASE("parameter count matches the closed-form sum of matrix sizes") {
    ModelConfig cfg;
    cfg.vocab_size = 256;
    cfg.d_model = 64;
    cfg.n_layers = 4;
    cfg.n_heads = 4;
    cfg.head_dim = 16;
    cfg.d_ff = 256;
    cfg.max_seq = 128;
    DecoderModel m = DecoderModel::init(cfg);
    std::size_t expected = cfg.vocab_size * cfg.d_model        // embed
                           + cfg.max_seq * cfg.d_model         // pos
                           + cfg.d_model                       // final norm
                           + cfg.d_model * cfg.vocab_size;     // head
    expected += cfg.n_layers *
                (2 * cfg.d_model                               // norms
                 + 4 * cfg.d_model * cfg.d_model               // q,k,v,o
                 + 2 * cfg.d_model * cfg.d_ff                  // gate, up
                 + cfg.d_ff * cfg.d_model);                    // down
    CHECK(m.parameter_count() == expected);
    CHECK(expected == 303680);
}

TEST_CASE("config with indivisible d_model is rejected") {
    ModelConfig cfg = ModelConfig::toy_default();
    cfg.d_model = 65;
    cfg.n_heads = 4;
    CHECK_THROWS_AS(DecoderModel::init(cfg), ConfigError);
}

TEST_CASE("forward shapes and input checks") {
    DecoderModel m = DecoderModel::init(mini_config());
    SUBCASE("single token") {
        Tensor logits = m.forward({5});
        CHECK(logits.shape() == Shape{1, 32});
    }
    SUBCASE("overlong sequence") {
        std::vector<int> toks(17, 1);
        CHECK_THROWS_AS(m.forward(toks), InputError);
    }
    SUBCASE("token outside vocab") {
        CHECK_THROWS_AS(m.forward({40}), InputError);
    }
}

TEST_CASE("causality: logits at t ignore edits to future tokens") {
    DecoderModel m = DecoderModel::init(mini_config(3));
    Rng rng(17);
    std::vector<int> toks = random_tokens(10, 32, rng);
    Tensor base = m.forward(toks);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<int> edited = toks;
        const std::size_t t = 4;
        for (std::size_t i = t + 1; i < edited.size(); ++i)
            edited[i] = static_cast<int>(rng.index(32));
        Tensor out = m.forward(edited);
        for (std::size_t pos = 0; pos <= t; ++pos)
            for (std::size_t v = 0; v < 32; ++v)
                CHECK(out.at(pos, v) ==
                      doctest::Approx(base.at(pos, v)).epsilon(1e-12));
    }
}

TEST_CASE("all-zero weights give all-zero logits") {
    DecoderModel m = DecoderModel::init(mini_config());
    for (const NamedParam& p : m.named_parameters()) {
        Tensor t = p.tensor;
        std::fill(t.vec().begin(), t.vec().end(), 0.0);
    }
    Tensor logits = m.forward({1, 2, 3});
    for (std::size_t i = 0; i < logits.numel(); ++i)
        CHECK(logits.data()[i] == 0.0);
}

TEST_CASE("lora adapters") {
    Rng lrng(55);
    DecoderModel m = DecoderModel::init(mini_config(9));
    Rng trng(4);
    const std::vector<int> toks = random_tokens(12, 32, trng);
    const Tensor before = m.forward(toks);

    SUBCASE("selector matching nothing is an error") {
        Rng r(1);
        CHECK_THROWS_AS(m.attach_lora({"nonexistent"}, 4, 16.0, r), InputError);
    }

    SUBCASE("fresh adapters leave outputs bit-identical") {
        m.attach_lora({"all"}, 8, 16.0, lrng);
        const Tensor after = m.forward(toks);
        for (std::size_t i = 0; i < before.numel(); ++i)
            CHECK(before.data()[i] == after.data()[i]);
    }

    SUBCASE("one optimizer step trains the adapters, never the frozen bases") {
        m.attach_lora({"wq", "wv"}, 4, 16.0, lrng);
        const DecoderModel snapshot = m.clone();
        GradientTape tape;
        {
            TapeScope scope(tape);
            tape.backward(m.loss(toks));
        }
        SgdMomentum opt(0.5, 0.0);
        opt.step(m.named_parameters(), tape);
        bool beta_changed = false;
        for (const NamedParam& p : m.named_parameters()) {
            const Tensor ref = snapshot.param(p.name);
            if (p.name.find(".lora_") == std::string::npos) {
                const bool is_target = p.name.ends_with("wq") ||
                                       p.name.ends_with("wv");
                if (is_target) CHECK(max_abs_diff(p.tensor, ref) == 0.0);
            } else if (p.name.find("lora_beta") != std::string::npos) {
                if (max_abs_diff(p.tensor, ref) > 0.0) beta_changed = true;
            }
        }
        CHECK(beta_changed);
    }

    SUBCASE("merge reproduces adapted outputs within 1e-10") {
        m.attach_lora({"all"}, 8, 16.0, lrng);
        for (const NamedParam& p : m.named_parameters()) {
            if (p.name.find(".lora_beta") == std::string::npos) continue;
            Tensor t = p.tensor;
            Rng r(p.tensor.id());
            for (double& v : t.vec()) v = 0.05 * r.normal();
        }
        const Tensor adapted = m.forward(toks);
        CHECK(m.merge_lora());
        const Tensor merged = m.forward(toks);
        CHECK(max_abs_diff(adapted, merged) < 1e-10);
        CHECK_FALSE(m.has_adapters());
        CHECK_FALSE(m.merge_lora());  // double merge is a no-op
    }

    SUBCASE("merge with untouched (zero) beta leaves weights bit-identical") {
        const DecoderModel snapshot = m.clone();
        m.attach_lora({"all"}, 8, 16.0, lrng);
        m.merge_lora();
        CHECK(params_bit_equal(m, snapshot));
    }

    SUBCASE("rank above the smallest dimension is rejected") {
        Rng r(1);
        CHECK_THROWS_AS(m.attach_lora({"all"}, 64, 16.0, r), InputError);
    }
}

TEST_CASE("lora finetuning never touches a base-matrix element") {
    ModelConfig cfg = mini_config(40);
    DecoderModel m = DecoderModel::init(cfg);
    const DecoderModel snapshot = m.clone();
    Rng lrng(3);
    m.attach_lora({"all"}, 4, 16.0, lrng);
    std::vector<std::uint8_t> stream(4000);
    Rng srng(8);
    for (auto& b : stream) b = static_cast<std::uint8_t>(srng.index(32));
    Rng trng(9);
    lora_finetune(m, stream, 6, 1e-2, 2, cfg.max_seq, trng);
    bool adapters_moved = false;
    for (const NamedParam& p : m.named_parameters()) {
        if (p.name.find(".lora_beta") != std::string::npos) {
            for (std::size_t i = 0; i < p.tensor.numel(); ++i)
                adapters_moved = adapters_moved || p.tensor.data()[i] != 0.0;
            continue;
        }
        if (p.name.find(".lora_") != std::string::npos) continue;
        const Tensor ref = snapshot.param(p.name);
        CHECK(max_abs_diff(p.tensor, ref) == 0.0);
    }
    CHECK(adapters_moved);
    m.merge_lora();
    for (const NamedParam& p : m.named_parameters())
        CHECK(p.tensor.requires_grad());  // everything trainable again
}

TEST_CASE("structural removal keeps the forward pass consistent") {
    DecoderModel m = DecoderModel::init(mini_config(21));
    Rng rng(5);
    const std::vector<int> toks = random_tokens(9, 32, rng);
    m.drop_heads(0, {1});
    m.drop_mlp_channels(1, {0, 7, 31});
    Tensor logits = m.forward(toks);
    CHECK(logits.shape() == Shape{9, 32});
    CHECK(m.attn_width(0) == 8);
    CHECK(m.layer(1).d_ff == 29);
    for (std::size_t i = 0; i < logits.numel(); ++i)
        CHECK(std::isfinite(logits.data()[i]));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    const auto dir = make_temp_dir("ckpt");
    DecoderModel m = DecoderModel::init(mini_config(31));
    m.drop_heads(1, {0});  // non-uniform layer dims must survive the trip
    const std::string prefix = (dir / "model").string();
    save_checkpoint(m, prefix);
    DecoderModel loaded = load_checkpoint(prefix);
    CHECK(params_bit_equal(m, loaded));
    CHECK(loaded.attn_width(1) == 8);
    CHECK(checkpoint_param_count(prefix) == m.parameter_count());
    std::filesystem::remove_all(dir);
}

TEST_CASE("model gradients match finite differences on a spot check") {
    ModelConfig cfg = mini_config(77);
    cfg.n_layers = 1;
    DecoderModel m = DecoderModel::init(cfg);
    Rng rng(6);
    const std::vector<int> toks = random_tokens(6, 32, rng);

    GradientTape tape;
    {
        TapeScope scope(tape);
        tape.backward(m.loss(toks));
    }
    for (const NamedParam& p : m.named_parameters()) {
        CHECK(tape.has_grad(p.tensor));
        CHECK(tape.grad(p.tensor).shape() == p.tensor.shape());
    }
    const double h = 1e-5;
    Rng pick(8);
    for (const NamedParam& p : m.named_parameters()) {
        Tensor t = p.tensor;
        const Tensor& g = tape.grad(p.tensor);
        for (int rep = 0; rep < 3; ++rep) {
            const std::size_t i = pick.index(t.numel());
            const double orig = t.data()[i];
            t.data()[i] = orig + h;
            const double fp = m.loss(toks).item();
            t.data()[i] = orig - h;
            const double fm = m.loss(toks).item();
            t.data()[i] = orig;
            const double fd = (fp - fm) / (2 * h);
            if (std::max(std::fabs(fd), std::fabs(g.data()[i])) < 1e-7) {
                CHECK(std::fabs(fd - g.data()[i]) < 1e-9);
            } else {
                const double denom =
                    std::max({std::fabs(fd), std::fabs(g.data()[i]), 1e-8});
                CHECK(std::fabs(fd - g.data()[i]) / denom < 1e-4);
            }
        }
    }
}
