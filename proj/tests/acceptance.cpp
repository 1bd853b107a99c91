// Acceptance suite: one pass/fail line per criterion.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "hywia/checkpoint.hpp"
#include "hywia/fusion.hpp"
#include "hywia/graph.hpp"
#include "hywia/importance.hpp"
#include "hywia/pipeline.hpp"
#include "hywia/pruning.hpp"
#include "support.hpp"

using namespace hywia;
using namespace hywia::test;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void verdict(int idx, bool ok, const std::string& what) {
    std::printf("[criterion %2d] %s - %s\n", idx, ok ? "PASS" : "FAIL",
                what.c_str());
    std::fflush(stdout);
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double s = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = s * rng.normal();
    return v;
}

FamilyFeatures synthetic_features(std::size_t n, Rng& rng, double s = 1.0) {
    FamilyFeatures f;
    f.n = n;
    f.fine = random_vec(n * kFeatureDim, rng, s);
    f.coarse = random_vec(n * kFeatureDim, rng, s);
    for (std::size_t i = 0; i < n; ++i) {
        f.channels.push_back(Channel{0, GroupKind::MlpChannel, i});
        f.owner_group.push_back(static_cast<int>(i));
    }
    return f;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    auto ranks = [n](const std::vector<double>& v) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (double(i) + double(j));
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= double(n);
    mb /= double(n);
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

// Second-order token stream with a random per-context transition table,
// stored as bytes so the training loops can consume it directly. The context
// structure cannot be solved through the embedding->head residual shortcut,
// so attention and MLP channels all carry signal.
std::vector<std::uint8_t> markov_stream(std::size_t len, std::size_t vocab,
                                        std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t ctx = vocab * vocab;
    std::vector<std::uint8_t> a(ctx), b(ctx);
    for (std::size_t c = 0; c < ctx; ++c) {
        a[c] = static_cast<std::uint8_t>(rng.index(vocab));
        b[c] = static_cast<std::uint8_t>(rng.index(vocab));
    }
    std::vector<std::uint8_t> s(len);
    std::uint8_t p2 = 0, p1 = 1;
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t c = p2 * vocab + p1;
        std::uint8_t nxt;
        const double u = rng.uniform();
        if (u < 0.60)
            nxt = a[c];
        else if (u < 0.92)
            nxt = b[c];
        else
            nxt = static_cast<std::uint8_t>(rng.index(vocab));
        s[i] = nxt;
        p2 = p1;
        p1 = nxt;
    }
    return s;
}

double mean_loss_over(const DecoderModel& model,
                      const std::vector<std::vector<int>>& seqs) {
    double total = 0.0;
    for (const auto& s : seqs) total += model.loss(s).item();
    return total / double(seqs.size());
}

}  // namespace

TEST_CASE("criterion 1: autodiff gradients match finite differences") {
    const auto t0 = Clock::now();
    ModelConfig cfg;
    cfg.vocab_size = 32;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.head_dim = 8;
    cfg.d_ff = 32;
    cfg.max_seq = 16;
    cfg.seed = 11;
    DecoderModel model = DecoderModel::init(cfg);
    REQUIRE(model.parameter_count() <= 50000);

    Rng rng(1);
    const std::vector<int> toks = random_tokens(12, cfg.vocab_size, rng);
    GradientTape tape;
    {
        TapeScope scope(tape);
        tape.backward(model.loss(toks));
    }

    // Central differences at h = 1e-5 carry ~eps*|L|/h ~ 4e-11 of rounding
    // noise, so entries whose gradient is below 1e-6 are held to a tight
    // absolute bound instead of the relative one.
    const double h = 1e-5;
    double max_rel = 0.0, max_abs_small = 0.0;
    for (const NamedParam& p : model.named_parameters()) {
        Tensor t = p.tensor;
        const Tensor& g = tape.grad(p.tensor);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double orig = t.data()[i];
            t.data()[i] = orig + h;
            const double fp = model.loss(toks).item();
            t.data()[i] = orig - h;
            const double fm = model.loss(toks).item();
            t.data()[i] = orig;
            const double fd = (fp - fm) / (2 * h);
            const double ad = g.data()[i];
            const double mag = std::max(std::fabs(fd), std::fabs(ad));
            if (mag < 1e-6)
                max_abs_small = std::max(max_abs_small, std::fabs(ad - fd));
            else
                max_rel = std::max(max_rel, std::fabs(ad - fd) / mag);
        }
    }
    const double elapsed = seconds_since(t0);
    const bool ok = max_rel < 1e-4 && max_abs_small < 1e-9 && elapsed < 60.0;
    verdict(1, ok,
            "full-model gradient check: max relative error " +
                std::to_string(max_rel) + " (< 1e-4), near-zero entries off "
                "by at most " + std::to_string(max_abs_small) + " (< 1e-9), " +
                std::to_string(elapsed) + " s (< 60)");
    CHECK(max_rel < 1e-4);
    CHECK(max_abs_small < 1e-9);
    CHECK(elapsed < 60.0);
}

TEST_CASE("criterion 2: fusion identity, alpha range, zero-projection case") {
    Rng rng(21);
    bool identity_ok = true, range_ok = true;
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 1 + rng.index(40);
        FusionProjections proj = init_projections(5, 5, 32, 1000 + rep);
        const auto fine = random_vec(n, rng, 2.0);
        const auto coarse = random_vec(n, rng, 0.5);
        const FamilyFeatures feats = synthetic_features(n, rng, 1.5);
        const FusionResult r =
            fuse(fine, coarse, feats, proj, FusionMode::TwoWay);
        for (std::size_t i = 0; i < n; ++i) {
            const double expect =
                r.alpha[i] * r.fine_std[i] + (1 - r.alpha[i]) * r.coarse_std[i];
            identity_ok = identity_ok && std::fabs(r.fused[i] - expect) <= 1e-12;
            range_ok = range_ok && r.alpha[i] > 0.0 && r.alpha[i] < 1.0;
        }
    }
    FusionProjections zero = init_projections(5, 5, 32, 7);
    std::fill(zero.wq.vec().begin(), zero.wq.vec().end(), 0.0);
    std::fill(zero.wk.vec().begin(), zero.wk.vec().end(), 0.0);
    const FamilyFeatures feats = synthetic_features(12, rng);
    const FusionResult rz = fuse(random_vec(12, rng), random_vec(12, rng),
                                 feats, zero, FusionMode::TwoWay);
    bool zero_ok = true;
    for (double a : rz.alpha) zero_ok = zero_ok && a == 0.5;

    const bool ok = identity_ok && range_ok && zero_ok;
    verdict(2, ok,
            "1000 random instances: fused == alpha*fine + (1-alpha)*coarse "
            "within 1e-12, alpha in (0,1); zero projections give alpha 0.5");
    CHECK(identity_ok);
    CHECK(range_ok);
    CHECK(zero_ok);
}

TEST_CASE("criterion 3: literal-attention mode degenerates to alpha = 1/n") {
    Rng rng(31);
    bool ok = true;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 1 + rng.index(50);
        FusionProjections proj = init_projections(5, 5, 32, 300 + rep);
        const FusionResult r =
            fuse(random_vec(n, rng, 3.0), random_vec(n, rng, 3.0),
                 synthetic_features(n, rng, 2.0), proj,
                 FusionMode::LiteralAttention);
        for (std::size_t i = 0; i < n; ++i)
            ok = ok && std::fabs(r.alpha[i] - 1.0 / double(n)) <= 1e-12;
    }
    verdict(3, ok, "row-stochastic attention rows average to alpha_i = 1/n "
                   "(printed-algorithm regression)");
    CHECK(ok);
}

TEST_CASE("criterion 4: single-group removals keep forward consistent and "
          "match masked weights") {
    DecoderModel model = DecoderModel::init(ModelConfig::toy_default());
    const auto groups = ChannelGraph::build(model).discover_groups();
    Rng rng(41);
    const std::vector<int> toks = random_tokens(32, 256, rng);
    bool ok = true;
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const DependencyGroup& g = groups[rng.index(groups.size())];
        DecoderModel shrunk = model.clone();
        PruningPlan plan;
        plan.removals.push_back({g.id, 0.0});
        plan.removed_params = g.param_count;
        plan.prunable_params = g.param_count;
        plan.target_ratio = 0.5;
        const Mask mask = apply_plan(shrunk, plan, groups);
        DecoderModel zeroed = model.clone();
        apply_mask_weights(zeroed, mask);
        const Tensor a = shrunk.forward(toks);
        const Tensor b = zeroed.forward(toks);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double d = std::fabs(a.data()[i] - b.data()[i]);
            worst = std::max(worst, d);
            ok = ok && d < 1e-10 && std::isfinite(a.data()[i]);
        }
    }
    verdict(4, ok,
            "100 random single-group removals: forward succeeds, mask/shrink "
            "max deviation " + std::to_string(worst) + " (< 1e-10)");
    CHECK(ok);
}

namespace {

double connect_bruteforce(const ChannelGraph& g, std::uint32_t from,
                          std::uint32_t to, std::size_t max_len) {
    for (const ChannelGraph::Edge& e : g.edges_from(from))
        if (e.to == to) return e.weight;
    double total = 0.0;
    struct Frame {
        std::uint32_t node;
        double product;
        std::size_t depth;
    };
    std::vector<Frame> stack{{from, 1.0, 0}};
    while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        if (f.depth >= max_len) continue;
        for (const ChannelGraph::Edge& e : g.edges_from(f.node)) {
            const double p = f.product * e.weight;
            if (e.to == to) total += p;
            stack.push_back({e.to, p, f.depth + 1});
        }
    }
    return total;
}

}  // namespace

TEST_CASE("criterion 5: connect equals brute-force path enumeration exactly") {
    Rng rng(51);
    bool ok = true;
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 4 + rng.index(9);  // up to 12 nodes
        ChannelGraph g;
        for (std::uint32_t i = 0; i < n; ++i)
            g.add_node(NodeKey{0, Role::Stream, Side::Out, i});
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = i + 1; j < n; ++j)
                if (rng.uniform() < 0.4) {
                    const double w = 1.0 + double(rng.index(5));
                    g.add_edge(i, j, rng.uniform() < 0.5 ? w : -w);
                }
        for (int pair = 0; pair < 8; ++pair) {
            const auto a = static_cast<std::uint32_t>(rng.index(n));
            const auto b = static_cast<std::uint32_t>(rng.index(n));
            if (a == b) continue;
            ok = ok && g.connect(a, b, n) == connect_bruteforce(g, a, b, n);
        }
    }
    verdict(5, ok, "50 random DAGs (<= 12 nodes): path-sum DP equals "
                   "exhaustive enumeration, exact");
    CHECK(ok);
}

TEST_CASE("criterion 6: fine scores rank channels like exhaustive zero-out") {
    const auto t0 = Clock::now();
    ModelConfig cfg;
    cfg.vocab_size = 4;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.head_dim = 4;
    cfg.d_ff = 8;
    cfg.max_seq = 8;
    cfg.seed = 61;
    DecoderModel model = DecoderModel::init(cfg);
    REQUIRE(model.parameter_count() <= 1000);

    const auto stream = markov_stream(20000, cfg.vocab_size, 5);
    Rng rng(6);
    // long run then a low-rate polish so the model sits near a minimum
    pretrain(model, stream, 24000, 0.12, 0.9, 4, cfg.max_seq, rng);
    pretrain(model, stream, 8000, 0.015, 0.9, 4, cfg.max_seq, rng);

    const auto est = sample_windows(
        std::vector<std::uint8_t>(stream.begin(), stream.begin() + 8000), 300,
        cfg.max_seq);
    const GradAccumulator acc = accumulate(model, est);
    const auto groups = ChannelGraph::build(model).discover_groups();
    const auto fine = fine_importance(acc, groups, cfg.head_dim);

    const double base = mean_loss_over(model, est);
    std::vector<double> scores, deltas;
    for (const ChannelScore& cs : fine) {
        DecoderModel zeroed = model.clone();
        for (const SliceRef& sl : channel_slices(cs.channel)) {
            Tensor w = zeroed.param(sl.matrix);
            for_each_slice_index(w.shape(), sl,
                                 [&](std::size_t idx) { w.data()[idx] = 0.0; });
        }
        scores.push_back(cs.score);
        deltas.push_back(mean_loss_over(zeroed, est) - base);
    }
    const double rho = spearman(scores, deltas);
    const double elapsed = seconds_since(t0);
    const bool ok = rho >= 0.8 && elapsed < 300.0;
    verdict(6, ok,
            "near-converged " + std::to_string(model.parameter_count()) +
                "-param model: Spearman(fine score, zero-out dL) = " +
                std::to_string(rho) + " (>= 0.8), " + std::to_string(elapsed) +
                " s (< 300)");
    CHECK(rho >= 0.8);
    CHECK(elapsed < 300.0);
}

TEST_CASE("criterion 7: achieved ratio lands in [target, target + max group "
          "share) with exact parameter audit") {
    DecoderModel model = DecoderModel::init(ModelConfig::toy_default());
    const auto groups = ChannelGraph::build(model).discover_groups();
    Rng rng(71);
    std::vector<double> scores(groups.size());
    for (double& s : scores) s = rng.uniform();
    const auto protect = default_protected_layers(4);

    std::size_t prunable = 0, max_group = 0;
    for (const DependencyGroup& g : groups) {
        if (protect.count(g.layer)) continue;
        prunable += g.param_count;
        max_group = std::max(max_group, g.param_count);
    }
    const double max_share = double(max_group) / double(prunable);

    bool ok = true;
    std::string detail;
    for (double target : {0.05, 0.1, 0.2, 0.5}) {
        const PruningPlan plan = make_plan(scores, groups, target, protect);
        DecoderModel pruned = model.clone();
        const std::size_t before = pruned.parameter_count();
        apply_plan(pruned, plan, groups);
        const bool in_range = plan.achieved_ratio >= target &&
                              plan.achieved_ratio < target + max_share;
        const bool audit =
            before - pruned.parameter_count() == plan.removed_params;
        ok = ok && in_range && audit;
        detail += std::to_string(target) + "->" +
                  std::to_string(plan.achieved_ratio) + " ";
    }
    verdict(7, ok, "targets {0.05, 0.1, 0.2, 0.5} achieved " + detail +
                       "(max group share " + std::to_string(max_share) + ")");
    CHECK(ok);
}

TEST_CASE("criterion 8: LoRA recovery beats the pruned model at ratio 0.2 "
          "for seeds 0, 1, 2") {
    const auto t0 = Clock::now();
    const auto dir = make_temp_dir("accept8");
    const std::string corpus = write_corpus_file(dir, 130000, 88);

    bool ok = true;
    std::string detail;
    for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
        RunConfig cfg;
        cfg.model = ModelConfig::toy_default();
        cfg.samples = 50;
        cfg.target_ratio = 0.2;
        cfg.method = Method::Hybrid;
        cfg.seed = seed;
        cfg.model.seed = derive_seed(seed, 0);
        cfg.pretrain.steps = 500;
        cfg.pretrain.batch = 4;
        cfg.pretrain.lr = 0.25;
        cfg.lora.steps = 200;
        cfg.lora.batch = 8;
        cfg.corpus_path = corpus;
        const PipelineResult r = run_pipeline(cfg);
        const bool recovered = r.recovered.perplexity < r.pruned.perplexity;
        ok = ok && recovered;
        detail += "seed " + std::to_string(seed) + ": dense " +
                  std::to_string(r.dense.perplexity) + ", pruned " +
                  std::to_string(r.pruned.perplexity) + ", recovered " +
                  std::to_string(r.recovered.perplexity) + "; ";
        // The dense baseline is not trained to convergence at desk scale, so
        // recovery may pass it as well; reported, not gated.
        WARN(r.dense.perplexity <= r.recovered.perplexity);
    }
    const double elapsed = seconds_since(t0);
    ok = ok && elapsed < 900.0;
    verdict(8, ok, detail + std::to_string(elapsed) + " s (< 900)");
    CHECK(ok);
    std::filesystem::remove_all(dir);
}

TEST_CASE("criterion 9: fine and coarse allocations differ; hybrid envelope "
          "reported") {
    const auto dir = make_temp_dir("accept9");
    RunConfig cfg;
    cfg.model.vocab_size = 256;
    cfg.model.d_model = 32;
    cfg.model.n_layers = 6;
    cfg.model.n_heads = 4;
    cfg.model.head_dim = 8;
    cfg.model.d_ff = 64;
    cfg.model.max_seq = 64;
    cfg.samples = 40;
    cfg.target_ratio = 0.5;
    cfg.seed = 9;
    cfg.model.seed = derive_seed(9, 0);
    cfg.pretrain.steps = 400;
    cfg.pretrain.batch = 2;
    cfg.pretrain.lr = 0.4;
    cfg.corpus_path = write_corpus_file(dir, 80000, 99);
    const CompareResult cmp = run_compare(cfg);

    double l1 = 0.0;
    std::size_t inside = 0, prunable_layers = 0;
    for (std::size_t l = 0; l < cmp.dense.size(); ++l) {
        const double f = double(cmp.fine[l].retained_params);
        const double c = double(cmp.coarse[l].retained_params);
        const double h = double(cmp.hybrid[l].retained_params);
        l1 += std::fabs(f - c);
        if (cmp.fine[l].retained_params == cmp.fine[l].dense_params &&
            cmp.coarse[l].retained_params == cmp.coarse[l].dense_params)
            continue;  // protected layer
        ++prunable_layers;
        if (h >= std::min(f, c) && h <= std::max(f, c)) ++inside;
    }
    const bool ok = l1 > 0.0;
    const double envelope =
        prunable_layers == 0 ? 0.0 : double(inside) / double(prunable_layers);
    verdict(9, ok,
            "compare at ratio 0.5: |fine - coarse| L1 = " + std::to_string(l1) +
                " (> 0 gated); hybrid inside the fine/coarse envelope on " +
                std::to_string(100.0 * envelope) +
                "% of prunable layers (soft, reported)");
    CHECK(ok);
    std::filesystem::remove_all(dir);
}

TEST_CASE("criterion 10: fusion projections are byte-identical across a full "
          "pipeline run") {
    const auto dir = make_temp_dir("accept10");
    RunConfig cfg;
    cfg.model.vocab_size = 256;
    cfg.model.d_model = 16;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 2;
    cfg.model.head_dim = 8;
    cfg.model.d_ff = 32;
    cfg.model.max_seq = 16;
    cfg.samples = 6;
    cfg.target_ratio = 0.25;
    cfg.seed = 10;
    cfg.model.seed = derive_seed(10, 0);
    cfg.pretrain.steps = 15;
    cfg.pretrain.batch = 2;
    cfg.lora.steps = 4;
    cfg.lora.batch = 2;
    cfg.protected_layers = std::set<std::size_t>{};
    cfg.corpus_path = write_corpus_file(dir, 20000, 1010);

    const FusionProjections fresh =
        init_projections(kFeatureDim, kFeatureDim, cfg.fusion_d_model,
                         derive_seed(cfg.seed, 1));
    const PipelineResult r = run_pipeline(cfg);
    bool ok = true;
    const std::pair<const Tensor*, const Tensor*> mats[] = {
        {&fresh.wq, &r.projections.wq},
        {&fresh.wk, &r.projections.wk},
        {&fresh.wv, &r.projections.wv}};
    for (const auto& [a, b] : mats) {
        ok = ok && a->numel() == b->numel() &&
             std::memcmp(a->data(), b->data(), a->numel() * 8) == 0;
    }
    verdict(10, ok, "projections after the run equal a fresh seed-identical "
                    "initialization byte for byte");
    CHECK(ok);
    std::filesystem::remove_all(dir);
}

TEST_CASE("criterion 11: fusion resource measurement is positive and logged") {
    Rng rng(111);
    bool ok = true;
    std::string detail;
    for (std::size_t n : {16u, 64u, 256u}) {
        FusionProjections proj = init_projections(5, 5, 32, n);
        const auto fine = random_vec(n, rng);
        const auto coarse = random_vec(n, rng);
        const FamilyFeatures feats = synthetic_features(n, rng);
        const ResourceUsage u = measure_fusion_resources(
            [&] { fuse(fine, coarse, feats, proj, FusionMode::TwoWay); });
        ok = ok && u.seconds > 0.0;
        detail += "n=" + std::to_string(n) + ": " +
                  std::to_string(u.mem_bytes) + " B, " +
                  std::to_string(u.seconds) + " s; ";
    }
    verdict(11, ok, detail + "(reference band: 1.04-3.00 MB, ~0.0140 s)");
    CHECK(ok);
}
