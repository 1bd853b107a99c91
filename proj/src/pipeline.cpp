#include "hywia/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hywia/checkpoint.hpp"
#include "hywia/errors.hpp"

namespace hywia {

using nlohmann::json;

const char* kToolVersion = "0.1.0";

namespace {

// Seed streams derived from the run seed.
enum SeedStream : std::uint64_t {
    kSeedModel = 0,
    kSeedFusion = 1,
    kSeedPretrain = 2,
    kSeedLoraInit = 3,
    kSeedLoraBatches = 4,
};

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw std::runtime_error("stage " + std::string(name) + ": " + e.what());
    }
}

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

json meta_json(const RunConfig& cfg) {
    return json{{"tool_version", kToolVersion},
                {"config_hash", cfg.config_hash()},
                {"seed", cfg.seed}};
}

void csv_meta(std::ofstream& os, const RunConfig& cfg) {
    os << "# tool_version=" << kToolVersion << "\n";
    os << "# config_hash=" << cfg.config_hash() << "\n";
    os << "# seed=" << cfg.seed << "\n";
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw InputError("cannot write '" + path + "'");
    os << std::setprecision(17);
    return os;
}

EvalReport evaluate(const DecoderModel& model, const Corpus& corpus,
                    const Mask& mask, const DecoderModel& dense_model,
                    const ResourceUsage& fusion_res) {
    EvalReport r;
    r.perplexity = perplexity(model, eval_windows(corpus.eval,
                                                  model.config().max_seq));
    r.param_count = model.parameter_count();
    r.mac_per_token = mac_per_token_estimate(model);
    r.allocation = allocation_report(mask, dense_model);
    r.fusion_resources = fusion_res;
    return r;
}

}  // namespace

Method method_from_string(const std::string& s) {
    if (s == "fine") return Method::Fine;
    if (s == "coarse") return Method::Coarse;
    if (s == "hybrid") return Method::Hybrid;
    if (s == "fixed-alpha") return Method::FixedAlpha;
    if (s == "literal-attention") return Method::LiteralAttention;
    throw InputError("unknown method '" + s +
                     "' (expected fine, coarse, hybrid, fixed-alpha, "
                     "literal-attention)");
}

std::string method_to_string(Method m) {
    switch (m) {
        case Method::Fine: return "fine";
        case Method::Coarse: return "coarse";
        case Method::Hybrid: return "hybrid";
        case Method::FixedAlpha: return "fixed-alpha";
        case Method::LiteralAttention: return "literal-attention";
    }
    return "?";
}

void RunConfig::validate() const {
    model.validate();
    if (samples < 1) throw ConfigError("config: samples must be >= 1");
    if (target_ratio < 0.0 || target_ratio >= 1.0)
        throw ConfigError("config: target_ratio must be in [0, 1)");
    if (method == Method::FixedAlpha &&
        (fixed_alpha < 0.0 || fixed_alpha > 1.0))
        throw ConfigError(
            "config: method fixed-alpha requires fixed_alpha in [0, 1]");
    if (lora.rank < 1) throw ConfigError("config: lora.rank must be >= 1");
    if (fusion_d_model < 1)
        throw ConfigError("config: fusion d_model must be >= 1");
    if (protected_layers) {
        for (std::size_t l : *protected_layers)
            if (l >= model.n_layers)
                throw ConfigError("config: protected layer " +
                                  std::to_string(l) + " out of " +
                                  std::to_string(model.n_layers));
    }
}

std::set<std::size_t> RunConfig::effective_protected_layers() const {
    return protected_layers ? *protected_layers
                            : default_protected_layers(model.n_layers);
}

std::string RunConfig::canonical_json() const {
    json j;
    j["model"] = {{"vocab_size", model.vocab_size}, {"d_model", model.d_model},
                  {"n_layers", model.n_layers},     {"n_heads", model.n_heads},
                  {"d_ff", model.d_ff},             {"max_seq", model.max_seq}};
    j["samples"] = samples;
    j["target_ratio"] = target_ratio;
    j["method"] = method_to_string(method);
    j["fixed_alpha"] = fixed_alpha;
    j["seed"] = seed;
    j["lora"] = {{"rank", lora.rank},   {"alpha", lora.alpha},
                 {"lr", lora.lr},       {"steps", lora.steps},
                 {"batch", lora.batch}, {"targets", lora.targets}};
    j["pretrain"] = {{"steps", pretrain.steps},
                     {"lr", pretrain.lr},
                     {"momentum", pretrain.momentum},
                     {"batch", pretrain.batch}};
    j["fusion"] = {{"d_model", fusion_d_model}};
    if (protected_layers)
        j["protected_layers"] = *protected_layers;
    j["paths"] = {{"corpus", corpus_path},
                  {"checkpoint", checkpoint_prefix},
                  {"out", out_dir}};
    return j.dump();
}

std::string RunConfig::config_hash() const { return fnv1a_hex(canonical_json()); }

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j = json::parse(text);
    RunConfig cfg;
    if (j.contains("model")) {
        const json& m = j["model"];
        if (m.contains("vocab_size")) cfg.model.vocab_size = m["vocab_size"];
        if (m.contains("d_model")) cfg.model.d_model = m["d_model"];
        if (m.contains("n_layers")) cfg.model.n_layers = m["n_layers"];
        if (m.contains("n_heads")) cfg.model.n_heads = m["n_heads"];
        if (m.contains("d_ff")) cfg.model.d_ff = m["d_ff"];
        if (m.contains("max_seq")) cfg.model.max_seq = m["max_seq"];
        if (cfg.model.n_heads == 0 ||
            cfg.model.d_model % cfg.model.n_heads != 0)
            throw ConfigError("config: d_model must be divisible by n_heads");
        cfg.model.head_dim = cfg.model.d_model / cfg.model.n_heads;
    }
    if (j.contains("samples")) cfg.samples = j["samples"];
    if (j.contains("target_ratio")) cfg.target_ratio = j["target_ratio"];
    if (j.contains("method"))
        cfg.method = method_from_string(j["method"].get<std::string>());
    if (j.contains("fixed_alpha")) cfg.fixed_alpha = j["fixed_alpha"];
    if (j.contains("seed")) cfg.seed = j["seed"];
    if (j.contains("lora")) {
        const json& l = j["lora"];
        if (l.contains("rank")) cfg.lora.rank = l["rank"];
        if (l.contains("alpha")) cfg.lora.alpha = l["alpha"];
        if (l.contains("lr")) cfg.lora.lr = l["lr"];
        if (l.contains("steps")) cfg.lora.steps = l["steps"];
        if (l.contains("batch")) cfg.lora.batch = l["batch"];
        if (l.contains("targets"))
            cfg.lora.targets = l["targets"].get<std::vector<std::string>>();
    }
    if (j.contains("pretrain")) {
        const json& p = j["pretrain"];
        if (p.contains("steps")) cfg.pretrain.steps = p["steps"];
        if (p.contains("lr")) cfg.pretrain.lr = p["lr"];
        if (p.contains("momentum")) cfg.pretrain.momentum = p["momentum"];
        if (p.contains("batch")) cfg.pretrain.batch = p["batch"];
    }
    if (j.contains("fusion") && j["fusion"].contains("d_model"))
        cfg.fusion_d_model = j["fusion"]["d_model"];
    if (j.contains("protected_layers"))
        cfg.protected_layers =
            std::set<std::size_t>(j["protected_layers"].begin(),
                                  j["protected_layers"].end());
    if (j.contains("paths")) {
        const json& p = j["paths"];
        if (p.contains("corpus")) cfg.corpus_path = p["corpus"];
        if (p.contains("checkpoint")) cfg.checkpoint_prefix = p["checkpoint"];
        if (p.contains("out")) cfg.out_dir = p["out"];
    }
    return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("config: cannot read '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json_text(ss.str());
}

void apply_seed_overrides(RunConfig& cfg) {
    if (const char* env = std::getenv("HYWIA_SEED")) {
        cfg.seed = std::strtoull(env, nullptr, 10);
    }
    cfg.model.seed = derive_seed(cfg.seed, kSeedModel);
}

ScoredGroups score_groups(const DecoderModel& model, const GradAccumulator& acc,
                          Method method, double fixed_alpha,
                          const FusionProjections& proj) {
    ScoredGroups out;
    const ChannelGraph graph = ChannelGraph::build(model);
    out.groups = graph.discover_groups();
    const std::size_t hd = model.config().head_dim;
    const ImportanceTable table = compute_importance(acc, out.groups, hd);

    out.fine_total.assign(out.groups.size(), 0.0);
    out.coarse = table.coarse;
    out.score.assign(out.groups.size(), 0.0);

    // Channel fine scores in family order; groups are already sorted by
    // (layer, kind, index), so families are contiguous runs.
    std::size_t fine_pos = 0;
    std::size_t i = 0;
    while (i < out.groups.size()) {
        std::size_t j = i;
        while (j < out.groups.size() && out.groups[j].layer == out.groups[i].layer &&
               out.groups[j].kind == out.groups[i].kind)
            ++j;
        const std::vector<DependencyGroup> family(out.groups.begin() + i,
                                                  out.groups.begin() + j);
        std::vector<double> fine_chan, coarse_chan;
        std::vector<int> owner;
        for (const DependencyGroup& g : family) {
            const std::size_t n_chan = group_channels(g, hd).size();
            for (std::size_t c = 0; c < n_chan; ++c) {
                fine_chan.push_back(table.fine[fine_pos].score);
                coarse_chan.push_back(table.coarse[static_cast<std::size_t>(g.id)]);
                owner.push_back(g.id);
                out.fine_total[static_cast<std::size_t>(g.id)] +=
                    table.fine[fine_pos].score;
                ++fine_pos;
            }
        }
        const FamilyFeatures feats = compute_features(acc, family, hd);
        const FusionMode mode = method == Method::LiteralAttention
                                    ? FusionMode::LiteralAttention
                                    : FusionMode::TwoWay;
        FusionResult fr;
        ResourceUsage u;
        if (method == Method::FixedAlpha) {
            u = measure_fusion_resources(
                [&] { fr = fuse_fixed(fine_chan, coarse_chan, fixed_alpha); });
        } else {
            u = measure_fusion_resources(
                [&] { fr = fuse(fine_chan, coarse_chan, feats, proj, mode); });
        }
        out.fusion_resources.mem_bytes += u.mem_bytes;
        out.fusion_resources.seconds += u.seconds;

        std::map<int, std::pair<double, std::size_t>> fused_by_group;
        for (std::size_t c = 0; c < fr.fused.size(); ++c) {
            out.rows.push_back(FusionRow{family.front().layer,
                                         family.front().kind,
                                         feats.channels[c].index, fr.alpha[c],
                                         fr.fine_std[c], fr.coarse_std[c],
                                         fr.fused[c]});
            auto& [total, count] = fused_by_group[owner[c]];
            total += fr.fused[c];
            ++count;
        }
        for (const auto& [gid, tc] : fused_by_group) {
            const double mean_fused = tc.first / static_cast<double>(tc.second);
            switch (method) {
                case Method::Fine:
                    out.score[static_cast<std::size_t>(gid)] =
                        out.fine_total[static_cast<std::size_t>(gid)];
                    break;
                case Method::Coarse:
                    out.score[static_cast<std::size_t>(gid)] =
                        out.coarse[static_cast<std::size_t>(gid)];
                    break;
                default:
                    out.score[static_cast<std::size_t>(gid)] = mean_fused;
            }
        }
        i = j;
    }
    return out;
}

PipelineResult run_pipeline(const RunConfig& cfg) {
    stage("config", [&] { cfg.validate(); return 0; });
    PipelineResult result;

    const Corpus corpus =
        stage("ingest", [&] { return ingest_corpus(cfg.corpus_path); });

    DecoderModel model = stage("pretrain", [&] {
        if (!cfg.checkpoint_prefix.empty())
            return load_checkpoint(cfg.checkpoint_prefix);
        ModelConfig mc = cfg.model;
        mc.seed = derive_seed(cfg.seed, kSeedModel);
        DecoderModel m = DecoderModel::init(mc);
        Rng rng(derive_seed(cfg.seed, kSeedPretrain));
        result.pretrain_stats =
            pretrain(m, corpus.train, cfg.pretrain.steps, cfg.pretrain.lr,
                     cfg.pretrain.momentum, cfg.pretrain.batch, mc.max_seq,
                     rng);
        result.pretrained = true;
        return m;
    });

    const GradAccumulator acc = stage("estimate", [&] {
        return accumulate(model, sample_windows(corpus.estimation, cfg.samples,
                                                model.config().max_seq));
    });

    result.projections = init_projections(kFeatureDim, kFeatureDim,
                                          cfg.fusion_d_model,
                                          derive_seed(cfg.seed, kSeedFusion));
    result.scored = stage("fuse", [&] {
        return score_groups(model, acc, cfg.method, cfg.fixed_alpha,
                            result.projections);
    });

    result.plan = stage("plan", [&] {
        return make_plan(result.scored.score, result.scored.groups,
                         cfg.target_ratio, cfg.effective_protected_layers());
    });

    const Mask dense_mask = Mask::ones_like(model);
    result.dense = stage("eval", [&] {
        return evaluate(model, corpus, dense_mask, model,
                        result.scored.fusion_resources);
    });

    DecoderModel pruned = model.clone();
    result.mask = stage("prune", [&] {
        return apply_plan(pruned, result.plan, result.scored.groups);
    });
    result.pruned = stage("eval", [&] {
        return evaluate(pruned, corpus, result.mask, model,
                        result.scored.fusion_resources);
    });

    DecoderModel recovered = pruned.clone();
    result.finetune_stats = stage("finetune", [&] {
        Rng init_rng(derive_seed(cfg.seed, kSeedLoraInit));
        recovered.attach_lora(cfg.lora.targets, cfg.lora.rank, cfg.lora.alpha,
                              init_rng);
        Rng batch_rng(derive_seed(cfg.seed, kSeedLoraBatches));
        TrainStats st = lora_finetune(recovered, corpus.train, cfg.lora.steps,
                                      cfg.lora.lr, cfg.lora.batch,
                                      model.config().max_seq, batch_rng);
        recovered.merge_lora();
        return st;
    });
    result.recovered = stage("eval", [&] {
        return evaluate(recovered, corpus, result.mask, model,
                        result.scored.fusion_resources);
    });
    result.recovered_model = std::move(recovered);
    return result;
}

CompareResult run_compare(const RunConfig& cfg) {
    stage("config", [&] { cfg.validate(); return 0; });
    const Corpus corpus =
        stage("ingest", [&] { return ingest_corpus(cfg.corpus_path); });
    DecoderModel model = stage("pretrain", [&] {
        if (!cfg.checkpoint_prefix.empty())
            return load_checkpoint(cfg.checkpoint_prefix);
        ModelConfig mc = cfg.model;
        mc.seed = derive_seed(cfg.seed, kSeedModel);
        DecoderModel m = DecoderModel::init(mc);
        Rng rng(derive_seed(cfg.seed, kSeedPretrain));
        pretrain(m, corpus.train, cfg.pretrain.steps, cfg.pretrain.lr,
                 cfg.pretrain.momentum, cfg.pretrain.batch, mc.max_seq, rng);
        return m;
    });
    const GradAccumulator acc = stage("estimate", [&] {
        return accumulate(model, sample_windows(corpus.estimation, cfg.samples,
                                                model.config().max_seq));
    });
    const FusionProjections proj =
        init_projections(kFeatureDim, kFeatureDim, cfg.fusion_d_model,
                         derive_seed(cfg.seed, kSeedFusion));

    CompareResult cmp;
    cmp.dense = allocation_report(Mask::ones_like(model), model);
    const Method methods[] = {Method::Fine, Method::Coarse, Method::Hybrid};
    std::vector<LayerAllocation>* slots[] = {&cmp.fine, &cmp.coarse,
                                             &cmp.hybrid};
    for (int mi = 0; mi < 3; ++mi) {
        const ScoredGroups scored =
            score_groups(model, acc, methods[mi], cfg.fixed_alpha, proj);
        const PruningPlan plan =
            make_plan(scored.score, scored.groups, cfg.target_ratio,
                      cfg.effective_protected_layers());
        DecoderModel pruned = model.clone();
        const Mask mask = apply_plan(pruned, plan, scored.groups);
        *slots[mi] = allocation_report(mask, model);
    }
    return cmp;
}

std::vector<double> group_connect_summary(
    const DecoderModel& model, const std::vector<DependencyGroup>& groups) {
    const ChannelGraph graph = ChannelGraph::build(model);
    std::vector<double> out(groups.size(), 0.0);
    // One reverse sweep per needed (layer, kind) target.
    std::map<std::pair<std::size_t, GroupKind>, std::vector<double>> sweeps;
    for (const DependencyGroup& g : groups) {
        const auto key = std::make_pair(g.layer, g.kind);
        if (!sweeps.count(key)) {
            const int hop = g.kind == GroupKind::AttentionHead
                                ? static_cast<int>(2 * g.layer + 1)
                                : static_cast<int>(2 * g.layer + 2);
            const std::uint32_t target =
                graph.node_id(NodeKey{hop, Role::Stream, Side::Out, 0});
            sweeps[key] =
                graph.connect_all_to(target, ChannelGraph::kDefaultMaxPathLen);
        }
        const std::vector<double>& totals = sweeps[key];
        const NodeKey src =
            g.kind == GroupKind::AttentionHead
                ? NodeKey{static_cast<int>(g.layer), Role::Q, Side::Out,
                          static_cast<std::uint32_t>(g.index *
                                                     model.config().head_dim)}
                : NodeKey{static_cast<int>(g.layer), Role::Gate, Side::Out,
                          static_cast<std::uint32_t>(g.index)};
        out[static_cast<std::size_t>(g.id)] = totals[graph.node_id(src)];
    }
    return out;
}

// --- artifact writers ---

void write_eval_json(const std::string& path, const EvalReport& report,
                     const RunConfig& cfg, const std::string& stage_name) {
    json j;
    j["_meta"] = meta_json(cfg);
    j["stage"] = stage_name;
    j["perplexity"] = report.perplexity;
    j["param_count"] = report.param_count;
    j["mac_per_token"] = report.mac_per_token;
    json alloc = json::array();
    for (const LayerAllocation& a : report.allocation)
        alloc.push_back(json{{"layer", a.layer},
                             {"dense_params", a.dense_params},
                             {"retained_params", a.retained_params}});
    j["allocation"] = alloc;
    j["fusion_resources"] = {{"mem_bytes", report.fusion_resources.mem_bytes},
                             {"seconds", report.fusion_resources.seconds}};
    open_out(path) << j.dump(2) << "\n";
}

void write_mask_json(const std::string& path, const Mask& mask,
                     const RunConfig& cfg) {
    json j;
    j["_meta"] = meta_json(cfg);
    j["target_ratio"] = mask.target_ratio;
    j["achieved_ratio"] = mask.achieved_ratio;
    j["whole_model_ratio"] = mask.whole_model_ratio;
    j["prunable_params"] = mask.prunable_params;
    j["removed_params"] = mask.removed_params;
    json shapes = json::object();
    for (std::size_t i = 0; i < mask.names.size(); ++i)
        shapes[mask.names[i]] = mask.shapes[i];
    j["pre_prune_shapes"] = shapes;
    json pruned = json::array();
    for (const DependencyGroup& g : mask.pruned_groups) {
        json members = json::array();
        for (const SliceRef& s : g.members)
            members.push_back(json{{"matrix", s.matrix},
                                   {"axis", s.axis},
                                   {"begin", s.begin},
                                   {"end", s.end}});
        pruned.push_back(json{{"id", g.id},
                              {"layer", g.layer},
                              {"kind", group_kind_name(g.kind)},
                              {"index", g.index},
                              {"members", members}});
    }
    j["pruned_groups"] = pruned;
    open_out(path) << j.dump(2) << "\n";
}

void write_groups_json(const std::string& path,
                       const std::vector<DependencyGroup>& groups,
                       const std::vector<double>& connect_to_stream,
                       const RunConfig& cfg) {
    json j;
    j["_meta"] = meta_json(cfg);
    json arr = json::array();
    for (const DependencyGroup& g : groups) {
        json members = json::array();
        for (const SliceRef& s : g.members)
            members.push_back(json{{"matrix", s.matrix},
                                   {"axis", s.axis},
                                   {"begin", s.begin},
                                   {"end", s.end}});
        json gj{{"id", g.id},
                {"layer", g.layer},
                {"kind", group_kind_name(g.kind)},
                {"index", g.index},
                {"param_count", g.param_count},
                {"members", members}};
        if (!connect_to_stream.empty())
            gj["connect_to_stream"] =
                connect_to_stream[static_cast<std::size_t>(g.id)];
        arr.push_back(gj);
    }
    j["groups"] = arr;
    open_out(path) << j.dump(2) << "\n";
}

void write_allocation_csv(const std::string& path,
                          const std::vector<LayerAllocation>& alloc,
                          const RunConfig& cfg) {
    std::ofstream os = open_out(path);
    csv_meta(os, cfg);
    os << "layer,dense_params,retained_params\n";
    for (const LayerAllocation& a : alloc)
        os << a.layer << "," << a.dense_params << "," << a.retained_params
           << "\n";
}

void write_fusion_csv(const std::string& path,
                      const std::vector<FusionRow>& rows,
                      const RunConfig& cfg) {
    std::ofstream os = open_out(path);
    csv_meta(os, cfg);
    os << "layer,group_kind,channel,alpha,fine,coarse,fused\n";
    for (const FusionRow& r : rows)
        os << r.layer << "," << group_kind_name(r.kind) << "," << r.channel
           << "," << r.alpha << "," << r.fine << "," << r.coarse << ","
           << r.fused << "\n";
}

void write_compare_csv(const std::string& path, const CompareResult& cmp,
                       const RunConfig& cfg) {
    std::ofstream os = open_out(path);
    csv_meta(os, cfg);
    os << "layer,dense_params,fine_retained,coarse_retained,hybrid_retained\n";
    for (std::size_t l = 0; l < cmp.dense.size(); ++l)
        os << l << "," << cmp.dense[l].dense_params << ","
           << cmp.fine[l].retained_params << ","
           << cmp.coarse[l].retained_params << ","
           << cmp.hybrid[l].retained_params << "\n";
}

}  // namespace hywia
