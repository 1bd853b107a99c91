#include "hywia/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hywia/checkpoint.hpp"
#include "hywia/errors.hpp"
#include "hywia/pipeline.hpp"

namespace hywia {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliFlags {
    std::string config_path;
    std::string method;
    std::string layers;
    std::string out_dir;
    double ratio = -1.0;
    long long samples = -1;
    long long seed = -1;
    bool seed_set = false;
};

std::set<std::size_t> parse_layers(const std::string& spec) {
    std::set<std::size_t> out;
    if (spec == "none") return out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.insert(std::stoul(item));
    }
    return out;
}

RunConfig build_config(const CliFlags& f) {
    RunConfig cfg = f.config_path.empty()
                        ? RunConfig{}
                        : RunConfig::from_json_file(f.config_path);
    if (const char* env = std::getenv("HYWIA_SEED"))
        cfg.seed = std::strtoull(env, nullptr, 10);
    if (f.seed_set) cfg.seed = static_cast<std::uint64_t>(f.seed);
    if (f.ratio >= 0.0) cfg.target_ratio = f.ratio;
    if (f.samples >= 0) cfg.samples = static_cast<std::size_t>(f.samples);
    if (!f.method.empty()) cfg.method = method_from_string(f.method);
    if (!f.layers.empty()) cfg.protected_layers = parse_layers(f.layers);
    cfg.out_dir = f.out_dir;
    cfg.model.seed = derive_seed(cfg.seed, 0);
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    return cfg;
}

std::string outpath(const RunConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
}

DecoderModel obtain_dense_model(const RunConfig& cfg, const Corpus& corpus,
                                bool save_checkpoint_here) {
    if (!cfg.checkpoint_prefix.empty())
        return load_checkpoint(cfg.checkpoint_prefix);
    const std::string dense_prefix = outpath(cfg, "dense");
    if (fs::exists(dense_prefix + ".json") && fs::exists(dense_prefix + ".bin"))
        return load_checkpoint(dense_prefix);
    ModelConfig mc = cfg.model;
    DecoderModel model = DecoderModel::init(mc);
    Rng rng(derive_seed(cfg.seed, 2));
    const TrainStats st =
        pretrain(model, corpus.train, cfg.pretrain.steps, cfg.pretrain.lr,
                 cfg.pretrain.momentum, cfg.pretrain.batch, mc.max_seq, rng);
    std::cout << "pretrained " << cfg.pretrain.steps << " steps, loss "
              << st.initial_loss << " -> " << st.final_loss
              << ", mean grad norm " << st.final_grad_norm << "\n";
    if (save_checkpoint_here) save_checkpoint(model, dense_prefix);
    return model;
}

int cmd_train(const RunConfig& cfg) {
    const Corpus corpus = ingest_corpus(cfg.corpus_path);
    ModelConfig mc = cfg.model;
    DecoderModel model = DecoderModel::init(mc);
    Rng rng(derive_seed(cfg.seed, 2));
    const TrainStats st =
        pretrain(model, corpus.train, cfg.pretrain.steps, cfg.pretrain.lr,
                 cfg.pretrain.momentum, cfg.pretrain.batch, mc.max_seq, rng);
    save_checkpoint(model, outpath(cfg, "dense"));
    EvalReport report;
    report.perplexity =
        perplexity(model, eval_windows(corpus.eval, mc.max_seq));
    report.param_count = model.parameter_count();
    report.mac_per_token = mac_per_token_estimate(model);
    report.allocation = allocation_report(Mask::ones_like(model), model);
    write_eval_json(outpath(cfg, "eval_dense.json"), report, cfg, "dense");
    std::cout << "train: loss " << st.initial_loss << " -> " << st.final_loss
              << ", eval ppl " << report.perplexity << ", checkpoint "
              << outpath(cfg, "dense") << ".{json,bin}\n";
    return 0;
}

int cmd_prune(const RunConfig& cfg) {
    const Corpus corpus = ingest_corpus(cfg.corpus_path);
    DecoderModel model = obtain_dense_model(cfg, corpus, true);
    const GradAccumulator acc = accumulate(
        model,
        sample_windows(corpus.estimation, cfg.samples, cfg.model.max_seq));
    const FusionProjections proj = init_projections(
        kFeatureDim, kFeatureDim, cfg.fusion_d_model, derive_seed(cfg.seed, 1));
    const ScoredGroups scored =
        score_groups(model, acc, cfg.method, cfg.fixed_alpha, proj);
    const PruningPlan plan =
        make_plan(scored.score, scored.groups, cfg.target_ratio,
                  cfg.effective_protected_layers());

    EvalReport dense_report;
    dense_report.perplexity =
        perplexity(model, eval_windows(corpus.eval, cfg.model.max_seq));
    dense_report.param_count = model.parameter_count();
    dense_report.mac_per_token = mac_per_token_estimate(model);
    dense_report.allocation = allocation_report(Mask::ones_like(model), model);
    dense_report.fusion_resources = scored.fusion_resources;
    write_eval_json(outpath(cfg, "eval_dense.json"), dense_report, cfg, "dense");

    DecoderModel pruned = model.clone();
    const Mask mask = apply_plan(pruned, plan, scored.groups);
    save_checkpoint(pruned, outpath(cfg, "pruned"));
    write_mask_json(outpath(cfg, "mask.json"), mask, cfg);
    write_fusion_csv(outpath(cfg, "fusion.csv"), scored.rows, cfg);
    write_groups_json(outpath(cfg, "groups.json"), scored.groups,
                      group_connect_summary(model, scored.groups), cfg);

    EvalReport pruned_report;
    pruned_report.perplexity =
        perplexity(pruned, eval_windows(corpus.eval, cfg.model.max_seq));
    pruned_report.param_count = pruned.parameter_count();
    pruned_report.mac_per_token = mac_per_token_estimate(pruned);
    pruned_report.allocation = allocation_report(mask, model);
    pruned_report.fusion_resources = scored.fusion_resources;
    write_allocation_csv(outpath(cfg, "allocation.csv"),
                         pruned_report.allocation, cfg);
    write_eval_json(outpath(cfg, "eval_pruned.json"), pruned_report, cfg,
                    "pruned");

    std::cout << "prune: method " << method_to_string(cfg.method)
              << ", target " << cfg.target_ratio << ", achieved "
              << plan.achieved_ratio << " of prunable params ("
              << plan.removed_params << " removed), ppl "
              << dense_report.perplexity << " -> " << pruned_report.perplexity
              << "\n";
    return 0;
}

int cmd_finetune(const RunConfig& cfg) {
    const Corpus corpus = ingest_corpus(cfg.corpus_path);
    const std::string prefix = cfg.checkpoint_prefix.empty()
                                   ? outpath(cfg, "pruned")
                                   : cfg.checkpoint_prefix;
    DecoderModel model = load_checkpoint(prefix);
    Rng init_rng(derive_seed(cfg.seed, 3));
    model.attach_lora(cfg.lora.targets, cfg.lora.rank, cfg.lora.alpha,
                      init_rng);
    Rng batch_rng(derive_seed(cfg.seed, 4));
    const TrainStats st =
        lora_finetune(model, corpus.train, cfg.lora.steps, cfg.lora.lr,
                      cfg.lora.batch, cfg.model.max_seq, batch_rng);
    if (!model.merge_lora())
        std::cerr << "warning: no adapters to merge\n";
    save_checkpoint(model, outpath(cfg, "recovered"));
    EvalReport report;
    report.perplexity =
        perplexity(model, eval_windows(corpus.eval, cfg.model.max_seq));
    report.param_count = model.parameter_count();
    report.mac_per_token = mac_per_token_estimate(model);
    report.allocation = allocation_report(Mask::ones_like(model), model);
    write_eval_json(outpath(cfg, "eval_recovered.json"), report, cfg,
                    "recovered");
    std::cout << "finetune: " << cfg.lora.steps << " steps, loss "
              << st.initial_loss << " -> " << st.final_loss << ", eval ppl "
              << report.perplexity << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    const Corpus corpus = ingest_corpus(cfg.corpus_path);
    std::string prefix = cfg.checkpoint_prefix;
    if (prefix.empty()) {
        for (const char* cand : {"recovered", "pruned", "dense"}) {
            const std::string p = outpath(cfg, cand);
            if (fs::exists(p + ".json")) {
                prefix = p;
                break;
            }
        }
    }
    if (prefix.empty())
        throw InputError("eval: no checkpoint configured and none found in " +
                         cfg.out_dir);
    DecoderModel model = load_checkpoint(prefix);
    EvalReport report;
    report.perplexity =
        perplexity(model, eval_windows(corpus.eval, cfg.model.max_seq));
    report.param_count = model.parameter_count();
    report.mac_per_token = mac_per_token_estimate(model);
    report.allocation = allocation_report(Mask::ones_like(model), model);
    write_eval_json(outpath(cfg, "eval.json"), report, cfg, "eval");
    std::cout << "eval: " << prefix << " ppl " << report.perplexity
              << ", params " << report.param_count << ", mac/token "
              << report.mac_per_token << "\n";
    return 0;
}

int cmd_compare(const RunConfig& cfg) {
    const CompareResult cmp = run_compare(cfg);
    write_compare_csv(outpath(cfg, "compare.csv"), cmp, cfg);
    std::cout << "compare: wrote " << outpath(cfg, "compare.csv") << "\n";
    std::cout << "layer dense fine coarse hybrid\n";
    for (std::size_t l = 0; l < cmp.dense.size(); ++l)
        std::cout << l << " " << cmp.dense[l].dense_params << " "
                  << cmp.fine[l].retained_params << " "
                  << cmp.coarse[l].retained_params << " "
                  << cmp.hybrid[l].retained_params << "\n";
    return 0;
}

int cmd_report(const RunConfig& cfg) {
    bool any = false;
    for (const char* name :
         {"eval_dense.json", "eval_pruned.json", "eval_recovered.json",
          "eval.json"}) {
        const std::string path = outpath(cfg, name);
        if (!fs::exists(path)) continue;
        any = true;
        std::ifstream is(path);
        const json j = json::parse(is);
        std::cout << j.value("stage", "?") << ": ppl "
                  << j.value("perplexity", 0.0) << ", params "
                  << j.value("param_count", 0ULL) << ", mac/token "
                  << j.value("mac_per_token", 0ULL) << "\n";
        if (j.contains("fusion_resources")) {
            const json& r = j["fusion_resources"];
            std::cout << "  fusion stage: " << r.value("mem_bytes", 0ULL)
                      << " bytes, " << r.value("seconds", 0.0)
                      << " s (reference band: 1.04-3.00 MB, ~0.0140 s)\n";
        }
    }
    const std::string mask_path = outpath(cfg, "mask.json");
    if (fs::exists(mask_path)) {
        any = true;
        std::ifstream is(mask_path);
        const json j = json::parse(is);
        std::cout << "mask: target " << j.value("target_ratio", 0.0)
                  << ", achieved " << j.value("achieved_ratio", 0.0)
                  << " (prunable), " << j.value("whole_model_ratio", 0.0)
                  << " (whole model), " << j["pruned_groups"].size()
                  << " groups removed\n";
    }
    if (!any) {
        std::cout << "report: no artifacts found in " << cfg.out_dir << "\n";
    }
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"hywia: hybrid-grained structured pruning toolkit"};
    app.require_subcommand(1);

    CliFlags flags;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config_path,
                        "JSON run configuration");
        sub->add_option("--ratio", flags.ratio, "target pruning ratio [0,1)");
        sub->add_option("--samples", flags.samples,
                        "gradient estimation samples");
        sub->add_option("--method", flags.method,
                        "fine|coarse|hybrid|fixed-alpha|literal-attention");
        sub->add_option("--seed", flags.seed, "run seed")
            ->each([&](const std::string&) { flags.seed_set = true; });
        sub->add_option("--layers", flags.layers,
                        "protected layers, e.g. 0,3 or none");
        sub->add_option("--out", flags.out_dir, "artifact directory")
            ->required();
    };

    CLI::App* train = app.add_subcommand("train", "pretrain the toy model");
    CLI::App* prune = app.add_subcommand("prune", "estimate, fuse and prune");
    CLI::App* finetune =
        app.add_subcommand("finetune", "LoRA recovery on a pruned checkpoint");
    CLI::App* eval = app.add_subcommand("eval", "perplexity report");
    CLI::App* compare =
        app.add_subcommand("compare", "fine vs coarse vs hybrid allocations");
    CLI::App* report = app.add_subcommand("report", "summarize artifacts");
    for (CLI::App* sub : {train, prune, finetune, eval, compare, report})
        add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = build_config(flags);
        if (train->parsed()) return cmd_train(cfg);
        if (prune->parsed()) return cmd_prune(cfg);
        if (finetune->parsed()) return cmd_finetune(cfg);
        if (eval->parsed()) return cmd_eval(cfg);
        if (compare->parsed()) return cmd_compare(cfg);
        if (report->parsed()) return cmd_report(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace hywia
