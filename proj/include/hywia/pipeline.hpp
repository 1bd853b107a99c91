// The operational shell: run configuration, group scoring per method, the
// end-to-end prune -> finetune -> eval pipeline, and artifact writers.
#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hywia/corpus.hpp"
#include "hywia/fusion.hpp"
#include "hywia/importance.hpp"
#include "hywia/mask.hpp"
#include "hywia/model.hpp"
#include "hywia/pruning.hpp"
#include "hywia/train.hpp"

namespace hywia {

extern const char* kToolVersion;

enum class Method { Fine, Coarse, Hybrid, FixedAlpha, LiteralAttention };

Method method_from_string(const std::string& s);  // throws InputError
std::string method_to_string(Method m);

struct LoraSettings {
    std::size_t rank = 8;
    double alpha = 16.0;
    double lr = 1e-4;
    std::size_t steps = 500;
    std::size_t batch = 64;
    std::vector<std::string> targets{"all"};
};

struct PretrainSettings {
    std::size_t steps = 2000;
    double lr = 0.4;
    double momentum = 0.9;
    std::size_t batch = 4;
};

struct RunConfig {
    ModelConfig model;
    std::size_t samples = 50;
    double target_ratio = 0.2;
    Method method = Method::Hybrid;
    double fixed_alpha = -1.0;  // required when method == FixedAlpha
    std::uint64_t seed = 0;
    LoraSettings lora;
    PretrainSettings pretrain;
    std::size_t fusion_d_model = 32;
    std::optional<std::set<std::size_t>> protected_layers;  // default: first+last
    std::string corpus_path = "corpus.txt";
    std::string checkpoint_prefix;  // load instead of pretraining when set
    std::string out_dir;

    void validate() const;
    std::set<std::size_t> effective_protected_layers() const;
    std::string canonical_json() const;
    std::string config_hash() const;  // FNV-1a over canonical_json

    static RunConfig from_json_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
};

// Applies the HYWIA_SEED environment override to cfg.seed (and the model
// seed, which always tracks the run seed).
void apply_seed_overrides(RunConfig& cfg);

struct EvalReport {
    double perplexity = 0.0;
    std::size_t param_count = 0;
    std::size_t mac_per_token = 0;
    std::vector<LayerAllocation> allocation;
    ResourceUsage fusion_resources;  // fusion stage of the producing run
};

struct FusionRow {
    std::size_t layer;
    GroupKind kind;
    std::size_t channel;
    double alpha, fine, coarse, fused;
};

struct ScoredGroups {
    std::vector<DependencyGroup> groups;
    std::vector<double> fine_total;    // per group: summed channel Fisher
    std::vector<double> coarse;        // per group
    std::vector<double> score;         // per group, per the method
    std::vector<FusionRow> rows;
    ResourceUsage fusion_resources;    // summed over family fuse calls
};

// Scores every dependency group of the model under the given method. The
// fusion rows are always emitted (two-way fusion when the method itself does
// not blend).
ScoredGroups score_groups(const DecoderModel& model, const GradAccumulator& acc,
                          Method method, double fixed_alpha,
                          const FusionProjections& proj);

struct PipelineResult {
    EvalReport dense, pruned, recovered;
    PruningPlan plan;
    Mask mask;
    ScoredGroups scored;
    FusionProjections projections;
    TrainStats pretrain_stats;
    bool pretrained = false;
    TrainStats finetune_stats;
    DecoderModel recovered_model;
};

// grouping -> gradient accumulation -> fine/coarse scores -> fusion ->
// plan -> apply -> LoRA recovery -> merge, with an eval report after each of
// the three model states. Stage failures are rethrown tagged with the stage
// name.
PipelineResult run_pipeline(const RunConfig& cfg);

struct CompareResult {
    std::vector<LayerAllocation> dense;  // retained == dense (reference row)
    std::vector<LayerAllocation> fine;
    std::vector<LayerAllocation> coarse;
    std::vector<LayerAllocation> hybrid;
};

// Runs fine / coarse / hybrid planning off one shared accumulator and
// reports the per-layer allocations side by side.
CompareResult run_compare(const RunConfig& cfg);

// --- artifact writers (all carry {tool version, config hash, seed}) ---
void write_eval_json(const std::string& path, const EvalReport& report,
                     const RunConfig& cfg, const std::string& stage);
void write_mask_json(const std::string& path, const Mask& mask,
                     const RunConfig& cfg);
void write_groups_json(const std::string& path,
                       const std::vector<DependencyGroup>& groups,
                       const std::vector<double>& connect_to_stream,
                       const RunConfig& cfg);
void write_allocation_csv(const std::string& path,
                          const std::vector<LayerAllocation>& alloc,
                          const RunConfig& cfg);
void write_fusion_csv(const std::string& path,
                      const std::vector<FusionRow>& rows, const RunConfig& cfg);
void write_compare_csv(const std::string& path, const CompareResult& cmp,
                       const RunConfig& cfg);

// Connect value from each group's first member output channel to channel 0
// of its block's output stream (path cap: ChannelGraph::kDefaultMaxPathLen).
// Reported for analysis; never used in ranking.
std::vector<double> group_connect_summary(const DecoderModel& model,
                                          const std::vector<DependencyGroup>& groups);

}  // namespace hywia
