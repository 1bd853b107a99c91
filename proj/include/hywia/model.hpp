// Small decoder-only transformer with LLaMA-shaped coupled structures:
// multi-head attention (wq/wk/wv/wo), SiLU-gated MLP (wgate/wup/wdown), RMS
// norms, residual stream, learned absolute position embeddings. Attention
// heads and MLP hidden channels can be physically removed per layer, so each
// layer carries its own surviving dimensions.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hywia/tensor.hpp"

namespace hywia {

struct ModelConfig {
    std::size_t vocab_size = 256;
    std::size_t d_model = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t head_dim = 16;  // d_model / n_heads
    std::size_t d_ff = 256;
    std::size_t max_seq = 128;
    std::uint64_t seed = 0;

    static ModelConfig toy_default() { return ModelConfig{}; }
    void validate() const;  // throws ConfigError
};

struct LoraAdapter {
    std::string target;  // parameter name of the wrapped matrix
    Tensor gamma;        // [d_in x rank]
    Tensor beta;         // [rank x d_out]
    std::size_t rank = 0;
    double alpha = 0.0;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct LayerWeights {
    Tensor attn_norm, wq, wk, wv, wo;
    Tensor mlp_norm, wgate, wup, wdown;
    std::size_t n_heads = 0;  // surviving heads in this layer
    std::size_t d_ff = 0;     // surviving hidden channels
};

class DecoderModel {
public:
    DecoderModel() = default;  // empty; assign from init/load before use

    static DecoderModel init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    std::size_t n_layers() const { return layers_.size(); }
    const LayerWeights& layer(std::size_t i) const { return layers_[i]; }
    LayerWeights& layer(std::size_t i) { return layers_[i]; }
    const Tensor& embedding() const { return embed_; }
    const Tensor& position_embedding() const { return pos_; }
    const Tensor& output_head() const { return head_; }
    const Tensor& final_norm() const { return final_norm_; }

    std::size_t attn_width(std::size_t l) const {
        return layers_[l].n_heads * cfg_.head_dim;
    }

    // Logits [seq x vocab]; causal self-attention.
    Tensor forward(const std::vector<int>& tokens) const;
    // Mean next-token cross-entropy; tokens.size() must be >= 2.
    Tensor loss(const std::vector<int>& tokens) const;

    std::vector<NamedParam> named_parameters() const;
    Tensor param(const std::string& name) const;
    std::size_t parameter_count() const;

    // --- LoRA ---
    // roles: subset of {wq,wk,wv,wo,wgate,wup,wdown} or {"all"}.
    void attach_lora(const std::vector<std::string>& roles, std::size_t rank,
                     double alpha, Rng& rng);
    // Folds adapters into the base matrices. Returns false (no-op) when no
    // adapters are attached.
    bool merge_lora();
    bool has_adapters() const { return !adapters_.empty(); }
    const std::vector<LoraAdapter>& adapters() const { return adapters_; }

    // --- structural pruning hooks ---
    // Indices must be valid for the layer's current width; the matrices are
    // reallocated without the given heads / hidden channels.
    void drop_heads(std::size_t l, const std::vector<std::size_t>& heads);
    void drop_mlp_channels(std::size_t l, const std::vector<std::size_t>& chans);

    DecoderModel clone() const;

    // Used by the checkpoint loader.
    static DecoderModel from_parts(ModelConfig cfg,
                                   std::vector<LayerWeights> layers,
                                   Tensor embed, Tensor pos, Tensor final_norm,
                                   Tensor head);

private:
    Tensor linear(const Tensor& x, const std::string& name,
                  const Tensor& w) const;
    const LoraAdapter* adapter_for(const std::string& name) const;

    ModelConfig cfg_;
    Tensor embed_;       // [vocab x d_model]
    Tensor pos_;         // [max_seq x d_model]
    Tensor final_norm_;  // [d_model]
    Tensor head_;        // [d_model x vocab]
    std::vector<LayerWeights> layers_;
    std::vector<LoraAdapter> adapters_;
};

std::string layer_param_name(std::size_t layer, const std::string& role);

// Closed-form multiply-accumulate count for one token at full context
// (max_seq): projection and MLP matmuls from the surviving shapes, the
// quadratic attention term, and the output head.
std::size_t mac_per_token_estimate(const DecoderModel& model);

}  // namespace hywia
