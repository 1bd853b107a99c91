#include "hywia/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "hywia/errors.hpp"
#include "hywia/kernels.hpp"

namespace hywia {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kMaskNegInf = -1e30;

Tensor causal_mask(std::size_t seq) {
    Tensor m = Tensor::zeros({seq, seq});
    for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = i + 1; j < seq; ++j) m.at(i, j) = kMaskNegInf;
    return m;
}

std::vector<int> iota_ids(std::size_t n) {
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
    return ids;
}

// New matrix without the listed columns (axis=1) or rows (axis=0).
Tensor drop_slices(const Tensor& w, int axis,
                   const std::vector<std::size_t>& idx) {
    std::unordered_set<std::size_t> gone(idx.begin(), idx.end());
    const std::size_t m = w.rows(), n = w.cols();
    if (axis == 1) {
        std::vector<std::size_t> keep;
        for (std::size_t j = 0; j < n; ++j)
            if (!gone.count(j)) keep.push_back(j);
        Tensor out = Tensor::zeros({m, keep.size()}, w.requires_grad());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < keep.size(); ++j)
                out.at(i, j) = w.at(i, keep[j]);
        return out;
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < m; ++i)
        if (!gone.count(i)) keep.push_back(i);
    Tensor out = Tensor::zeros({keep.size(), n}, w.requires_grad());
    for (std::size_t i = 0; i < keep.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = w.at(keep[i], j);
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("config: vocab_size must be >= 2");
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || head_dim < 1 ||
        d_ff < 1 || max_seq < 1)
        throw ConfigError("config: all dimensions must be >= 1");
    if (n_heads * head_dim != d_model)
        throw ConfigError("config: d_model (" + std::to_string(d_model) +
                          ") != n_heads (" + std::to_string(n_heads) +
                          ") * head_dim (" + std::to_string(head_dim) + ")");
}

std::string layer_param_name(std::size_t layer, const std::string& role) {
    return "layers." + std::to_string(layer) + "." + role;
}

DecoderModel DecoderModel::init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    DecoderModel m;
    m.cfg_ = cfg;
    m.embed_ = Tensor::randn({cfg.vocab_size, cfg.d_model}, rng, kInitStd, true);
    m.pos_ = Tensor::randn({cfg.max_seq, cfg.d_model}, rng, kInitStd, true);
    m.layers_.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        LayerWeights& lw = m.layers_[l];
        lw.n_heads = cfg.n_heads;
        lw.d_ff = cfg.d_ff;
        lw.attn_norm = Tensor::full({cfg.d_model}, 1.0, true);
        lw.wq = Tensor::randn({cfg.d_model, cfg.d_model}, rng, kInitStd, true);
        lw.wk = Tensor::randn({cfg.d_model, cfg.d_model}, rng, kInitStd, true);
        lw.wv = Tensor::randn({cfg.d_model, cfg.d_model}, rng, kInitStd, true);
        lw.wo = Tensor::randn({cfg.d_model, cfg.d_model}, rng, kInitStd, true);
        lw.mlp_norm = Tensor::full({cfg.d_model}, 1.0, true);
        lw.wgate = Tensor::randn({cfg.d_model, cfg.d_ff}, rng, kInitStd, true);
        lw.wup = Tensor::randn({cfg.d_model, cfg.d_ff}, rng, kInitStd, true);
        lw.wdown = Tensor::randn({cfg.d_ff, cfg.d_model}, rng, kInitStd, true);
    }
    m.final_norm_ = Tensor::full({cfg.d_model}, 1.0, true);
    m.head_ = Tensor::randn({cfg.d_model, cfg.vocab_size}, rng, kInitStd, true);
    return m;
}

DecoderModel DecoderModel::from_parts(ModelConfig cfg,
                                      std::vector<LayerWeights> layers,
                                      Tensor embed, Tensor pos,
                                      Tensor final_norm, Tensor head) {
    DecoderModel m;
    m.cfg_ = cfg;
    m.layers_ = std::move(layers);
    m.embed_ = std::move(embed);
    m.pos_ = std::move(pos);
    m.final_norm_ = std::move(final_norm);
    m.head_ = std::move(head);
    return m;
}

// (default constructor provided inline in the header)

const LoraAdapter* DecoderModel::adapter_for(const std::string& name) const {
    for (const LoraAdapter& a : adapters_)
        if (a.target == name) return &a;
    return nullptr;
}

Tensor DecoderModel::linear(const Tensor& x, const std::string& name,
                            const Tensor& w) const {
    Tensor out = matmul(x, w);
    if (const LoraAdapter* a = adapter_for(name)) {
        Tensor delta = matmul(matmul(x, a->gamma), a->beta);
        out = add(out, scale(delta, a->alpha / static_cast<double>(a->rank)));
    }
    return out;
}

Tensor DecoderModel::forward(const std::vector<int>& tokens) const {
    if (tokens.empty()) throw InputError("forward: empty token sequence");
    if (tokens.size() > cfg_.max_seq)
        throw InputError("forward: sequence of " +
                         std::to_string(tokens.size()) + " exceeds max_seq " +
                         std::to_string(cfg_.max_seq));
    for (int t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size)
            throw InputError("forward: token id " + std::to_string(t) +
                             " outside vocab of " +
                             std::to_string(cfg_.vocab_size));
    const std::size_t seq = tokens.size();
    const std::size_t hd = cfg_.head_dim;

    Tensor x = add(row_gather(embed_, tokens), row_gather(pos_, iota_ids(seq)));
    const Tensor mask = causal_mask(seq);

    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerWeights& lw = layers_[l];
        if (lw.n_heads > 0) {
            Tensor h = rms_norm(x, lw.attn_norm);
            Tensor q = linear(h, layer_param_name(l, "wq"), lw.wq);
            Tensor k = linear(h, layer_param_name(l, "wk"), lw.wk);
            Tensor v = linear(h, layer_param_name(l, "wv"), lw.wv);
            std::vector<Tensor> heads;
            heads.reserve(lw.n_heads);
            for (std::size_t hh = 0; hh < lw.n_heads; ++hh) {
                Tensor qh = slice_cols(q, hh * hd, (hh + 1) * hd);
                Tensor kh = slice_cols(k, hh * hd, (hh + 1) * hd);
                Tensor vh = slice_cols(v, hh * hd, (hh + 1) * hd);
                Tensor scores = scale(matmul(qh, transpose(kh)),
                                      1.0 / std::sqrt(static_cast<double>(hd)));
                Tensor weights = softmax(add(scores, mask), 1);
                heads.push_back(matmul(weights, vh));
            }
            Tensor attn =
                linear(concat_cols(heads), layer_param_name(l, "wo"), lw.wo);
            x = add(x, attn);
        }
        if (lw.d_ff > 0) {
            Tensor h = rms_norm(x, lw.mlp_norm);
            Tensor g = silu(linear(h, layer_param_name(l, "wgate"), lw.wgate));
            Tensor u = linear(h, layer_param_name(l, "wup"), lw.wup);
            Tensor down =
                linear(mul(g, u), layer_param_name(l, "wdown"), lw.wdown);
            x = add(x, down);
        }
    }
    return matmul(rms_norm(x, final_norm_), head_);
}

Tensor DecoderModel::loss(const std::vector<int>& tokens) const {
    if (tokens.size() < 2)
        throw InputError("loss: need at least 2 tokens for next-token targets");
    Tensor logits = forward(tokens);
    Tensor pred = slice_rows(logits, 0, tokens.size() - 1);
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    return cross_entropy(pred, targets);
}

std::vector<NamedParam> DecoderModel::named_parameters() const {
    std::vector<NamedParam> out;
    out.push_back({"embed", embed_});
    out.push_back({"pos", pos_});
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerWeights& lw = layers_[l];
        out.push_back({layer_param_name(l, "attn_norm"), lw.attn_norm});
        out.push_back({layer_param_name(l, "wq"), lw.wq});
        out.push_back({layer_param_name(l, "wk"), lw.wk});
        out.push_back({layer_param_name(l, "wv"), lw.wv});
        out.push_back({layer_param_name(l, "wo"), lw.wo});
        out.push_back({layer_param_name(l, "mlp_norm"), lw.mlp_norm});
        out.push_back({layer_param_name(l, "wgate"), lw.wgate});
        out.push_back({layer_param_name(l, "wup"), lw.wup});
        out.push_back({layer_param_name(l, "wdown"), lw.wdown});
    }
    out.push_back({"final_norm", final_norm_});
    out.push_back({"head", head_});
    for (const LoraAdapter& a : adapters_) {
        out.push_back({a.target + ".lora_gamma", a.gamma});
        out.push_back({a.target + ".lora_beta", a.beta});
    }
    return out;
}

Tensor DecoderModel::param(const std::string& name) const {
    for (const NamedParam& p : named_parameters())
        if (p.name == name) return p.tensor;
    throw InputError("param: no parameter named '" + name + "'");
}

std::size_t DecoderModel::parameter_count() const {
    std::size_t n = 0;
    for (const NamedParam& p : named_parameters()) n += p.tensor.numel();
    return n;
}

void DecoderModel::attach_lora(const std::vector<std::string>& roles,
                               std::size_t rank, double alpha, Rng& rng) {
    if (!adapters_.empty())
        throw ContractError("attach_lora: adapters already attached");
    if (rank < 1) throw InputError("attach_lora: rank must be >= 1");
    const bool all = std::find(roles.begin(), roles.end(), "all") != roles.end();
    auto wants = [&](const std::string& r) {
        return all || std::find(roles.begin(), roles.end(), r) != roles.end();
    };
    static const char* kRoles[] = {"wq", "wk", "wv", "wo", "wgate", "wup", "wdown"};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        LayerWeights& lw = layers_[l];
        Tensor* mats[] = {&lw.wq, &lw.wk, &lw.wv, &lw.wo,
                          &lw.wgate, &lw.wup, &lw.wdown};
        for (std::size_t r = 0; r < 7; ++r) {
            if (!wants(kRoles[r])) continue;
            Tensor& w = *mats[r];
            if (w.numel() == 0) continue;  // fully pruned matrix
            const std::size_t din = w.rows(), dout = w.cols();
            if (rank > std::min(din, dout))
                throw InputError("attach_lora: rank " + std::to_string(rank) +
                                 " exceeds min dim of " +
                                 shape_str(w.shape()));
            LoraAdapter a;
            a.target = layer_param_name(l, kRoles[r]);
            a.rank = rank;
            a.alpha = alpha;
            a.gamma = Tensor::randn({din, rank}, rng,
                                    1.0 / std::sqrt(static_cast<double>(din)),
                                    true);
            a.beta = Tensor::zeros({rank, dout}, true);
            w.set_requires_grad(false);  // frozen while adapted
            adapters_.push_back(std::move(a));
        }
    }
    if (adapters_.empty())
        throw InputError("attach_lora: selector matched no matrix");
}

bool DecoderModel::merge_lora() {
    if (adapters_.empty()) return false;
    for (LoraAdapter& a : adapters_) {
        // W += (alpha/rank) * gamma * beta
        Tensor w = param(a.target);
        std::vector<double> delta(w.numel(), 0.0);
        kernels::active().matmul_acc(delta.data(), a.gamma.data(),
                                     a.beta.data(), a.gamma.rows(), a.rank,
                                     a.beta.cols());
        kernels::active().axpy(w.data(),
                               a.alpha / static_cast<double>(a.rank),
                               delta.data(), w.numel());
        w.set_requires_grad(true);
    }
    adapters_.clear();
    return true;
}

void DecoderModel::drop_heads(std::size_t l,
                              const std::vector<std::size_t>& heads) {
    LayerWeights& lw = layers_[l];
    std::vector<std::size_t> cols;
    for (std::size_t h : heads) {
        if (h >= lw.n_heads)
            throw StructuralError("drop_heads: head " + std::to_string(h) +
                                  " out of " + std::to_string(lw.n_heads));
        for (std::size_t c = h * cfg_.head_dim; c < (h + 1) * cfg_.head_dim; ++c)
            cols.push_back(c);
    }
    lw.wq = drop_slices(lw.wq, 1, cols);
    lw.wk = drop_slices(lw.wk, 1, cols);
    lw.wv = drop_slices(lw.wv, 1, cols);
    lw.wo = drop_slices(lw.wo, 0, cols);
    lw.n_heads -= heads.size();
}

void DecoderModel::drop_mlp_channels(std::size_t l,
                                     const std::vector<std::size_t>& chans) {
    LayerWeights& lw = layers_[l];
    for (std::size_t c : chans)
        if (c >= lw.d_ff)
            throw StructuralError("drop_mlp_channels: channel " +
                                  std::to_string(c) + " out of " +
                                  std::to_string(lw.d_ff));
    lw.wgate = drop_slices(lw.wgate, 1, chans);
    lw.wup = drop_slices(lw.wup, 1, chans);
    lw.wdown = drop_slices(lw.wdown, 0, chans);
    lw.d_ff -= chans.size();
}

std::size_t mac_per_token_estimate(const DecoderModel& model) {
    const ModelConfig& cfg = model.config();
    const std::size_t dm = cfg.d_model;
    std::size_t macs = 0;
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        const std::size_t aw = model.attn_width(l);
        const std::size_t ff = model.layer(l).d_ff;
        macs += 3 * dm * aw;          // q, k, v projections
        macs += 2 * cfg.max_seq * aw; // scores and weighted value sum
        macs += aw * dm;              // output projection
        macs += 2 * dm * ff;          // gate and up
        macs += ff * dm;              // down
    }
    macs += dm * cfg.vocab_size;  // output head
    return macs;
}

DecoderModel DecoderModel::clone() const {
    DecoderModel m;
    m.cfg_ = cfg_;
    m.embed_ = embed_.clone();
    m.pos_ = pos_.clone();
    m.final_norm_ = final_norm_.clone();
    m.head_ = head_.clone();
    m.layers_.reserve(layers_.size());
    for (const LayerWeights& lw : layers_) {
        LayerWeights c;
        c.attn_norm = lw.attn_norm.clone();
        c.wq = lw.wq.clone();
        c.wk = lw.wk.clone();
        c.wv = lw.wv.clone();
        c.wo = lw.wo.clone();
        c.mlp_norm = lw.mlp_norm.clone();
        c.wgate = lw.wgate.clone();
        c.wup = lw.wup.clone();
        c.wdown = lw.wdown.clone();
        c.n_heads = lw.n_heads;
        c.d_ff = lw.d_ff;
        m.layers_.push_back(std::move(c));
    }
    for (const LoraAdapter& a : adapters_) {
        LoraAdapter c;
        c.target = a.target;
        c.gamma = a.gamma.clone();
        c.beta = a.beta.clone();
        c.rank = a.rank;
        c.alpha = a.alpha;
        m.adapters_.push_back(std::move(c));
    }
    return m;
}

}  // namespace hywia
