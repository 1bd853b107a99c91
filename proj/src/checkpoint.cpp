#include "hywia/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "hywia/errors.hpp"

namespace hywia {

namespace {

using nlohmann::json;

void write_f64_le(std::ofstream& os, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(p[i]);
        unsigned char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

void read_f64_le(std::ifstream& is, double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
        p[i] = std::bit_cast<double>(bits);
    }
}

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                {"head_dim", c.head_dim},     {"d_ff", c.d_ff},
                {"max_seq", c.max_seq},       {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size");
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.head_dim = j.at("head_dim");
    c.d_ff = j.at("d_ff");
    c.max_seq = j.at("max_seq");
    c.seed = j.at("seed");
    return c;
}

}  // namespace

void save_checkpoint(const DecoderModel& model, const std::string& prefix) {
    if (model.has_adapters())
        throw ContractError("save_checkpoint: merge adapters before saving");
    json manifest;
    manifest["format"] = "hywia-checkpoint-v1";
    manifest["config"] = config_to_json(model.config());
    json dims = json::array();
    for (std::size_t l = 0; l < model.n_layers(); ++l)
        dims.push_back(json{{"n_heads", model.layer(l).n_heads},
                            {"d_ff", model.layer(l).d_ff}});
    manifest["layer_dims"] = dims;

    json tensors = json::array();
    std::ofstream bin(prefix + ".bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw InputError("save_checkpoint: cannot write " + prefix + ".bin");
    std::size_t offset = 0;
    for (const NamedParam& p : model.named_parameters()) {
        json t;
        t["name"] = p.name;
        t["shape"] = p.tensor.shape();
        t["offset"] = offset;
        t["bytes"] = p.tensor.numel() * 8;
        tensors.push_back(t);
        write_f64_le(bin, p.tensor.data(), p.tensor.numel());
        offset += p.tensor.numel() * 8;
    }
    manifest["tensors"] = tensors;
    std::ofstream mf(prefix + ".json", std::ios::trunc);
    if (!mf) throw InputError("save_checkpoint: cannot write " + prefix + ".json");
    mf << manifest.dump(2) << "\n";
}

DecoderModel load_checkpoint(const std::string& prefix) {
    std::ifstream mf(prefix + ".json");
    if (!mf) throw InputError("load_checkpoint: cannot read " + prefix + ".json");
    json manifest = json::parse(mf);
    if (manifest.at("format") != "hywia-checkpoint-v1")
        throw InputError("load_checkpoint: unknown format in " + prefix);
    ModelConfig cfg = config_from_json(manifest.at("config"));

    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw InputError("load_checkpoint: cannot read " + prefix + ".bin");

    std::vector<LayerWeights> layers(cfg.n_layers);
    const json& dims = manifest.at("layer_dims");
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        layers[l].n_heads = dims.at(l).at("n_heads");
        layers[l].d_ff = dims.at(l).at("d_ff");
    }
    Tensor embed, pos, final_norm, head;

    for (const json& t : manifest.at("tensors")) {
        const std::string name = t.at("name");
        Shape shape = t.at("shape").get<Shape>();
        Tensor tensor = Tensor::zeros(shape, true);
        bin.seekg(static_cast<std::streamoff>(t.at("offset").get<std::size_t>()));
        read_f64_le(bin, tensor.data(), tensor.numel());
        if (name == "embed") {
            embed = tensor;
        } else if (name == "pos") {
            pos = tensor;
        } else if (name == "final_norm") {
            final_norm = tensor;
        } else if (name == "head") {
            head = tensor;
        } else if (name.rfind("layers.", 0) == 0) {
            const std::size_t dot = name.find('.', 7);
            const std::size_t l = std::stoul(name.substr(7, dot - 7));
            const std::string role = name.substr(dot + 1);
            if (l >= layers.size())
                throw StructuralError("load_checkpoint: layer index in '" +
                                      name + "' out of range");
            LayerWeights& lw = layers[l];
            if (role == "attn_norm") lw.attn_norm = tensor;
            else if (role == "wq") lw.wq = tensor;
            else if (role == "wk") lw.wk = tensor;
            else if (role == "wv") lw.wv = tensor;
            else if (role == "wo") lw.wo = tensor;
            else if (role == "mlp_norm") lw.mlp_norm = tensor;
            else if (role == "wgate") lw.wgate = tensor;
            else if (role == "wup") lw.wup = tensor;
            else if (role == "wdown") lw.wdown = tensor;
            else throw StructuralError("load_checkpoint: unknown role '" + role + "'");
        } else {
            throw StructuralError("load_checkpoint: unknown tensor '" + name + "'");
        }
    }
    return DecoderModel::from_parts(cfg, std::move(layers), std::move(embed),
                                    std::move(pos), std::move(final_norm),
                                    std::move(head));
}

void save_accumulator(const GradAccumulator& acc, const std::string& prefix) {
    json manifest;
    manifest["format"] = "hywia-accumulator-v1";
    manifest["sample_count"] = acc.sample_count;
    json tensors = json::array();
    std::ofstream bin(prefix + ".bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw InputError("save_accumulator: cannot write " + prefix + ".bin");
    std::size_t offset = 0;
    auto dump = [&](const char* tag, const std::vector<NamedParam>& params) {
        for (const NamedParam& p : params) {
            json t;
            t["name"] = std::string(tag) + "." + p.name;
            t["shape"] = p.tensor.shape();
            t["offset"] = offset;
            t["bytes"] = p.tensor.numel() * 8;
            tensors.push_back(t);
            write_f64_le(bin, p.tensor.data(), p.tensor.numel());
            offset += p.tensor.numel() * 8;
        }
    };
    dump("sum", acc.sum);
    dump("sum_sq", acc.sum_sq);
    manifest["tensors"] = tensors;
    std::ofstream mf(prefix + ".json", std::ios::trunc);
    if (!mf) throw InputError("save_accumulator: cannot write " + prefix + ".json");
    mf << manifest.dump(2) << "\n";
}

GradAccumulator load_accumulator(const std::string& prefix) {
    std::ifstream mf(prefix + ".json");
    if (!mf) throw InputError("load_accumulator: cannot read " + prefix + ".json");
    json manifest = json::parse(mf);
    if (manifest.at("format") != "hywia-accumulator-v1")
        throw InputError("load_accumulator: unknown format in " + prefix);
    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw InputError("load_accumulator: cannot read " + prefix + ".bin");
    GradAccumulator acc;
    acc.sample_count = manifest.at("sample_count");
    for (const json& t : manifest.at("tensors")) {
        const std::string name = t.at("name");
        Tensor tensor = Tensor::zeros(t.at("shape").get<Shape>());
        bin.seekg(static_cast<std::streamoff>(t.at("offset").get<std::size_t>()));
        read_f64_le(bin, tensor.data(), tensor.numel());
        if (name.rfind("sum_sq.", 0) == 0)
            acc.sum_sq.push_back({name.substr(7), tensor});
        else if (name.rfind("sum.", 0) == 0)
            acc.sum.push_back({name.substr(4), tensor});
        else
            throw StructuralError("load_accumulator: unknown tensor '" + name + "'");
    }
    return acc;
}

std::size_t checkpoint_param_count(const std::string& prefix) {
    std::ifstream mf(prefix + ".json");
    if (!mf) throw InputError("checkpoint_param_count: cannot read " + prefix + ".json");
    json manifest = json::parse(mf);
    std::size_t n = 0;
    for (const json& t : manifest.at("tensors")) {
        std::size_t e = 1;
        for (std::size_t d : t.at("shape").get<Shape>()) e *= d;
        n += e;
    }
    return n;
}

}  // namespace hywia
