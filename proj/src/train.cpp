#include "hywia/train.hpp"

#include <cmath>

#include "hywia/errors.hpp"
#include "hywia/kernels.hpp"

namespace hywia {

namespace {

std::vector<int> sample_window(const std::vector<std::uint8_t>& stream,
                               std::size_t seq_len, Rng& rng) {
    const std::size_t len = std::min(seq_len, stream.size());
    const std::size_t start =
        stream.size() == len ? 0 : rng.index(stream.size() - len);
    std::vector<int> t(len);
    for (std::size_t i = 0; i < len; ++i) t[i] = stream[start + i];
    return t;
}

// Mean gradient over a batch of windows, accumulated by name.
struct BatchGrads {
    std::vector<NamedParam> grads;
    double mean_loss = 0.0;
};

BatchGrads batch_gradients(const DecoderModel& model,
                           const std::vector<NamedParam>& params,
                           const std::vector<std::uint8_t>& stream,
                           std::size_t batch, std::size_t seq_len, Rng& rng) {
    const auto& K = kernels::active();
    BatchGrads out;
    for (const NamedParam& p : params)
        out.grads.push_back({p.name, Tensor::zeros(p.tensor.shape())});
    GradientTape tape;
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::vector<int> window = sample_window(stream, seq_len, rng);
        {
            TapeScope scope(tape);
            Tensor loss = model.loss(window);
            out.mean_loss += loss.item() * inv_b;
            tape.backward(loss);
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!tape.has_grad(params[i].tensor)) continue;
            const Tensor& g = tape.grad(params[i].tensor);
            K.axpy(out.grads[i].tensor.data(), inv_b, g.data(), g.numel());
        }
        tape.clear();
    }
    return out;
}

double mean_grad_norm(const std::vector<NamedParam>& grads) {
    if (grads.empty()) return 0.0;
    double total = 0.0;
    for (const NamedParam& g : grads) {
        double sq = 0.0;
        for (std::size_t i = 0; i < g.tensor.numel(); ++i)
            sq += g.tensor.data()[i] * g.tensor.data()[i];
        total += std::sqrt(sq);
    }
    return total / static_cast<double>(grads.size());
}

}  // namespace

void SgdMomentum::step(const std::vector<NamedParam>& params,
                       const GradientTape& tape) {
    const auto& K = kernels::active();
    for (const NamedParam& p : params) {
        if (!p.tensor.requires_grad() || !tape.has_grad(p.tensor)) continue;
        const Tensor& g = tape.grad(p.tensor);
        auto& vel = velocity_[p.name];
        if (vel.size() != g.numel()) vel.assign(g.numel(), 0.0);
        Tensor w = p.tensor;
        K.sgd_momentum(w.data(), vel.data(), g.data(), g.numel(), lr_,
                       momentum_);
    }
}

void Adam::step(const std::vector<NamedParam>& params,
                const GradientTape& tape) {
    const auto& K = kernels::active();
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const double lr_t = lr_ * std::sqrt(bc2) / bc1;
    for (const NamedParam& p : params) {
        if (!p.tensor.requires_grad() || !tape.has_grad(p.tensor)) continue;
        const Tensor& g = tape.grad(p.tensor);
        auto& m = m_[p.name];
        auto& v = v_[p.name];
        if (m.size() != g.numel()) m.assign(g.numel(), 0.0);
        if (v.size() != g.numel()) v.assign(g.numel(), 0.0);
        Tensor w = p.tensor;
        K.adam(w.data(), m.data(), v.data(), g.data(), g.numel(), lr_t, beta1_,
               beta2_, eps_);
    }
}

void Adam::step(const std::vector<NamedParam>& params,
                const std::vector<NamedParam>& grads) {
    const auto& K = kernels::active();
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const double lr_t = lr_ * std::sqrt(bc2) / bc1;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& g = grads[i].tensor;
        auto& m = m_[params[i].name];
        auto& v = v_[params[i].name];
        if (m.size() != g.numel()) m.assign(g.numel(), 0.0);
        if (v.size() != g.numel()) v.assign(g.numel(), 0.0);
        Tensor w = params[i].tensor;
        K.adam(w.data(), m.data(), v.data(), g.data(), g.numel(), lr_t, beta1_,
               beta2_, eps_);
    }
}

TrainStats pretrain(DecoderModel& model, const std::vector<std::uint8_t>& stream,
                    std::size_t steps, double lr, double momentum,
                    std::size_t batch, std::size_t seq_len, Rng& rng) {
    if (steps < 1) throw InputError("pretrain: steps must be >= 1");
    if (batch < 1) throw InputError("pretrain: batch must be >= 1");
    const auto& K = kernels::active();
    const auto params = model.named_parameters();
    std::unordered_map<std::string, std::vector<double>> velocity;

    TrainStats stats;
    stats.steps = steps;
    BatchGrads last;
    for (std::size_t step = 0; step < steps; ++step) {
        last = batch_gradients(model, params, stream, batch, seq_len, rng);
        if (!std::isfinite(last.mean_loss))
            throw TrainingError("pretrain: loss diverged at step " +
                                std::to_string(step));
        if (step == 0) stats.initial_loss = last.mean_loss;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Tensor& g = last.grads[i].tensor;
            auto& vel = velocity[params[i].name];
            if (vel.size() != g.numel()) vel.assign(g.numel(), 0.0);
            Tensor w = params[i].tensor;
            K.sgd_momentum(w.data(), vel.data(), g.data(), g.numel(), lr,
                           momentum);
        }
        stats.final_loss = last.mean_loss;
    }
    stats.final_grad_norm = mean_grad_norm(last.grads);
    return stats;
}

TrainStats lora_finetune(DecoderModel& model,
                         const std::vector<std::uint8_t>& stream,
                         std::size_t steps, double lr, std::size_t batch,
                         std::size_t seq_len, Rng& rng) {
    if (!model.has_adapters())
        throw ContractError("lora_finetune: no adapters attached");
    if (steps < 1) throw InputError("lora_finetune: steps must be >= 1");
    const auto& K = kernels::active();

    // Freeze everything that is not an adapter; restore on exit.
    const auto all_params = model.named_parameters();
    std::vector<std::string> unfrozen;
    for (const NamedParam& p : all_params) {
        const bool is_adapter = p.name.find(".lora_") != std::string::npos;
        if (!is_adapter && p.tensor.requires_grad()) {
            Tensor t = p.tensor;
            t.set_requires_grad(false);
            unfrozen.push_back(p.name);
        }
    }
    std::vector<NamedParam> adapter_params;
    for (const NamedParam& p : all_params)
        if (p.name.find(".lora_") != std::string::npos)
            adapter_params.push_back(p);

    Adam opt(lr);
    GradientTape tape;
    TrainStats stats;
    stats.steps = steps;
    const double inv_b = 1.0 / static_cast<double>(batch);
    std::vector<NamedParam> grads;
    for (const NamedParam& p : adapter_params)
        grads.push_back({p.name, Tensor::zeros(p.tensor.shape())});

    for (std::size_t step = 0; step < steps; ++step) {
        double mean_loss = 0.0;
        for (NamedParam& g : grads)
            std::fill(g.tensor.vec().begin(), g.tensor.vec().end(), 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::vector<int> window = sample_window(stream, seq_len, rng);
            {
                TapeScope scope(tape);
                Tensor loss = model.loss(window);
                mean_loss += loss.item() * inv_b;
                tape.backward(loss);
            }
            for (std::size_t i = 0; i < adapter_params.size(); ++i) {
                if (!tape.has_grad(adapter_params[i].tensor)) continue;
                const Tensor& g = tape.grad(adapter_params[i].tensor);
                K.axpy(grads[i].tensor.data(), inv_b, g.data(), g.numel());
            }
            tape.clear();
        }
        if (!std::isfinite(mean_loss))
            throw TrainingError("lora_finetune: loss diverged at step " +
                                std::to_string(step));
        if (step == 0) stats.initial_loss = mean_loss;
        stats.final_loss = mean_loss;
        opt.step(adapter_params, grads);
    }

    for (const std::string& name : unfrozen) {
        Tensor t = model.param(name);
        t.set_requires_grad(true);
    }
    stats.final_grad_norm = mean_grad_norm(grads);
    return stats;
}

}  // namespace hywia
