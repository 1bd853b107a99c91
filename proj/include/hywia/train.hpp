// Optimizers and the two training loops: SGD-with-momentum pretraining on
// next-token loss, and Adam over LoRA adapter weights only.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hywia/corpus.hpp"
#include "hywia/model.hpp"

namespace hywia {

class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
    void step(const std::vector<NamedParam>& params, const GradientTape& tape);

private:
    double lr_, momentum_;
    std::unordered_map<std::string, std::vector<double>> velocity_;
};

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const std::vector<NamedParam>& params, const GradientTape& tape);
    // Index-aligned explicit gradients (e.g. batch means).
    void step(const std::vector<NamedParam>& params,
              const std::vector<NamedParam>& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::unordered_map<std::string, std::vector<double>> m_, v_;
};

struct TrainStats {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double final_grad_norm = 0.0;  // mean L2 norm over parameters
    std::size_t steps = 0;
};

// Gradient descent with momentum on next-token cross-entropy over windows
// sampled from the stream. Throws TrainingError (with the step index) when
// the loss turns non-finite.
TrainStats pretrain(DecoderModel& model, const std::vector<std::uint8_t>& stream,
                    std::size_t steps, double lr, double momentum,
                    std::size_t batch, std::size_t seq_len, Rng& rng);

// Adam over adapter parameters only. The model must have adapters attached;
// everything else is frozen for the duration and restored afterwards.
TrainStats lora_finetune(DecoderModel& model,
                         const std::vector<std::uint8_t>& stream,
                         std::size_t steps, double lr, std::size_t batch,
                         std::size_t seq_len, Rng& rng);

}  // namespace hywia
