// Dense fp64 tensors with a define-by-run reverse-mode tape. The op set is
// exactly what the decoder model and the importance pipeline need; no
// broadcasting, no views, row-major storage throughout.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hywia/rng.hpp"

namespace hywia {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {
struct TensorData {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    bool tracked = false;  // participates in the active tape's graph
    std::uint64_t id = 0;
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev,
                        bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::size_t numel() const { return d_->data.size(); }
    std::size_t rank() const { return d_->shape.size(); }

    // rank-2 helpers
    std::size_t rows() const { return d_->shape[0]; }
    std::size_t cols() const { return d_->shape[1]; }

    double* data() { return d_->data.data(); }
    const double* data() const { return d_->data.data(); }
    std::vector<double>& vec() { return d_->data; }
    const std::vector<double>& vec() const { return d_->data; }

    double item() const;  // scalar tensors only
    double at(std::size_t i, std::size_t j) const {
        return d_->data[i * cols() + j];
    }
    double& at(std::size_t i, std::size_t j) {
        return d_->data[i * cols() + j];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v);
    bool tracked() const { return d_ && d_->tracked; }
    void set_tracked(bool v) { d_->tracked = v; }

    std::uint64_t id() const { return d_->id; }

    // Deep copy with a fresh identity, never tracked.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<detail::TensorData> d_;

    friend class GradientTape;
};

// Records the backward closures of ops executed while active. Single
// threaded; independent tapes over disjoint tensors may run on different
// threads (the active-tape pointer is thread local).
class GradientTape {
public:
    using BackFn = std::function<void(GradientTape&)>;

    // Runs reverse accumulation from a scalar loss. Populates the gradient
    // map (every requires_grad leaf that participated gets an entry, zero if
    // the loss does not depend on it) and clears the recorded nodes so the
    // tape can record a fresh forward pass.
    void backward(const Tensor& loss);

    bool has_grad(const Tensor& t) const;
    const Tensor& grad(const Tensor& t) const;

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t gradient_count() const { return grads_.size(); }
    void clear();

    // --- used by op implementations ---
    void record(BackFn fn, std::initializer_list<Tensor> leaf_candidates);
    void record(BackFn fn, const std::vector<Tensor>& leaf_candidates);
    const Tensor* find_grad(std::uint64_t id) const;
    // Returns the gradient buffer for t, creating a zero tensor on first use.
    Tensor& grad_slot(const Tensor& t);

private:
    std::vector<BackFn> nodes_;
    std::unordered_map<std::uint64_t, Tensor> grads_;
    std::vector<std::pair<std::uint64_t, Tensor>> leaves_;
    std::unordered_set<std::uint64_t> leaf_seen_;
};

class TapeScope {
public:
    explicit TapeScope(GradientTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradientTape* prev_;
};

namespace detail {
GradientTape* active_tape();
}

// --- ops ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor row_gather(const Tensor& table, const std::vector<int>& ids);
Tensor softmax(const Tensor& x, int axis);
Tensor rms_norm(const Tensor& x, const Tensor& scale_vec, double eps = 1e-6);
Tensor silu(const Tensor& x);
Tensor sum(const Tensor& x);
// Mean next-token negative log-likelihood. Logits may be rank >= 2; all
// leading axes are flattened, the last axis is the vocabulary.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

}  // namespace hywia
