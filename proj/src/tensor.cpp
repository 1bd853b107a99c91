#include "hywia/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "hywia/errors.hpp"
#include "hywia/kernels.hpp"

namespace hywia {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

thread_local GradientTape* g_active_tape = nullptr;

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::shared_ptr<detail::TensorData> make_data(Shape shape, bool requires_grad) {
    auto d = std::make_shared<detail::TensorData>();
    d->data.assign(shape_numel(shape), 0.0);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    d->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return d;
}

const kernels::KernelTable& K() { return kernels::active(); }

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                             shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

bool taping(const Tensor& t) {
    return g_active_tape != nullptr && (t.tracked() || t.requires_grad());
}

// Transposes a row-major m x n buffer into out (n x m).
void transpose_buf(const double* in, double* out, std::size_t m,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << " x ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

// --- Tensor ---

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(make_data(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t(make_data(std::move(shape), requires_grad));
    std::fill(t.vec().begin(), t.vec().end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("from_data: shape " + shape_str(shape) +
                             " does not match data length " +
                             std::to_string(data.size()));
    Tensor t(make_data(std::move(shape), requires_grad));
    t.vec() = std::move(data);
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t(make_data(std::move(shape), requires_grad));
    for (double& v : t.vec()) v = rng.normal() * stddev;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1)
        throw ContractError("item(): tensor is not scalar, shape " +
                            shape_str(shape()));
    return d_->data[0];
}

void Tensor::set_requires_grad(bool v) { d_->requires_grad = v; }

Tensor Tensor::clone() const {
    Tensor t(make_data(d_->shape, d_->requires_grad));
    t.vec() = d_->data;
    return t;
}

// --- GradientTape ---

void GradientTape::record(BackFn fn,
                          std::initializer_list<Tensor> leaf_candidates) {
    nodes_.push_back(std::move(fn));
    for (const Tensor& t : leaf_candidates) {
        if (t.requires_grad() && leaf_seen_.insert(t.id()).second)
            leaves_.emplace_back(t.id(), t);
    }
}

void GradientTape::record(BackFn fn, const std::vector<Tensor>& leaf_candidates) {
    nodes_.push_back(std::move(fn));
    for (const Tensor& t : leaf_candidates) {
        if (t.requires_grad() && leaf_seen_.insert(t.id()).second)
            leaves_.emplace_back(t.id(), t);
    }
}

const Tensor* GradientTape::find_grad(std::uint64_t id) const {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
}

Tensor& GradientTape::grad_slot(const Tensor& t) {
    auto it = grads_.find(t.id());
    if (it == grads_.end())
        it = grads_.emplace(t.id(), Tensor::zeros(t.shape())).first;
    return it->second;
}

void GradientTape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError(
            "backward: loss must be a scalar tensor, got " +
            (loss.defined() ? shape_str(loss.shape()) : std::string("null")));
    grads_.clear();
    grads_.emplace(loss.id(), Tensor::full(loss.shape(), 1.0));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
    // Leaves untouched by the loss still get a (zero) gradient entry.
    for (auto& [id, t] : leaves_) {
        if (grads_.find(id) == grads_.end())
            grads_.emplace(id, Tensor::zeros(t.shape()));
    }
    nodes_.clear();
    leaves_.clear();
    leaf_seen_.clear();
}

bool GradientTape::has_grad(const Tensor& t) const {
    return grads_.count(t.id()) != 0;
}

const Tensor& GradientTape::grad(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end())
        throw ContractError("grad: no gradient recorded for tensor id " +
                            std::to_string(t.id()));
    return it->second;
}

void GradientTape::clear() {
    nodes_.clear();
    grads_.clear();
    leaves_.clear();
    leaf_seen_.clear();
}

TapeScope::TapeScope(GradientTape& tape) : prev_(g_active_tape) {
    g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

namespace detail {
GradientTape* active_tape() { return g_active_tape; }
}

// --- ops ---

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    K().add(out.data(), a.data(), b.data(), out.numel());
    if (taping(a) || taping(b)) {
        out.set_tracked(true);
        const bool ga = taping(a), gb = taping(b);
        g_active_tape->record(
            [a, b, out, ga, gb](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                if (ga) K().axpy(t.grad_slot(a).data(), 1.0, go->data(), go->numel());
                if (gb) K().axpy(t.grad_slot(b).data(), 1.0, go->data(), go->numel());
            },
            {a, b});
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    K().sub(out.data(), a.data(), b.data(), out.numel());
    if (taping(a) || taping(b)) {
        out.set_tracked(true);
        const bool ga = taping(a), gb = taping(b);
        g_active_tape->record(
            [a, b, out, ga, gb](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                if (ga) K().axpy(t.grad_slot(a).data(), 1.0, go->data(), go->numel());
                if (gb) K().axpy(t.grad_slot(b).data(), -1.0, go->data(), go->numel());
            },
            {a, b});
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    K().mul(out.data(), a.data(), b.data(), out.numel());
    if (taping(a) || taping(b)) {
        out.set_tracked(true);
        const bool ga = taping(a), gb = taping(b);
        g_active_tape->record(
            [a, b, out, ga, gb](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                const std::size_t n = go->numel();
                std::vector<double> tmp(n);
                if (ga) {
                    K().mul(tmp.data(), go->data(), b.data(), n);
                    K().axpy(t.grad_slot(a).data(), 1.0, tmp.data(), n);
                }
                if (gb) {
                    K().mul(tmp.data(), go->data(), a.data(), n);
                    K().axpy(t.grad_slot(b).data(), 1.0, tmp.data(), n);
                }
            },
            {a, b});
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    K().scale(out.data(), c, a.data(), out.numel());
    if (taping(a)) {
        out.set_tracked(true);
        g_active_tape->record(
            [a, out, c](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                K().axpy(t.grad_slot(a).data(), c, go->data(), go->numel());
            },
            {a});
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions disagree: " +
                             shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    K().matmul_acc(out.data(), a.data(), b.data(), m, k, n);
    if (taping(a) || taping(b)) {
        out.set_tracked(true);
        const bool ga = taping(a), gb = taping(b);
        g_active_tape->record(
            [a, b, out, ga, gb, m, k, n](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                if (ga) {
                    // dA += dY * B^T
                    std::vector<double> bt(k * n);
                    transpose_buf(b.data(), bt.data(), k, n);
                    K().matmul_acc(t.grad_slot(a).data(), go->data(), bt.data(),
                                   m, n, k);
                }
                if (gb) {
                    // dB += A^T * dY
                    std::vector<double> at(m * k);
                    transpose_buf(a.data(), at.data(), m, k);
                    K().matmul_acc(t.grad_slot(b).data(), at.data(), go->data(),
                                   k, m, n);
                }
            },
            {a, b});
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros({n, m});
    transpose_buf(a.data(), out.data(), m, n);
    if (taping(a)) {
        out.set_tracked(true);
        g_active_tape->record(
            [a, out, m, n](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                Tensor& ga = t.grad_slot(a);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j)
                        ga.data()[j * n + i] += go->data()[i * m + j];
            },
            {a});
    }
    return out;
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    require_rank2(a, "slice_cols");
    if (c0 > c1 || c1 > a.cols())
        throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " +
                             std::to_string(c1) + ") out of " +
                             shape_str(a.shape()));
    const std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
    Tensor out = Tensor::zeros({m, w});
    for (std::size_t i = 0; i < m; ++i)
        std::copy(a.data() + i * n + c0, a.data() + i * n + c1,
                  out.data() + i * w);
    if (taping(a)) {
        out.set_tracked(true);
        g_active_tape->record(
            [a, out, c0, m, n, w](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                Tensor& ga = t.grad_slot(a);
                for (std::size_t i = 0; i < m; ++i)
                    K().axpy(ga.data() + i * n + c0, 1.0, go->data() + i * w, w);
            },
            {a});
    }
    return out;
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    require_rank2(a, "slice_rows");
    if (r0 > r1 || r1 > a.rows())
        throw DimensionError("slice_rows: range [" + std::to_string(r0) + ", " +
                             std::to_string(r1) + ") out of " +
                             shape_str(a.shape()));
    const std::size_t n = a.cols(), h = r1 - r0;
    Tensor out = Tensor::zeros({h, n});
    std::copy(a.data() + r0 * n, a.data() + r1 * n, out.data());
    if (taping(a)) {
        out.set_tracked(true);
        g_active_tape->record(
            [a, out, r0, n, h](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                K().axpy(t.grad_slot(a).data() + r0 * n, 1.0, go->data(), h * n);
            },
            {a});
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InputError("concat_cols: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != m)
            throw DimensionError("concat_cols: row mismatch " +
                                 shape_str(parts[0].shape()) + " vs " +
                                 shape_str(p.shape()));
        total += p.cols();
    }
    Tensor out = Tensor::zeros({m, total});
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            std::copy(p.data() + i * p.cols(), p.data() + (i + 1) * p.cols(),
                      out.data() + i * total + off);
        off += p.cols();
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || taping(p);
    if (any) {
        out.set_tracked(true);
        std::vector<Tensor> held = parts;
        g_active_tape->record(
            [held, out, m, total](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                std::size_t off2 = 0;
                for (const Tensor& p : held) {
                    const std::size_t w = p.cols();
                    if (p.tracked() || p.requires_grad()) {
                        Tensor& gp = t.grad_slot(p);
                        for (std::size_t i = 0; i < m; ++i)
                            K().axpy(gp.data() + i * w, 1.0,
                                     go->data() + i * total + off2, w);
                    }
                    off2 += w;
                }
            },
            parts);
    }
    return out;
}

Tensor row_gather(const Tensor& table, const std::vector<int>& ids) {
    require_rank2(table, "row_gather");
    const std::size_t n = table.cols();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
            throw InputError("row_gather: index " + std::to_string(id) +
                             " out of " + std::to_string(table.rows()) +
                             " rows");
    Tensor out = Tensor::zeros({ids.size(), n});
    for (std::size_t r = 0; r < ids.size(); ++r)
        std::copy(table.data() + static_cast<std::size_t>(ids[r]) * n,
                  table.data() + (static_cast<std::size_t>(ids[r]) + 1) * n,
                  out.data() + r * n);
    if (taping(table)) {
        out.set_tracked(true);
        g_active_tape->record(
            [table, out, ids, n](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                Tensor& gt = t.grad_slot(table);
                for (std::size_t r = 0; r < ids.size(); ++r)
                    K().axpy(gt.data() + static_cast<std::size_t>(ids[r]) * n,
                             1.0, go->data() + r * n, n);
            },
            {table});
    }
    return out;
}

namespace {

// Decomposes shape into outer * axis_len * inner for slice-wise ops.
void axis_decompose(const Shape& s, int axis, std::size_t& outer,
                    std::size_t& len, std::size_t& inner) {
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw DimensionError("softmax: axis " + std::to_string(axis) +
                             " out of rank " + std::to_string(s.size()));
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    len = s[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i)
        inner *= s[i];
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    std::size_t outer, len, inner;
    axis_decompose(x.shape(), axis, outer, len, inner);
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = -HUGE_VAL;
            for (std::size_t i = 0; i < len; ++i)
                mx = std::max(mx, x.data()[base + i * inner]);
            double denom = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                const double e = std::exp(x.data()[base + i * inner] - mx);
                out.data()[base + i * inner] = e;
                denom += e;
            }
            for (std::size_t i = 0; i < len; ++i)
                out.data()[base + i * inner] /= denom;
        }
    }
    if (taping(x)) {
        out.set_tracked(true);
        g_active_tape->record(
            [x, out, outer, len, inner](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                Tensor& gx = t.grad_slot(x);
                for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t in = 0; in < inner; ++in) {
                        const std::size_t base = o * len * inner + in;
                        double dot = 0.0;
                        for (std::size_t i = 0; i < len; ++i)
                            dot += go->data()[base + i * inner] *
                                   out.data()[base + i * inner];
                        for (std::size_t i = 0; i < len; ++i) {
                            const std::size_t k = base + i * inner;
                            gx.data()[k] +=
                                out.data()[k] * (go->data()[k] - dot);
                        }
                    }
                }
            },
            {x});
    }
    return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& scale_vec, double eps) {
    require_rank2(x, "rms_norm");
    if (scale_vec.numel() != x.cols())
        throw DimensionError("rms_norm: scale length " +
                             std::to_string(scale_vec.numel()) +
                             " does not match " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> rms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double ms = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = x.data()[i * n + j];
            ms += v * v;
        }
        const double r = std::sqrt(ms / static_cast<double>(n) + eps);
        rms[i] = r;
        for (std::size_t j = 0; j < n; ++j)
            out.data()[i * n + j] = x.data()[i * n + j] * scale_vec.data()[j] / r;
    }
    if (taping(x) || taping(scale_vec)) {
        out.set_tracked(true);
        const bool gx_on = taping(x), gs_on = taping(scale_vec);
        g_active_tape->record(
            [x, scale_vec, out, rms, m, n, gx_on, gs_on](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                Tensor* gx = gx_on ? &t.grad_slot(x) : nullptr;
                Tensor* gs = gs_on ? &t.grad_slot(scale_vec) : nullptr;
                for (std::size_t i = 0; i < m; ++i) {
                    const double r = rms[i];
                    double dot = 0.0;  // sum_k g_ik * s_k * x_ik
                    for (std::size_t j = 0; j < n; ++j)
                        dot += go->data()[i * n + j] * scale_vec.data()[j] *
                               x.data()[i * n + j];
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = go->data()[i * n + j];
                        const double xv = x.data()[i * n + j];
                        if (gx)
                            gx->data()[i * n + j] +=
                                g * scale_vec.data()[j] / r -
                                xv * dot / (static_cast<double>(n) * r * r * r);
                        if (gs) gs->data()[j] += g * xv / r;
                    }
                }
            },
            {x, scale_vec});
    }
    return out;
}

Tensor silu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    std::vector<double> sig(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x.data()[i]));
        sig[i] = s;
        out.data()[i] = x.data()[i] * s;
    }
    if (taping(x)) {
        out.set_tracked(true);
        g_active_tape->record(
            [x, out, sig, n](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                Tensor& gx = t.grad_slot(x);
                for (std::size_t i = 0; i < n; ++i) {
                    const double s = sig[i];
                    gx.data()[i] += go->data()[i] *
                                    (s * (1.0 + x.data()[i] * (1.0 - s)));
                }
            },
            {x});
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) total += x.data()[i];
    Tensor out = Tensor::scalar(total);
    if (taping(x)) {
        out.set_tracked(true);
        g_active_tape->record(
            [x, out](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                Tensor& gx = t.grad_slot(x);
                const double g = go->data()[0];
                for (std::size_t i = 0; i < gx.numel(); ++i) gx.data()[i] += g;
            },
            {x});
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.rank() < 2)
        throw DimensionError("cross_entropy: logits must be rank >= 2, got " +
                             shape_str(logits.shape()));
    const std::size_t vocab = logits.shape().back();
    const std::size_t rows = logits.numel() / vocab;
    if (targets.size() != rows)
        throw InputError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " positions");
    for (int tgt : targets)
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab)
            throw InputError("cross_entropy: target id " + std::to_string(tgt) +
                             " outside vocab of " + std::to_string(vocab));
    std::vector<double> probs(rows * vocab);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = logits.data() + r * vocab;
        double mx = row[0];
        for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
        double denom = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
            const double e = std::exp(row[v] - mx);
            probs[r * vocab + v] = e;
            denom += e;
        }
        for (std::size_t v = 0; v < vocab; ++v) probs[r * vocab + v] /= denom;
        const double lse = mx + std::log(denom);
        loss += lse - row[static_cast<std::size_t>(targets[r])];
    }
    loss /= static_cast<double>(rows);
    Tensor out = Tensor::scalar(loss);
    if (taping(logits)) {
        out.set_tracked(true);
        g_active_tape->record(
            [logits, out, probs, targets, rows, vocab](GradientTape& t) {
                const Tensor* go = t.find_grad(out.id());
                if (!go) return;
                const double g = go->data()[0] / static_cast<double>(rows);
                Tensor& gl = t.grad_slot(logits);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t v = 0; v < vocab; ++v)
                        gl.data()[r * vocab + v] += g * probs[r * vocab + v];
                    gl.data()[r * vocab + static_cast<std::size_t>(targets[r])] -= g;
                }
            },
            {logits});
    }
    return out;
}

}  // namespace hywia
