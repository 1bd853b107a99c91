#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "hywia/errors.hpp"
#include "hywia/tensor.hpp"

using namespace hywia;

namespace {

// Triple-loop reference for the matmul oracle.
std::vector<double> matmul_ref(const std::vector<double>& a,
                               const std::vector<double>& b, std::size_t m,
                               std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p)
                c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

}  // namespace

TEST_CASE("matmul identity cases") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor left = matmul(eye, a);
    Tensor right = matmul(a, eye);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(left.data()[i] == a.data()[i]);
        CHECK(right.data()[i] == a.data()[i]);
    }
}

TEST_CASE("matmul matches the triple-loop oracle within 1e-12") {
    Rng rng(42);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0);
    Tensor c = matmul(a, b);
    const auto ref = matmul_ref(a.vec(), b.vec(), 3, 4, 2);
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(std::fabs(c.data()[i] - ref[i]) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({3, 4});
    Tensor b = Tensor::zeros({5, 2});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3 x 4]") != std::string::npos);
        CHECK(msg.find("[5 x 2]") != std::string::npos);
    }
}

TEST_CASE("softmax basics") {
    SUBCASE("uniform on equal inputs") {
        Tensor x = Tensor::from_data({3}, {0, 0, 0});
        Tensor y = softmax(x, 0);
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(y.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
    }
    SUBCASE("no overflow on large inputs") {
        Tensor x = Tensor::from_data({2}, {1000.0, 0.0});
        Tensor y = softmax(x, 0);
        CHECK(std::isfinite(y.data()[0]));
        CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(y.data()[1] == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("scalar-exp oracle") {
        Tensor x = Tensor::from_data({3}, {1, 2, 3});
        Tensor y = softmax(x, 0);
        CHECK(y.data()[0] == doctest::Approx(0.09003057).epsilon(1e-7));
        CHECK(y.data()[1] == doctest::Approx(0.24472847).epsilon(1e-7));
        CHECK(y.data()[2] == doctest::Approx(0.66524096).epsilon(1e-7));
    }
}

TEST_CASE("softmax rows sum to 1 within 1e-12 on random tensors") {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t rows = 1 + rng.index(6), cols = 1 + rng.index(12);
        Tensor x = Tensor::randn({rows, cols}, rng, 10.0);
        Tensor y = softmax(x, 1);
        for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                CHECK(y.at(i, j) >= 0.0);
                s += y.at(i, j);
            }
            CHECK(std::fabs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("cross entropy") {
    SUBCASE("uniform logits give ln(V)") {
        const std::size_t v = 11;
        Tensor logits = Tensor::zeros({3, v});
        Tensor loss = cross_entropy(logits, {0, 5, 10});
        CHECK(loss.item() == doctest::Approx(std::log(double(v))).epsilon(1e-12));
    }
    SUBCASE("large margin on the correct class gives ~0") {
        Tensor logits = Tensor::zeros({1, 4});
        logits.at(0, 2) = 200.0;
        Tensor loss = cross_entropy(logits, {2});
        CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("log-sum-exp oracle on a random 2x3x5 case") {
        Rng rng(3);
        Tensor logits = Tensor::randn({2, 3, 5}, rng, 2.0);
        std::vector<int> targets = {0, 4, 2, 1, 3, 0};
        Tensor loss = cross_entropy(logits, targets);
        double ref = 0.0;
        for (std::size_t r = 0; r < 6; ++r) {
            const double* row = logits.data() + r * 5;
            double mx = row[0];
            for (int j = 1; j < 5; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (int j = 0; j < 5; ++j) denom += std::exp(row[j] - mx);
            ref += mx + std::log(denom) - row[targets[r]];
        }
        ref /= 6.0;
        CHECK(std::fabs(loss.item() - ref) < 1e-10);
    }
    SUBCASE("out-of-range target id") {
        Tensor logits = Tensor::zeros({2, 4});
        CHECK_THROWS_AS(cross_entropy(logits, {0, 4}), InputError);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("loss = sum(w) gives all-ones gradient") {
        Tensor w = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
        GradientTape tape;
        {
            TapeScope scope(tape);
            tape.backward(sum(w));
        }
        const Tensor& g = tape.grad(w);
        for (std::size_t i = 0; i < 6; ++i) CHECK(g.data()[i] == 1.0);
    }
    SUBCASE("loss = 0.5*||w||^2 gives grad w") {
        Rng rng(5);
        Tensor w = Tensor::randn({4, 4}, rng, 1.0, true);
        GradientTape tape;
        {
            TapeScope scope(tape);
            tape.backward(scale(sum(mul(w, w)), 0.5));
        }
        const Tensor& g = tape.grad(w);
        for (std::size_t i = 0; i < w.numel(); ++i)
            CHECK(g.data()[i] == doctest::Approx(w.data()[i]).epsilon(1e-12));
    }
    SUBCASE("backward on a non-scalar throws") {
        Tensor w = Tensor::zeros({2, 2}, true);
        GradientTape tape;
        TapeScope scope(tape);
        Tensor y = add(w, w);
        CHECK_THROWS_AS(tape.backward(y), ContractError);
    }
    SUBCASE("tape is cleared for reuse but keeps gradients") {
        Tensor w = Tensor::from_data({2}, {1, 2}, true);
        GradientTape tape;
        {
            TapeScope scope(tape);
            tape.backward(sum(w));
        }
        CHECK(tape.node_count() == 0);
        CHECK(tape.has_grad(w));
        {
            TapeScope scope(tape);
            tape.backward(sum(mul(w, w)));
        }
        const Tensor& g = tape.grad(w);
        CHECK(g.data()[0] == doctest::Approx(2.0));
        CHECK(g.data()[1] == doctest::Approx(4.0));
    }
}

namespace {

// Central finite differences over every element of every input.
template <typename Fn>
void check_grads_fd(std::vector<Tensor> inputs, Fn&& forward, double h = 1e-6,
                    double tol = 1e-5) {
    GradientTape tape;
    {
        TapeScope scope(tape);
        tape.backward(forward());
    }
    for (Tensor& t : inputs) {
        const Tensor& g = tape.grad(t);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double orig = t.data()[i];
            t.data()[i] = orig + h;
            const double fp = forward().item();
            t.data()[i] = orig - h;
            const double fm = forward().item();
            t.data()[i] = orig;
            const double fd = (fp - fm) / (2 * h);
            const double scale_ref =
                std::max({1.0, std::fabs(fd), std::fabs(g.data()[i])});
            CHECK(std::fabs(g.data()[i] - fd) / scale_ref < tol);
        }
    }
}

}  // namespace

TEST_CASE("per-op gradients match central finite differences") {
    Rng rng(11);
    SUBCASE("matmul") {
        Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
        Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
        check_grads_fd({a, b}, [&] { return sum(mul(matmul(a, b), matmul(a, b))); });
    }
    SUBCASE("softmax") {
        Tensor x = Tensor::randn({3, 5}, rng, 2.0, true);
        Tensor wsum = Tensor::randn({3, 5}, rng, 1.0);
        check_grads_fd({x}, [&] { return sum(mul(softmax(x, 1), wsum)); });
    }
    SUBCASE("rms_norm") {
        Tensor x = Tensor::randn({4, 6}, rng, 1.5, true);
        Tensor s = Tensor::randn({6}, rng, 1.0, true);
        Tensor wsum = Tensor::randn({4, 6}, rng, 1.0);
        check_grads_fd({x, s}, [&] { return sum(mul(rms_norm(x, s), wsum)); });
    }
    SUBCASE("silu") {
        Tensor x = Tensor::randn({2, 7}, rng, 2.0, true);
        check_grads_fd({x}, [&] { return sum(mul(silu(x), silu(x))); });
    }
    SUBCASE("cross_entropy") {
        Tensor x = Tensor::randn({4, 6}, rng, 1.0, true);
        std::vector<int> targets = {1, 0, 5, 3};
        check_grads_fd({x}, [&] { return cross_entropy(x, targets); });
    }
    SUBCASE("slice, concat, transpose, gather") {
        Tensor x = Tensor::randn({4, 8}, rng, 1.0, true);
        Tensor table = Tensor::randn({6, 4}, rng, 1.0, true);
        std::vector<int> ids = {0, 3, 5, 3};
        check_grads_fd({x, table}, [&] {
            Tensor left = slice_cols(x, 0, 3);
            Tensor right = slice_cols(x, 3, 8);
            Tensor cat = concat_cols({left, slice_cols(right, 0, 1)});
            Tensor g = row_gather(table, ids);
            return add(sum(mul(cat, cat)), sum(mul(transpose(g), transpose(g))));
        });
    }
}

TEST_CASE("determinism: same seed gives bit-identical tensors and ops") {
    Rng r1(2024), r2(2024);
    Tensor a1 = Tensor::randn({5, 5}, r1, 0.3);
    Tensor a2 = Tensor::randn({5, 5}, r2, 0.3);
    for (std::size_t i = 0; i < a1.numel(); ++i)
        CHECK(a1.data()[i] == a2.data()[i]);
    Tensor p1 = matmul(a1, a1);
    Tensor p2 = matmul(a2, a2);
    for (std::size_t i = 0; i < p1.numel(); ++i)
        CHECK(p1.data()[i] == p2.data()[i]);
}

TEST_CASE("forward ops stay finite on finite inputs") {
    Rng rng(13);
    Tensor x = Tensor::randn({8, 8}, rng, 100.0);
    for (const Tensor& t : {softmax(x, 1), silu(x), rms_norm(x, Tensor::full({8}, 1.0))}) {
        for (std::size_t i = 0; i < t.numel(); ++i)
            CHECK(std::isfinite(t.data()[i]));
    }
}
