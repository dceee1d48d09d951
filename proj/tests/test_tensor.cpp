#include <doctest.h>

#include <cmath>

#include "elm/errors.hpp"
#include "elm/tensor.hpp"
#include "test_helpers.hpp"

using namespace elm;
using namespace elm::test;

TEST_SUITE_BEGIN("numerics");

TEST_CASE("matmul identity and hand cases") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
    Tensor c = matmul(eye, b);
    CHECK(c.data() == std::vector<double>{3, 4, 5, 6});

    Tensor row = Tensor::from({1, 2}, {1, 2});
    Tensor col = Tensor::from({2, 1}, {3, 4});
    CHECK(matmul(row, col).item() == 11.0);

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimError);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(3);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    auto expected = matmul_oracle(a.data(), b.data(), 3, 4, 2);
    CHECK(max_abs_diff(matmul(a, b).data(), expected) < 1e-12);
}

TEST_CASE("softmax symmetry and row sums") {
    Tensor x = Tensor::from({1, 2}, {0, 0});
    auto s = softmax(x);
    CHECK(s.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(5);
    Tensor r = random_tensor({7, 9}, rng, -4.0, 4.0);
    auto sr = softmax(r);
    for (int i = 0; i < 7; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 9; ++j) sum += sr.at(i, j);
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }

    Tensor bad = Tensor::from({1, 2}, {std::numeric_limits<double>::infinity(), 0.0});
    CHECK_THROWS_AS(softmax(bad), NumericError);
}

TEST_CASE("kl_div identity, nonnegativity, domain checks") {
    Rng rng(7);
    Tensor p = random_row_stochastic(5, 6, rng);
    CHECK(kl_div(p, p).item() <= 1e-12);
    Tensor q = random_row_stochastic(5, 6, rng);
    CHECK(kl_div(p, q).item() >= 0.0);

    Tensor neg = Tensor::from({1, 2}, {-0.5, 1.5});
    CHECK_THROWS_AS(kl_div(neg, neg), DomainError);
    Tensor not_normalized = Tensor::from({1, 2}, {0.9, 0.3});
    CHECK_THROWS_AS(kl_div(not_normalized, not_normalized), DomainError);
}

TEST_CASE("gelu gradient matches central differences") {
    const double pts[] = {-1.7, -0.4, 0.0, 0.3, 1.9};
    for (double v : pts) {
        Tensor x = Tensor::from({1, 1}, {v}, true);
        Tape tape;
        {
            TapeScope scope(tape);
            tape.backward(sum_all(gelu(x)));
        }
        const double analytic = x.grad()[0];
        const double eps = 1e-6;
        auto g = [](double z) { return z * 0.5 * (1.0 + std::erf(z * 0.7071067811865476)); };
        const double numeric = (g(v + eps) - g(v - eps)) / (2 * eps);
        CHECK(std::abs(analytic - numeric) / (std::abs(numeric) + 1e-5) < 1e-5);
    }
}

TEST_CASE("backward on sum gives all-ones grad") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(x));
    CHECK(x.grad() == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("backward through dot product") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    Tensor y = Tensor::from({3}, {4, 5, 6}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(dot(x, y));
    CHECK(x.grad() == std::vector<double>{4, 5, 6});
    CHECK(y.grad() == std::vector<double>{1, 2, 3});
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("backward is additive across losses") {
    Rng rng(11);
    Tensor w = random_tensor({4, 4}, rng, -1.0, 1.0, true);
    Tensor a = random_tensor({2, 4}, rng);
    Tensor b = random_tensor({2, 4}, rng);

    auto loss1 = [&]() { return sum_all(gelu(matmul(a, w))); };
    auto loss2 = [&]() { return sum_all(softmax(matmul(b, w))); };

    w.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(loss1());
    }
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(loss2());
    }
    auto separate = w.grad();

    w.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(add(loss1(), loss2()));
    }
    CHECK(max_abs_diff(separate, w.grad()) < 1e-10);
}

TEST_CASE("finite_diff_check on quadratic and linear") {
    Tensor x = Tensor::from({1}, {1.0});
    auto sq = [&]() { return mul(x, x); };
    CHECK(finite_diff_check(sq, {x}, 1e-5) < 1e-8);
    auto lin = [&]() { return scale(x, 3.0); };
    CHECK(finite_diff_check(lin, {x}, 1e-5) < 1e-10);
    CHECK_THROWS_AS(finite_diff_check(lin, {x}, 0.0), ContractError);
}

TEST_CASE("every primitive passes a finite-difference check") {
    Rng rng(13);
    const double tol = 1e-4;

    // matmul + add + scale
    {
        Tensor a = random_tensor({3, 4}, rng, -2, 2);
        Tensor b = random_tensor({4, 3}, rng, -2, 2);
        auto f = [&]() { return sum_all(scale(matmul(a, b), 0.7)); };
        CHECK(finite_diff_check(f, {a, b}, 1e-5) < tol);
    }
    // matmul_nt
    {
        Tensor a = random_tensor({3, 5}, rng, -2, 2);
        Tensor b = random_tensor({4, 5}, rng, -2, 2);
        auto f = [&]() { return sum_all(gelu(matmul_nt(a, b))); };
        CHECK(finite_diff_check(f, {a, b}, 1e-5) < tol);
    }
    // column/row subsets with biases
    {
        Tensor x = random_tensor({3, 4}, rng, -2, 2);
        Tensor w1 = random_tensor({4, 6}, rng, -2, 2);
        Tensor b1 = random_tensor({6}, rng, -1, 1);
        Tensor w2 = random_tensor({6, 4}, rng, -2, 2);
        std::vector<int> idx{0, 2, 5};
        auto f = [&]() {
            Tensor h = gelu(add_bias_subset(matmul_col_subset(x, w1, idx), b1, idx));
            return sum_all(matmul_row_subset(h, w2, idx));
        };
        CHECK(finite_diff_check(f, {x, w1, b1, w2}, 1e-5) < tol);
    }
    // add_bias, mul, col_scale, gate_scale
    {
        Tensor x = random_tensor({3, 4}, rng, -2, 2);
        Tensor b = random_tensor({4}, rng, -1, 1);
        Tensor v = random_tensor({4}, rng, -1, 1);
        Tensor g = random_tensor({3}, rng, -1, 1);
        Tensor y = random_tensor({3, 4}, rng, -2, 2);
        auto f = [&]() {
            Tensor t = col_scale(add_bias(x, b), v);
            t = mul(t, y);
            return sum_all(gate_scale(t, g, 1));
        };
        CHECK(finite_diff_check(f, {x, b, v, g, y}, 1e-5) < tol);
    }
    // softmax + kl_div through both arguments
    {
        Tensor lp = random_tensor({3, 5}, rng, -2, 2);
        Tensor lq = random_tensor({3, 5}, rng, -2, 2);
        auto f = [&]() { return kl_div(softmax(lp), softmax(lq)); };
        CHECK(finite_diff_check(f, {lp, lq}, 1e-6) < tol);
    }
    // layer_norm
    {
        Tensor x = random_tensor({3, 6}, rng, -2, 2);
        Tensor gain = random_tensor({6}, rng, 0.5, 1.5);
        Tensor bias = random_tensor({6}, rng, -0.5, 0.5);
        auto f = [&]() { return sum_all(gelu(layer_norm(x, gain, bias))); };
        CHECK(finite_diff_check(f, {x, gain, bias}, 1e-6) < tol);
    }
    // cross_entropy with an ignored row
    {
        Tensor logits = random_tensor({3, 5}, rng, -2, 2);
        std::vector<int> targets{2, -1, 4};
        auto f = [&]() { return cross_entropy(logits, targets); };
        CHECK(finite_diff_check(f, {logits}, 1e-6) < tol);
    }
    // embed_rows + take_row + dot + pack_scalars
    {
        Tensor table = random_tensor({6, 4}, rng, -2, 2);
        Tensor w = random_tensor({1, 4}, rng, -2, 2);
        std::vector<int> ids{1, 3, 3, 5};
        auto f = [&]() {
            Tensor e = embed_rows(table, ids);
            Tensor r0 = take_row(e, 2);
            std::vector<Tensor> sims{dot(r0, w), dot(take_row(e, 0), w)};
            std::vector<int> tgt{0};
            return cross_entropy(pack_scalars(sims), tgt);
        };
        CHECK(finite_diff_check(f, {table, w}, 1e-6) < tol);
    }
}

TEST_CASE("layer_norm normalizes rows before gain and bias") {
    Rng rng(17);
    Tensor x = random_tensor({5, 32}, rng, -3, 3);
    Tensor gain = Tensor::full({32}, 1.0);
    Tensor bias = Tensor::zeros({32});
    Tensor y = layer_norm(x, gain, bias);
    for (int i = 0; i < 5; ++i) {
        double mean = 0.0;
        for (int j = 0; j < 32; ++j) mean += y.at(i, j);
        mean /= 32;
        double var = 0.0;
        for (int j = 0; j < 32; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 32;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("cross_entropy domain checks") {
    Tensor logits = Tensor::from({2, 3}, {0, 0, 0, 0, 0, 0});
    std::vector<int> bad{0, 3};
    CHECK_THROWS_AS(cross_entropy(logits, bad), DomainError);
    std::vector<int> none{-1, -1};
    CHECK_THROWS_AS(cross_entropy(logits, none), ContractError);
}

TEST_SUITE_END();
