#include <cmath>

#include "cpf/autodiff.hpp"
#include "cpf/errors.hpp"
#include "cpf/rng.hpp"
#include "doctest.h"

using namespace cpf;
using namespace cpf::ad;

namespace {

Tensor randt(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

// FD-checks a one-leaf scalar graph.
void fd_check(const std::function<Var(const Var&)>& f, const Tensor& x0, double tol = 1e-4) {
    Var x = param(x0);
    auto report = grad_check([&](const std::vector<Var>&) { return f(x); }, {x}, 1e-5, tol);
    CAPTURE(report.max_rel_err);
    CHECK(report.pass);
}

} // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("matmul identity and projector") {
    Var i2 = constant(Tensor::from({2, 2}, {1, 0, 0, 1}));
    Var a = constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
    Var r = matmul(i2, a);
    CHECK(r->value.data == std::vector<double>{1, 2, 3, 4});

    Var proj = constant(Tensor::from({2, 2}, {1, 0, 0, 0}));
    Var b = constant(Tensor::from({2, 2}, {5, 6, 7, 8}));
    CHECK(matmul(proj, b)->value.data == std::vector<double>{5, 6, 0, 0});

    CHECK_THROWS_AS(matmul(constant(Tensor({2, 3})), constant(Tensor({2, 3}))),
                    DimensionError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(1);
    Tensor a0 = randt({3, 4}, rng), b0 = randt({4, 2}, rng);
    Var a = param(a0), b = param(b0);
    auto report = grad_check(
        [&](const std::vector<Var>&) { return sum(mul(matmul(a, b), matmul(a, b))); }, {a, b},
        1e-5, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("conv1d boundary, impulse and oracle") {
    // Averaging kernel over constant input: edges see one zero pad.
    Tensor x({1, 5}, 1.0);
    Tensor w({1, 1, 3}, 1.0 / 3.0);
    Tensor b({1});
    Var y = conv1d(constant(x), constant(w), constant(b));
    CHECK(y->value[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(y->value[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y->value[4] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    // Center impulse kernel = channel mix.
    Rng rng(2);
    Tensor x2 = randt({2, 6}, rng);
    Tensor w2({1, 2, 3});
    w2.at3(0, 0, 1) = 1.0;
    w2.at3(0, 1, 1) = 1.0;
    Var y2 = conv1d(constant(x2), constant(w2), constant(Tensor({1})));
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(y2->value[i] == doctest::Approx(x2.at(0, i) + x2.at(1, i)).epsilon(1e-12));

    // Nested-loop oracle, random case.
    Tensor x3 = randt({2, 8}, rng);
    Tensor w3 = randt({3, 2, 5}, rng);
    Tensor b3 = randt({3}, rng);
    Var y3 = conv1d(constant(x3), constant(w3), constant(b3));
    for (std::size_t co = 0; co < 3; ++co)
        for (std::size_t t = 0; t < 8; ++t) {
            double acc = b3[co];
            for (std::size_t ci = 0; ci < 2; ++ci)
                for (int k = 0; k < 5; ++k) {
                    int src = static_cast<int>(t) + k - 2;
                    if (src >= 0 && src < 8) acc += w3.at3(co, ci, k) * x3.at(ci, src);
                }
            CHECK(std::fabs(y3->value.at(co, t) - acc) < 1e-12);
        }

    CHECK_THROWS_AS(
        conv1d(constant(Tensor({1, 4})), constant(Tensor({1, 1, 4})), constant(Tensor({1}))),
        ConfigError);
}

TEST_CASE("conv1d gradients") {
    Rng rng(3);
    Var x = param(randt({2, 7}, rng));
    Var w = param(randt({3, 2, 5}, rng));
    Var b = param(randt({3}, rng));
    auto report = grad_check(
        [&](const std::vector<Var>&) {
            Var y = conv1d(x, w, b);
            return sum(mul(y, y));
        },
        {x, w, b}, 1e-5, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("softmax values and stabilization") {
    Var s = softmax(constant(Tensor::from({1, 3}, {0, 0, 0})), 1);
    for (int i = 0; i < 3; ++i) CHECK(s->value[i] == doctest::Approx(1.0 / 3.0));

    Var big = softmax(constant(Tensor::from({1, 2}, {1000, 0})), 1);
    CHECK(big->value[0] == doctest::Approx(1.0));
    CHECK(big->value[1] >= 0.0);

    Rng rng(4);
    Var r = softmax(constant(randt({1, 7}, rng)), 1);
    double total = 0.0;
    for (double v : r->value.data) total += v;
    CHECK(std::fabs(total - 1.0) < 1e-12);
}

TEST_CASE("softmax gradient both axes") {
    Rng rng(5);
    for (std::size_t axis : {std::size_t{0}, std::size_t{1}}) {
        Tensor x0 = randt({4, 5}, rng);
        fd_check(
            [&, axis](const Var& x) {
                Var s = softmax(x, axis);
                return sum(mul(s, s));
            },
            x0, 1e-6);
    }
}

TEST_CASE("layernorm statistics and edge cases") {
    Var g1 = constant(Tensor({4}, 1.0));
    Var b0 = constant(Tensor({4}));
    Var cst = layernorm(constant(Tensor({2, 4}, 3.5)), g1, b0);
    for (double v : cst->value.data) CHECK(std::fabs(v) < 1e-6);

    Tensor beta_t = Tensor::from({4}, {1, 2, 3, 4});
    Var beta_only = layernorm(constant(Tensor::from({1, 4}, {9, -2, 0, 5})),
                              constant(Tensor({4})), constant(beta_t));
    for (std::size_t j = 0; j < 4; ++j) CHECK(beta_only->value[j] == beta_t[j]);

    Rng rng(6);
    Tensor x = randt({4, 8}, rng, 10.0);  // large scale keeps eps negligible vs row variance
    Var y = layernorm(constant(x), constant(Tensor({8}, 1.0)), constant(Tensor({8})));
    for (std::size_t i = 0; i < 4; ++i) {
        double m = 0, v = 0;
        for (std::size_t j = 0; j < 8; ++j) m += y->value.at(i, j);
        m /= 8;
        for (std::size_t j = 0; j < 8; ++j) {
            double d = y->value.at(i, j) - m;
            v += d * d;
        }
        v /= 8;
        CHECK(std::fabs(m) < 1e-10);
        CHECK(std::fabs(v - 1.0) < 1e-5);
    }
}

TEST_CASE("layernorm gradient") {
    Rng rng(7);
    Var x = param(randt({3, 6}, rng));
    Var g = param(randt({6}, rng));
    Var b = param(randt({6}, rng));
    auto report = grad_check(
        [&](const std::vector<Var>&) {
            Var y = layernorm(x, g, b);
            return sum(mul(y, y));
        },
        {x, g, b}, 1e-5, 1e-4);
    CHECK(report.pass);
}

TEST_CASE("elementwise forward values") {
    CHECK(sigmoid(constant(Tensor::scalar(0.0)))->value[0] == doctest::Approx(0.5));
    CHECK(relu(constant(Tensor::from({2}, {-1, 2})))->value.data ==
          std::vector<double>{0, 2});
    CHECK(gelu(constant(Tensor::scalar(0.0)))->value[0] == doctest::Approx(0.0));
    // gelu(x) -> x for large x, -> 0 for very negative x
    CHECK(gelu(constant(Tensor::scalar(10.0)))->value[0] == doctest::Approx(10.0));
    CHECK(std::fabs(gelu(constant(Tensor::scalar(-10.0)))->value[0]) < 1e-9);
    CHECK(exp_op(constant(Tensor::scalar(1.0)))->value[0] == doctest::Approx(std::exp(1.0)));
    CHECK(log_op(constant(Tensor::scalar(std::exp(2.0))))->value[0] == doctest::Approx(2.0));
    Var cl = clamp(constant(Tensor::from({3}, {-5, 0.5, 5})), 0.0, 1.0);
    CHECK(cl->value.data == std::vector<double>{0, 0.5, 1});
}

TEST_CASE("elementwise gradients") {
    Rng rng(8);
    Tensor x0 = randt({3, 4}, rng, 0.8);
    auto quad = [](const Var& y) { return sum(mul(y, y)); };
    fd_check([&](const Var& x) { return quad(sigmoid(x)); }, x0, 1e-6);
    fd_check([&](const Var& x) { return quad(gelu(x)); }, x0, 1e-5);
    fd_check([&](const Var& x) { return quad(tanh_op(x)); }, x0, 1e-6);
    fd_check([&](const Var& x) { return quad(exp_op(x)); }, x0, 1e-6);
    fd_check([&](const Var& x) { return quad(add(x, scalar_mul(x, 2.0))); }, x0, 1e-6);
    fd_check([&](const Var& x) { return quad(sub(x, scalar_add(x, 1.0))); }, x0, 1e-4);
    fd_check([&](const Var& x) { return quad(pow_const(sigmoid(x), 2.5)); }, x0, 1e-5);
    // log over positive input
    Tensor pos({3, 4}, 0.0);
    for (auto& v : pos.data) v = 0.5 + rng.uniform();
    fd_check([&](const Var& x) { return quad(log_op(x)); }, pos, 1e-5);
}

TEST_CASE("dropout semantics") {
    Rng rng(9);
    Tensor x0({4, 8}, 1.0);
    Var x = constant(x0);
    Var kept = dropout(x, 0.5, rng, false);
    CHECK(kept->value.data == x0.data);  // inference no-op

    Rng rng2(10);
    Var d = dropout(x, 0.5, rng2, true);
    for (double v : d->value.data) CHECK((v == 0.0 || v == doctest::Approx(2.0)));
}

TEST_CASE("linear interpolation endpoints and identity") {
    Var y = linear_interpolate_1d(constant(Tensor::from({1, 2}, {0, 1})), 3);
    CHECK(y->value.data == std::vector<double>{0, 0.5, 1});

    Rng rng(11);
    Tensor x0 = randt({3, 7}, rng);
    Var same = linear_interpolate_1d(constant(x0), 7);
    for (std::size_t i = 0; i < x0.numel(); ++i)
        CHECK(same->value[i] == doctest::Approx(x0[i]).epsilon(1e-12));

    CHECK_THROWS_AS(linear_interpolate_1d(constant(x0), 0), DimensionError);

    fd_check(
        [&](const Var& x) {
            Var z = linear_interpolate_1d(x, 11);
            return sum(mul(z, z));
        },
        x0, 1e-6);
}

TEST_CASE("avgpool1d including trailing partial window") {
    Var y = avgpool1d(constant(Tensor::from({1, 5}, {1, 2, 3, 4, 5})), 2);
    CHECK(y->value.data == std::vector<double>{1.5, 3.5, 5.0});

    Rng rng(12);
    Tensor x0 = randt({2, 9}, rng);
    fd_check(
        [&](const Var& x) {
            Var z = avgpool1d(x, 4);
            return sum(mul(z, z));
        },
        x0, 1e-6);
}

TEST_CASE("slice, concat, reshape, transpose gradients") {
    Rng rng(13);
    Tensor x0 = randt({4, 6}, rng);
    fd_check(
        [&](const Var& x) {
            Var a = slice_cols(x, 1, 4);
            Var b = slice_rows(x, 0, 2);
            Var c = concat_cols({a, a});
            Var d = concat_rows({b, b});
            Var e = reshape(transpose(c), {24});
            return add(sum(mul(e, e)), sum(mul(d, d)));
        },
        x0, 1e-6);
}

TEST_CASE("broadcast helpers") {
    Rng rng(14);
    Tensor x0 = randt({3, 4}, rng);
    Tensor v0 = randt({4}, rng);
    Tensor s0 = randt({1}, rng);
    Var x = param(x0), v = param(v0), s = param(s0);
    auto report = grad_check(
        [&](const std::vector<Var>&) {
            Var a = add_rowvec(x, v);
            Var b = mul_scalarvar(s, a);
            Var c = div_scalarvar(b, scalar_add(mul(s, s), 1.0));
            Var d = broadcast_row(v, 3);
            Var e = gather_scalar(x, 5);
            return add(add(sum(mul(c, c)), sum(mul(d, d))), mul(e, e));
        },
        {x, v, s}, 1e-5, 1e-5);
    CHECK(report.pass);

    Var br = broadcast_row(constant(Tensor::from({2}, {3, 7})), 2);
    CHECK(br->value.data == std::vector<double>{3, 7, 3, 7});
}

TEST_CASE("conv1d_rows matches per-row oracle") {
    Rng rng(15);
    Tensor x0 = randt({3, 6}, rng);
    Tensor k0 = randt({3}, rng);
    Var y = conv1d_rows(constant(x0), constant(k0));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t t = 0; t < 6; ++t) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) {
                int src = static_cast<int>(t) + k - 1;
                if (src >= 0 && src < 6) acc += k0[k] * x0.at(r, src);
            }
            CHECK(std::fabs(y->value.at(r, t) - acc) < 1e-12);
        }

    Var xp = param(x0), kp = param(k0);
    auto report = grad_check(
        [&](const std::vector<Var>&) {
            Var z = conv1d_rows(xp, kp);
            return sum(mul(z, z));
        },
        {xp, kp}, 1e-5, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("backward basics and graph contract") {
    Var x = param(Tensor::from({3}, {1, 2, 3}));
    Var loss = sum(x);
    backward(loss);
    CHECK(x->grad.data == std::vector<double>{1, 1, 1});

    zero_grad({x});
    Var sq = sum(mul(x, x));
    backward(sq);
    CHECK(x->grad.data == std::vector<double>{2, 4, 6});

    // Non-scalar loss rejected; consumed graph rejected.
    Var m = mul(x, x);
    CHECK_THROWS_AS(backward(m), ContractError);
    Var s2 = sum(mul(x, x));
    backward(s2);
    CHECK_THROWS_AS(backward(s2), ContractError);
}

TEST_CASE("grad accumulation across backward calls on shared leaves") {
    Var x = param(Tensor::from({2}, {1, 1}));
    zero_grad({x});
    backward(sum(x));
    backward(sum(x));
    CHECK(x->grad.data == std::vector<double>{2, 2});
}

TEST_CASE("grad_check catches a wrong backward rule") {
    // Fixture: claims y = x^2 but backpropagates 3x instead of 2x.
    Var x = param(Tensor::from({2}, {0.7, -1.3}));
    auto build = [&](const std::vector<Var>&) -> Var {
        auto bad = std::make_shared<Node>();
        bad->value = Tensor::zeros_like(x->value);
        for (std::size_t i = 0; i < x->value.numel(); ++i)
            bad->value[i] = x->value[i] * x->value[i];
        bad->requires_grad = true;
        bad->grad = Tensor::zeros_like(bad->value);
        bad->parents = {x};
        bad->backward_fn = [xp = x](Node& n) {
            for (std::size_t i = 0; i < n.value.numel(); ++i)
                xp->grad[i] += 3.0 * xp->value[i] * n.grad[i];
        };
        return sum(bad);
    };
    auto report = grad_check(build, {x}, 1e-5, 1e-4);
    CHECK_FALSE(report.pass);
}

TEST_CASE("rng determinism") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42), d(42);
    for (int i = 0; i < 100; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("check_finite flags NaN and Inf") {
    Tensor t({2}, 1.0);
    t[1] = std::nan("");
    CHECK_THROWS_AS(t.check_finite("probe"), NumericError);
    t[1] = INFINITY;
    CHECK_THROWS_AS(t.check_finite("probe"), NumericError);
}

TEST_SUITE_END();
