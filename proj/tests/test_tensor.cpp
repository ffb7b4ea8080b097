#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>

#include "helpers.hpp"
#include "mgtcom/tensor.hpp"

using namespace mgtcom;
using testutil::check_gradients;
using testutil::random_matrix;

namespace {
constexpr double kOpTol = 1e-4;
}

TEST_CASE("gelu is zero at zero and matmul by identity is a no-op") {
    Tape t;
    Var z = t.gelu(t.input(Matrix::Zero(2, 2)));
    CHECK(t.value(z).isZero(0.0));

    Matrix x = random_matrix(3, 3, 11);
    Var xi = t.input(x, true);
    Var y = t.matmul(t.input(Matrix::Identity(3, 3)), xi);
    CHECK((t.value(y) - x).norm() == 0.0);

    // with root = l2_norm_sq(y), droot/dy = 2y, so grad(X) must equal 2X
    Var root = t.l2_norm_sq(y);
    t.backward(root);
    CHECK((t.grad(xi) - 2 * x).norm() < 1e-12);
}

TEST_CASE("finite differences validate every op") {
    SUBCASE("matmul") {
        auto rep = check_gradients(
            {random_matrix(3, 4, 1), random_matrix(4, 3, 2)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.l2_norm_sq(t.matmul(v[0], v[1]));
            });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("add") {
        auto rep = check_gradients(
            {random_matrix(3, 4, 3), random_matrix(3, 4, 4)},
            [](Tape& t, const std::vector<Var>& v) { return t.l2_norm_sq(t.add(v[0], v[1])); });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("add_rowvec") {
        auto rep = check_gradients(
            {random_matrix(3, 4, 5), random_matrix(1, 4, 6)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.l2_norm_sq(t.add_rowvec(v[0], v[1]));
            });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("scale") {
        auto rep = check_gradients({random_matrix(3, 4, 7)},
                                   [](Tape& t, const std::vector<Var>& v) {
                                       return t.l2_norm_sq(t.scale(v[0], -1.7));
                                   });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("rowwise_concat") {
        auto rep = check_gradients(
            {random_matrix(3, 2, 8), random_matrix(3, 3, 9), random_matrix(3, 1, 10)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.l2_norm_sq(t.rowwise_concat({v[0], v[1], v[2]}));
            });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("elementwise_mul") {
        auto rep = check_gradients(
            {random_matrix(3, 4, 11), random_matrix(3, 4, 12)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.l2_norm_sq(t.elementwise_mul(v[0], v[1]));
            });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("gelu") {
        auto rep = check_gradients({random_matrix(3, 4, 13)},
                                   [](Tape& t, const std::vector<Var>& v) {
                                       return t.l2_norm_sq(t.gelu(v[0]));
                                   });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("sigmoid") {
        auto rep = check_gradients({random_matrix(3, 4, 14)},
                                   [](Tape& t, const std::vector<Var>& v) {
                                       return t.l2_norm_sq(t.sigmoid(v[0]));
                                   });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("dropout with a fixed mask") {
        Eigen::ArrayXXd mask(3, 4);
        mask << 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1;
        auto rep = check_gradients({random_matrix(3, 4, 15)},
                                   [mask](Tape& t, const std::vector<Var>& v) {
                                       return t.l2_norm_sq(t.dropout(v[0], mask, 0.25));
                                   });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("reduce_mean") {
        auto rep = check_gradients({random_matrix(3, 4, 16)},
                                   [](Tape& t, const std::vector<Var>& v) {
                                       return t.reduce_mean(v[0]);
                                   });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("l2_norm_sq") {
        auto rep = check_gradients({random_matrix(3, 4, 17)},
                                   [](Tape& t, const std::vector<Var>& v) {
                                       return t.l2_norm_sq(v[0]);
                                   });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("hinge_max away from its kinks") {
        Matrix neg(3, 1);
        neg << 0.5, -0.2, 0.1;
        Matrix pos(1, 1);
        pos << 0.3;
        auto rep = check_gradients({neg, pos}, [](Tape& t, const std::vector<Var>& v) {
            return t.hinge_max(v[0], v[1], 0.1);
        });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("transpose") {
        auto rep = check_gradients({random_matrix(3, 4, 18)},
                                   [](Tape& t, const std::vector<Var>& v) {
                                       return t.l2_norm_sq(t.transpose(v[0]));
                                   });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("rows gather with duplicates") {
        auto rep = check_gradients({random_matrix(4, 3, 19)},
                                   [](Tape& t, const std::vector<Var>& v) {
                                       return t.l2_norm_sq(t.rows(v[0], {2, 0, 2}));
                                   });
        CHECK(rep.max_rel_err <= kOpTol);
    }
}

TEST_CASE("finite differences validate op compositions") {
    SUBCASE("affine -> gelu -> norm") {
        auto rep = check_gradients(
            {random_matrix(4, 3, 21), random_matrix(3, 5, 22), random_matrix(1, 5, 23)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.l2_norm_sq(t.gelu(t.add_rowvec(t.matmul(v[0], v[1]), v[2])));
            });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("gated product -> mean") {
        auto rep = check_gradients(
            {random_matrix(3, 4, 24), random_matrix(3, 4, 25)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.reduce_mean(t.elementwise_mul(v[0], t.sigmoid(v[1])));
            });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("concat -> transpose -> matmul -> scale -> norm") {
        auto rep = check_gradients(
            {random_matrix(2, 3, 26), random_matrix(2, 2, 27)},
            [](Tape& t, const std::vector<Var>& v) {
                Var cat = t.rowwise_concat({v[0], v[1]});  // 2x5
                Var prod = t.matmul(cat, t.transpose(cat));
                return t.l2_norm_sq(t.scale(prod, 0.5));
            });
        CHECK(rep.max_rel_err <= kOpTol);
    }
    SUBCASE("gather -> hinge against pooled positives") {
        Matrix z(5, 2);
        z << 1.0, 0.2, -0.3, 0.8, 0.6, -0.1, 0.9, 0.4, -0.5, 0.7;
        auto rep = check_gradients({z}, [](Tape& t, const std::vector<Var>& v) {
            Var q = t.transpose(t.rows(v[0], {0}));           // 2x1
            Var pos = t.reduce_mean(t.matmul(t.rows(v[0], {1, 2}), q));
            Var neg = t.matmul(t.rows(v[0], {3, 4}), q);
            return t.hinge_max(neg, pos, 0.1);
        });
        CHECK(rep.max_rel_err <= kOpTol);
    }
}

TEST_CASE("hinge loss hand values") {
    auto run = [](std::vector<double> negs, double pos, double delta) {
        Tape t;
        Matrix n(static_cast<Eigen::Index>(negs.size()), 1);
        for (std::size_t i = 0; i < negs.size(); ++i) n(static_cast<Eigen::Index>(i), 0) = negs[i];
        Matrix p(1, 1);
        p << pos;
        return t.value(t.hinge_max(t.input(n), t.input(p), delta))(0, 0);
    };
    CHECK(run({0.95}, 1.0, 0.1) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(run({0.5, 1.2}, 1.0, 0.1) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(run({0.1, 0.2}, 1.0, 0.1) == 0.0);  // hinge inactive
}

TEST_CASE("dropout keeps expectation and is caller-seeded") {
    Matrix ones = Matrix::Constant(2, 3, 1.0);
    const double rate = 0.3;
    std::mt19937_64 gen(33);
    std::bernoulli_distribution keep(1.0 - rate);
    double acc = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        Eigen::ArrayXXd mask(2, 3);
        for (Eigen::Index r = 0; r < 2; ++r)
            for (Eigen::Index c = 0; c < 3; ++c) mask(r, c) = keep(gen) ? 1.0 : 0.0;
        Tape t;
        acc += t.value(t.reduce_mean(t.dropout(t.input(ones), mask, rate)))(0, 0);
    }
    CHECK(std::fabs(acc / trials - 1.0) < 0.01);
}

TEST_CASE("tape rejects shape mismatches naming the op") {
    Tape t;
    Var a = t.input(Matrix::Zero(2, 3));
    Var b = t.input(Matrix::Zero(3, 3));
    CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("add"), std::invalid_argument);
    CHECK_THROWS_AS(t.matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(t.hinge_max(a, b, 0.1), std::invalid_argument);
}

TEST_CASE("optimizer leaves parameters untouched on zero gradient") {
    ParamStore store;
    store.add("w", random_matrix(2, 2, 40));
    store.add("b", random_matrix(1, 2, 41));
    Matrix w0 = store[0], b0 = store[1];

    AdamOptimizer opt(store, AdamConfig{});
    opt.step(store, {Matrix(), Matrix()});  // 0x0 = zero gradient
    CHECK((store[0] - w0).norm() == 0.0);
    CHECK((store[1] - b0).norm() == 0.0);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("optimizer walks down a quadratic bowl") {
    ParamStore store;
    store.add("x", Matrix::Constant(1, 1, 1.0));
    AdamConfig cfg;
    cfg.lr = 0.05;
    AdamOptimizer opt(store, cfg);
    for (int i = 0; i < 500; ++i) {
        Matrix g(1, 1);
        g << 2.0 * store[0](0, 0);
        opt.step(store, {g});
    }
    CHECK(std::fabs(store[0](0, 0)) < 1e-2);
}

TEST_CASE("optimizer runs are bit-identical") {
    auto run = [] {
        ParamStore store;
        store.add("w", random_matrix(3, 3, 50));
        AdamOptimizer opt(store, AdamConfig{});
        for (int i = 0; i < 50; ++i) {
            Matrix g = random_matrix(3, 3, 100 + static_cast<std::uint64_t>(i));
            opt.step(store, {g});
        }
        return store[0];
    };
    Matrix a = run(), b = run();
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * 9) == 0);
}

TEST_CASE("optimizer rejects non-finite gradients with the parameter name") {
    ParamStore store;
    store.add("conv0.q.author", Matrix::Zero(2, 2));
    AdamOptimizer opt(store, AdamConfig{});
    Matrix bad = Matrix::Zero(2, 2);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(opt.step(store, {bad}), doctest::Contains("conv0.q.author"),
                         std::runtime_error);
}

TEST_CASE("gradients accumulate across reuse and untouched params stay 0x0") {
    Tape t;
    Matrix x = random_matrix(2, 2, 60);
    Var xi = t.input(x, true);
    Var y = t.add(xi, xi);  // dy/dx = 2
    Var root = t.reduce_mean(y);
    t.backward(root);
    CHECK((t.grad(xi) - Matrix::Constant(2, 2, 2.0 / 4.0)).norm() < 1e-14);

    Var untouched = t.input(Matrix::Zero(2, 2), true);
    CHECK_FALSE(t.grad_touched(untouched));
    CHECK(t.grad(untouched).isZero(0.0));
}
