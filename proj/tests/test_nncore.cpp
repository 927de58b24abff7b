#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "rdml/error.hpp"
#include "rdml/matrix.hpp"
#include "rdml/optim.hpp"
#include "rdml/rng.hpp"

using namespace rdml;

TEST_CASE("matrix shape and arithmetic") {
    Matrix a{{1, 2, 3}, {4, 5, 6}};
    CHECK(a.rows() == 2);
    CHECK(a.cols() == 3);
    CHECK(a.size() == 6);
    CHECK(a(1, 2) == 6.0);

    Matrix b{{1, 0}, {0, 1}, {1, 1}};
    Matrix c = matmul(a, b);
    CHECK(c == Matrix{{4, 5}, {10, 11}});
    CHECK(matmul_tn(transpose(a), b) == c);
    CHECK(matmul_nt(a, transpose(b)) == c);
    CHECK(col_sums(a) == Matrix{{5, 7, 9}});
    CHECK(max_abs(a - a) == 0.0);
    CHECK(frobenius_norm(Matrix{{3, 4}}) == doctest::Approx(5.0));

    Matrix blocks[] = {Matrix{{1}, {2}}, Matrix{{3, 4}, {5, 6}}};
    CHECK(hconcat(blocks) == Matrix{{1, 3, 4}, {2, 5, 6}});

    const std::size_t pick[] = {1, 0, 1};
    CHECK(a.gather_rows(pick) == Matrix{{4, 5, 6}, {1, 2, 3}, {4, 5, 6}});
}

TEST_CASE("matrix errors") {
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), Error);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), Error);
    Matrix x(2, 2);
    CHECK_THROWS_AS(x += Matrix(3, 2), Error);
    Matrix bad{{1.0, std::nan("")}};
    CHECK_FALSE(bad.all_finite());
}

TEST_CASE("rng streams are reproducible and independent") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 10; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        CHECK(x != c.next_u64());
    }
    // Deriving a stream does not advance the parent.
    Rng p(7);
    Rng q(7);
    (void)p.derive("x").next_u64();
    CHECK(p.next_u64() == q.next_u64());
    CHECK(Rng(7).derive("x").next_u64() != Rng(7).derive("y").next_u64());
    CHECK(Rng(7).derive("x", 0).next_u64() != Rng(7).derive("x", 1).next_u64());

    Rng u(3);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double v = u.uniform();
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 1.0);

    auto perm = Rng(9).permutation(50);
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> expect(50);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(sorted == expect);
}

TEST_CASE("normal draws have unit moments") {
    Rng rng(11);
    const int n = 100000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        s += v;
        s2 += v * v;
    }
    const double mean = s / n;
    CHECK(std::abs(mean) < 0.02);
    CHECK(s2 / n - mean * mean == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("sample_beta") {
    SUBCASE("alpha 1 is uniform") {
        Rng rng(5);
        double s = 0.0;
        for (int i = 0; i < 100000; ++i) s += sample_beta(rng, 1.0);
        CHECK(std::abs(s / 100000 - 0.5) <= 0.01);
    }
    SUBCASE("alpha 0.5 variance") {
        // Beta(a, a) variance is 1 / (4 (2a + 1)); a = 0.5 gives 1/8.
        const double a = 0.5;
        const double expected = 1.0 / (4.0 * (2.0 * a + 1.0));
        Rng rng(6);
        const int n = 100000;
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = sample_beta(rng, a);
            REQUIRE(v > 0.0);
            REQUIRE(v < 1.0);
            s += v;
            s2 += v * v;
        }
        const double mean = s / n;
        const double var = s2 / n - mean * mean;
        CHECK(std::abs(var - expected) <= 0.1 * expected);
    }
    SUBCASE("small alpha stays inside (0, 1)") {
        Rng rng(8);
        for (int i = 0; i < 20000; ++i) {
            const double v = sample_beta(rng, 0.05);
            REQUIRE(v > 0.0);
            REQUIRE(v < 1.0);
        }
    }
    SUBCASE("determinism") {
        Rng a(77), b(77);
        for (int i = 0; i < 10; ++i) CHECK(sample_beta(a, 0.7) == sample_beta(b, 0.7));
    }
    SUBCASE("non-positive alpha") {
        Rng rng(1);
        CHECK_THROWS_AS(sample_beta(rng, 0.0), Error);
        CHECK_THROWS_AS(sample_beta(rng, -1.0), Error);
    }
}

TEST_CASE("adamw zero gradients") {
    Matrix w{{1.0, -2.0}, {0.5, 3.0}};
    const Matrix start = w;
    ParamRef refs[] = {{"w", &w}};
    Matrix grads[] = {Matrix(2, 2)};

    SUBCASE("no decay is a fixed point") {
        OptimizerState st;
        st.lr = 0.1;
        for (int i = 0; i < 5; ++i) adamw_step(refs, grads, st);
        CHECK(w == start);
        CHECK(st.step == 5);
    }
    SUBCASE("decoupled decay scales by 1 - lr * wd") {
        OptimizerState st;
        st.lr = 0.1;
        st.weight_decay = 0.1;
        adamw_step(refs, grads, st);
        for (std::size_t i = 0; i < w.size(); ++i)
            CHECK(w.data()[i] == doctest::Approx(start.data()[i] * (1.0 - 0.01)).epsilon(1e-15));
        double prev = frobenius_norm(w);
        for (int i = 0; i < 5; ++i) {
            adamw_step(refs, grads, st);
            const double now = frobenius_norm(w);
            CHECK(now < prev);
            prev = now;
        }
    }
}

TEST_CASE("adamw matches a hand-rolled scalar recurrence") {
    Matrix w{{1.0}};
    ParamRef refs[] = {{"w", &w}};
    Matrix grads[] = {Matrix{{1.0}}};
    OptimizerState st;
    st.lr = 0.1;

    double ref_w = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        adamw_step(refs, grads, st);
        m = 0.9 * m + 0.1 * 1.0;
        v = 0.999 * v + 0.001 * 1.0;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        ref_w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(w(0, 0) == doctest::Approx(ref_w).epsilon(1e-14));
        CHECK(st.step == static_cast<std::uint64_t>(t));
    }
    // Constant unit gradient: every bias-corrected step is lr / (1 + eps).
    CHECK(w(0, 0) == doctest::Approx(0.7).epsilon(1e-7));
}

TEST_CASE("adamw errors name the parameter") {
    Matrix w(2, 2);
    ParamRef refs[] = {{"layer0.weight", &w}};
    Matrix grads[] = {Matrix(2, 3)};
    OptimizerState st;
    try {
        adamw_step(refs, grads, st);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ShapeMismatch);
        CHECK(std::string(e.what()).find("layer0.weight") != std::string::npos);
    }
    CHECK(st.step == 0);
}

TEST_CASE("lr schedule") {
    const LrSchedule s{1e-4, 0.5, 50};
    CHECK(lr_at(s, 0) == 1e-4);
    CHECK(lr_at(s, 49) == 1e-4);
    CHECK(lr_at(s, 50) == doctest::Approx(5e-5));
    CHECK(lr_at(s, 100) == doctest::Approx(1e-4 * 0.5 * 0.5).epsilon(1e-15));
    double prev = lr_at(s, 0);
    for (std::uint64_t e = 1; e < 400; ++e) {
        const double now = lr_at(s, e);
        CHECK(now <= prev);
        prev = now;
    }
}

TEST_CASE("finite differences") {
    SUBCASE("sum of squares") {
        auto g = finite_diff_grad(
            [](const Matrix& x) {
                double s = 0.0;
                for (double v : x.data()) s += v * v;
                return s;
            },
            Matrix{{1.0, 2.0}}, 1e-5);
        CHECK(std::abs(g(0, 0) - 2.0) <= 1e-6);
        CHECK(std::abs(g(0, 1) - 4.0) <= 1e-6);
    }
    SUBCASE("constant") {
        auto g = finite_diff_grad([](const Matrix&) { return 3.0; }, Matrix{{1.0, 2.0, 3.0}});
        CHECK(max_abs(g) == 0.0);
    }
    SUBCASE("sin(x0) * x1") {
        auto g = finite_diff_grad([](const Matrix& x) { return std::sin(x(0, 0)) * x(0, 1); },
                                  Matrix{{0.3, 2.0}}, 1e-5);
        CHECK(std::abs(g(0, 0) - 2.0 * std::cos(0.3)) <= 1e-6);
        CHECK(std::abs(g(0, 1) - std::sin(0.3)) <= 1e-6);
    }
    SUBCASE("cubic polynomial") {
        Rng rng(2);
        for (int trial = 0; trial < 20; ++trial) {
            const Matrix x = testing::random_matrix(2, 3, rng);
            auto g = finite_diff_grad(
                [](const Matrix& m) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m.size(); ++i) s += (i + 1.0) * std::pow(m.data()[i], 3);
                    return s;
                },
                x, 1e-5);
            for (std::size_t i = 0; i < x.size(); ++i)
                CHECK(std::abs(g.data()[i] - 3.0 * (i + 1.0) * x.data()[i] * x.data()[i]) <= 1e-6);
        }
    }
    SUBCASE("non-finite value") {
        CHECK_THROWS_AS(finite_diff_grad([](const Matrix&) { return std::nan(""); }, Matrix{{1.0}}), Error);
        CHECK_THROWS_AS(finite_diff_grad([](const Matrix& x) { return x(0, 0); }, Matrix{{1.0}}, 0.0), Error);
    }
}
