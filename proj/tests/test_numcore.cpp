#include <cmath>

#include "doctest.h"
#include "fedcn/numcore.hpp"
#include "fedcn/rng.hpp"
#include "support.hpp"

using namespace fedcn;

TEST_SUITE("numcore") {

TEST_CASE("euclidean distance examples") {
    CHECK(euclidean_distance(Vector{0, 0}, Vector{3, 4}) == 5.0);
    const Vector a{1.5, -2.0, 7.0};
    CHECK(euclidean_distance(a, a) == 0.0);
    CHECK(euclidean_distance(Vector{1, 2, 3}, Vector{4, 6, 3}) == 5.0);
    CHECK_THROWS_AS(euclidean_distance(Vector{1, 2}, Vector{1, 2, 3}), InvalidArgument);
}

TEST_CASE("euclidean distance: symmetry, nonnegativity and triangle inequality") {
    RngStream rng(11);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t d = 1 + rng.uniform_index(8);
        const auto v = testing::random_vectors(rng, 3, d, 1.0 + 10.0 * rng.uniform());
        const double ab = euclidean_distance(v[0], v[1]);
        const double bc = euclidean_distance(v[1], v[2]);
        const double ac = euclidean_distance(v[0], v[2]);
        CHECK(ab >= 0.0);
        CHECK(ab == euclidean_distance(v[1], v[0]));
        CHECK(ac <= ab + bc + 1e-12 * (ab + bc));
    }
}

TEST_CASE("cosine similarity examples") {
    CHECK(cosine_similarity(Vector{1, 0}, Vector{0, 1}) == 0.0);
    CHECK(cosine_similarity(Vector{2, 0}, Vector{5, 0}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_similarity(Vector{1, 1}, Vector{-1, -1}) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK_THROWS_AS(cosine_similarity(Vector{0, 0}, Vector{1, 0}), DegenerateInput);
    CHECK_THROWS_AS(cosine_similarity(Vector{1, 0}, Vector{0, 0}), DegenerateInput);
}

TEST_CASE("cosine similarity is scale invariant and bounded") {
    RngStream rng(12);
    for (int i = 0; i < 500; ++i) {
        const auto v = testing::random_vectors(rng, 2, 6);
        const double k = std::exp(rng.uniform(-5.0, 5.0));
        Vector scaled = v[0];
        for (double& x : scaled) x *= k;
        const double c = cosine_similarity(v[0], v[1]);
        CHECK(std::abs(cosine_similarity(scaled, v[1]) - c) <= 1e-9);
        CHECK(c >= -1.0);
        CHECK(c <= 1.0);
    }
}

TEST_CASE("softmax examples") {
    const Vector half = softmax(Vector{0, 0}, 1.0);
    CHECK(half[0] == 0.5);
    CHECK(half[1] == 0.5);
    const Vector two_thirds = softmax(Vector{std::log(2.0), 0.0}, 1.0);
    CHECK(two_thirds[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(two_thirds[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    for (double v : softmax(Vector{4.2, 4.2, 4.2}, 0.07)) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK_THROWS_AS(softmax(Vector{1, 2}, 0.0), InvalidArgument);
    CHECK_THROWS_AS(softmax(Vector{1, 2}, -1.0), InvalidArgument);
}

TEST_CASE("softmax sums to one and ignores a constant shift") {
    RngStream rng(13);
    for (int i = 0; i < 500; ++i) {
        const std::size_t n = 1 + rng.uniform_index(10);
        Vector logits(n);
        for (double& x : logits) x = 50.0 * rng.normal();
        const double tau = rng.uniform(0.01, 3.0);
        const double shift = rng.uniform(-1000.0, 1000.0);
        Vector shifted = logits;
        for (double& x : shifted) x += shift;
        const Vector p = softmax(logits, tau);
        const Vector q = softmax(shifted, tau);
        double total = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            total += p[k];
            CHECK(std::abs(p[k] - q[k]) <= 1e-9);
            CHECK(std::isfinite(p[k]));
        }
        CHECK(std::abs(total - 1.0) <= 1e-9);
    }
}

TEST_CASE("log-sum-exp matches the direct formula where that is safe") {
    RngStream rng(14);
    for (int i = 0; i < 200; ++i) {
        Vector v(5);
        for (double& x : v) x = 3.0 * rng.normal();
        double direct = 0.0;
        for (double x : v) direct += std::exp(x);
        CHECK(log_sum_exp(v) == doctest::Approx(std::log(direct)).epsilon(1e-12));
    }
    CHECK(std::isfinite(log_sum_exp(Vector{1e4, 1e4})));
    CHECK(log_sum_exp(Vector{1e4, 1e4}) == doctest::Approx(1e4 + std::log(2.0)));
}

TEST_CASE("argmax_stable examples") {
    CHECK(argmax_stable(Vector{1, 3, 3}) == 1);
    CHECK(argmax_stable(Vector{5}) == 0);
    CHECK(argmax_stable(Vector{0, 0, 0}) == 0);
    CHECK_THROWS_AS(argmax_stable(Vector{}), InvalidArgument);
}

TEST_CASE("argmax_stable agrees with a first-maximum scan") {
    RngStream rng(15);
    for (int i = 0; i < 500; ++i) {
        Vector v(1 + rng.uniform_index(9));
        // Few distinct values so ties are common.
        for (double& x : v) x = static_cast<double>(rng.uniform_index(3));
        std::size_t best = 0;
        for (std::size_t k = 1; k < v.size(); ++k) {
            if (v[k] > v[best]) best = k;
        }
        CHECK(argmax_stable(v) == best);
    }
}

TEST_CASE("matrix basics") {
    Matrix m(2, 3, 1.5);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    m(1, 2) = 4.0;
    CHECK(m.row(1)[2] == 4.0);
    m.append_row(Vector{7, 8, 9});
    CHECK(m.rows() == 3);
    CHECK(m(2, 0) == 7.0);
    CHECK_THROWS_AS(m.append_row(Vector{1, 2}), InvalidArgument);
    const Matrix id = Matrix::identity(3);
    CHECK(id(0, 0) == 1.0);
    CHECK(id(0, 1) == 0.0);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), InvalidArgument);
}

TEST_CASE("axpy, dot, norm and all_finite") {
    Vector y{1, 1, 1};
    axpy(2.0, Vector{1, 2, 3}, y);
    CHECK(y == Vector{3, 5, 7});
    CHECK(dot(Vector{1, 2, 3}, Vector{4, 5, 6}) == 32.0);
    CHECK(norm(Vector{3, 4}) == 5.0);
    CHECK(all_finite(Vector{1, 2}));
    CHECK_FALSE(all_finite(Vector{1, std::nan("")}));
    CHECK_FALSE(all_finite(Vector{INFINITY}));
}

}
