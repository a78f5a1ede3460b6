#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "prd/errors.hpp"
#include "prd/simcore.hpp"

using namespace prd;

TEST_CASE("cosine_sim worked examples") {
    CHECK(cosine_sim(Vector{1, 0}, Vector{0, 1}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine_sim(Vector{2, 0}, Vector{1, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    // direct evaluation of the dot-product formula: 1/sqrt(2)
    CHECK(cosine_sim(Vector{1, 1}, Vector{1, 0}) ==
          doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-10));
}

TEST_CASE("cosine_sim rejects degenerate inputs") {
    CHECK_THROWS_AS(cosine_sim(Vector{0, 0}, Vector{1, 0}), std::domain_error);
    CHECK_THROWS_AS(cosine_sim(Vector{1, 0}, Vector{0, 0}), std::domain_error);
    CHECK_THROWS_AS(cosine_sim(Vector{1, 0}, Vector{1, 0, 0}), std::domain_error);
    CHECK_THROWS_WITH_AS(cosine_sim(Vector{0, 0}, Vector{1, 0}),
                         "cosine_sim: first argument has zero norm", std::domain_error);
}

TEST_CASE("cosine_sim symmetry and bounds on random inputs") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        Vector a(5), b(5);
        for (auto& v : a) v = g(rng);
        for (auto& v : b) v = g(rng);
        const double s = cosine_sim(a, b);
        CHECK(s == doctest::Approx(cosine_sim(b, a)).epsilon(1e-14));
        CHECK(std::abs(s) <= 1.0 + 1e-12);
    }
}

TEST_CASE("cosine_sim positive-rescaling invariance") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> scale(1e-3, 1e3);
    for (int trial = 0; trial < 100; ++trial) {
        Vector a(4), b(4);
        for (auto& v : a) v = g(rng);
        for (auto& v : b) v = g(rng);
        const double c = scale(rng);
        Vector ca = a;
        for (auto& v : ca) v *= c;
        CHECK(std::abs(cosine_sim(ca, b) - cosine_sim(a, b)) <= 1e-12);
    }
}

TEST_CASE("temp_kernel worked examples") {
    const Vector u{3, 4};
    CHECK(temp_kernel(u, u, Temperature(1.0)) ==
          doctest::Approx(std::exp(1.0)).epsilon(1e-12));
    CHECK(temp_kernel(Vector{1, 0}, Vector{0, 1}, Temperature(0.1)) ==
          doctest::Approx(1.0).epsilon(1e-12));
    // antipodal unit pair at tau = 0.5
    CHECK(temp_kernel(Vector{1, 0}, Vector{-1, 0}, Temperature(0.5)) ==
          doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("temperature must be positive") {
    CHECK_THROWS_AS(Temperature(0.0), std::domain_error);
    CHECK_THROWS_AS(Temperature(-1.0), std::domain_error);
}

TEST_CASE("prototype_softmax worked examples") {
    SUBCASE("equidistant features") {
        const Vector p{1, 0, 0};
        // four features with identical cosine to p
        std::vector<Vector> feats{{1, 1, 0}, {1, -1, 0}, {1, 0, 1}, {1, 0, -1}};
        const auto probs = prototype_softmax(p, feats, Temperature(0.1));
        for (double v : probs) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("single feature") {
        const auto probs = prototype_softmax(Vector{1, 0}, {Vector{0.3, 0.4}}, Temperature(0.1));
        REQUIRE(probs.size() == 1);
        CHECK(probs[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("sims 1 and 0 at tau 1") {
        const Vector p{1, 0};
        const auto probs = prototype_softmax(p, {Vector{2, 0}, Vector{0, 5}}, Temperature(1.0));
        const double e = std::exp(1.0);
        CHECK(probs[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
        CHECK(probs[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
    }
}

TEST_CASE("prototype_softmax errors") {
    CHECK_THROWS_AS(prototype_softmax(Vector{1, 0}, std::vector<Vector>{}, Temperature(1.0)),
                    std::domain_error);
    CHECK_THROWS_AS(prototype_softmax(Vector{1, 0}, {Vector{1, 0, 0}}, Temperature(1.0)),
                    std::domain_error);
}

TEST_CASE("prototype_softmax sums to one with strictly positive entries") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Vector p(6);
        for (auto& v : p) v = g(rng) + 0.1;
        std::vector<Vector> feats(8, Vector(6));
        for (auto& f : feats)
            for (auto& v : f) v = g(rng) + 0.1;
        const auto probs = prototype_softmax(p, feats, Temperature(0.1));
        double sum = 0.0;
        for (double v : probs) {
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("prototype_softmax is shift-invariant in the logits") {
    // Scaling the prototype leaves every cosine unchanged; adding a constant
    // to the logits must match the max-subtracted computation to 1e-12.
    const Vector p{0.5, -0.2, 1.0};
    std::vector<Vector> feats{{1, 0, 0}, {0, 1, 0}, {0.4, 0.4, 0.4}, {-1, 0.3, 0.2}};
    const auto base = prototype_softmax(p, feats, Temperature(0.1));

    // same distribution computed from raw shifted logits
    std::vector<double> logits;
    for (const auto& f : feats) logits.push_back(cosine_sim(p, f) / 0.1 + 123.456);
    double denom = 0.0;
    const double m = *std::max_element(logits.begin(), logits.end());
    for (double l : logits) denom += std::exp(l - m);
    for (std::size_t i = 0; i < feats.size(); ++i)
        CHECK(std::abs(base[i] - std::exp(logits[i] - m) / denom) <= 1e-12);
}
