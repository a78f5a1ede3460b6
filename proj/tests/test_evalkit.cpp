#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "prd/evalkit.hpp"

using namespace prd;

namespace {

AccuracyMatrix random_matrix(std::mt19937_64& rng, std::size_t t) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AccuracyMatrix m;
    for (std::size_t i = 0; i < t; ++i) {
        std::vector<double> row(i + 1);
        for (double& v : row) v = u(rng);
        m.append_row(std::move(row));
    }
    return m;
}

// brute-force max-scan reference
double forgetting_oracle(const AccuracyMatrix& m) {
    const std::size_t t = m.rows();
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < t; ++j) {
        double best = -1.0;
        for (std::size_t l = j; l < t - 1; ++l) best = std::max(best, m.at(l, j));
        s += best - m.at(t - 1, j);
    }
    return s / static_cast<double>(t - 1);
}

}  // namespace

TEST_CASE("accuracy matrix shape rules") {
    AccuracyMatrix m;
    m.append_row({0.5});
    CHECK_THROWS_AS(m.append_row({0.1}), std::domain_error);        // wrong length
    CHECK_THROWS_AS(m.append_row({0.1, 1.5}), std::domain_error);   // out of range
    m.append_row({0.4, 0.6});
    CHECK(m.at(1, 0) == 0.4);
    CHECK_THROWS_AS((void)m.at(0, 1), std::domain_error);  // undefined cell
}

TEST_CASE("avg_observed_accuracy worked examples") {
    AccuracyMatrix m;
    m.append_row({1.0});
    m.append_row({1.0, 0.8});
    m.append_row({1.0, 0.5, 0.0});
    CHECK(avg_observed_accuracy(m) == doctest::Approx(0.5).epsilon(1e-12));

    AccuracyMatrix single;
    single.append_row({0.73});
    CHECK(avg_observed_accuracy(single) == doctest::Approx(0.73).epsilon(1e-12));

    CHECK_THROWS_AS((void)avg_observed_accuracy(AccuracyMatrix{}), std::domain_error);
}

TEST_CASE("forgetting worked examples and oracle equivalence") {
    SUBCASE("constant matrix has zero forgetting") {
        AccuracyMatrix m;
        m.append_row({0.7});
        m.append_row({0.7, 0.7});
        m.append_row({0.7, 0.7, 0.7});
        CHECK(forgetting(m) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("single prior task") {
        AccuracyMatrix m;
        m.append_row({1.0});
        m.append_row({0.6, 1.0});
        CHECK(forgetting(m) == doctest::Approx(0.4).epsilon(1e-12));
    }
    SUBCASE("T < 2 is a domain error") {
        AccuracyMatrix m;
        m.append_row({1.0});
        CHECK_THROWS_AS((void)forgetting(m), std::domain_error);
    }
    SUBCASE("random matrices match the max-scan oracle") {
        std::mt19937_64 rng(31);
        for (int trial = 0; trial < 100; ++trial) {
            const auto m = random_matrix(rng, 2 + trial % 7);
            CHECK(forgetting(m) == doctest::Approx(forgetting_oracle(m)).epsilon(1e-12));
        }
    }
    SUBCASE("zero forgetting iff the final row carries the column maxima") {
        std::mt19937_64 rng(32);
        for (int trial = 0; trial < 100; ++trial) {
            auto m = random_matrix(rng, 3 + trial % 5);
            const std::size_t t = m.rows();
            bool final_is_max = true;
            for (std::size_t j = 0; j + 1 < t; ++j)
                for (std::size_t l = j; l < t; ++l)
                    final_is_max = final_is_max && m.at(t - 1, j) >= m.at(l, j) - 1e-15;
            CHECK((forgetting(m) <= 1e-15) == final_is_max);
        }
    }
}

TEST_CASE("avg_cumulative_incremental_accuracy") {
    CHECK(avg_cumulative_incremental_accuracy({0.8, 0.6, 0.4}) ==
          doctest::Approx(0.6).epsilon(1e-12));
    CHECK(avg_cumulative_incremental_accuracy({0.42}) == doctest::Approx(0.42).epsilon(1e-12));
    CHECK_THROWS_AS((void)avg_cumulative_incremental_accuracy({}), std::domain_error);
}

TEST_CASE("amca worked examples") {
    ClassAccuracyTable table;
    table.classes = {0, 1};
    table.values = {{1.0, 0.0}, {1.0, 0.0}};
    CHECK(amca(table) == doctest::Approx(0.5).epsilon(1e-12));

    table.values = {{1.0, 1.0}, {1.0, 1.0}};
    CHECK(amca(table) == doctest::Approx(1.0).epsilon(1e-12));

    table.values = {{1.0, std::numeric_limits<double>::quiet_NaN()}, {1.0, 1.0}};
    CHECK_THROWS_AS((void)amca(table), std::domain_error);
}

TEST_CASE("metrics are invariant to class relabeling") {
    // relabeling permutes tasks/classes consistently; the aggregate metrics
    // only see the accuracy values, so permuting the task axis of the final
    // row must not change the mean, and permuting table columns keeps amca.
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> final_row(5);
        for (double& v : final_row) v = u(rng);
        std::vector<double> shuffled = final_row;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);

        double a = 0.0, b = 0.0;
        for (double v : final_row) a += v;
        for (double v : shuffled) b += v;
        CHECK(a == doctest::Approx(b).epsilon(1e-12));

        ClassAccuracyTable t1, t2;
        t1.classes = {0, 1, 2};
        t2.classes = {2, 0, 1};
        std::vector<double> row{u(rng), u(rng), u(rng)};
        t1.values = {row};
        t2.values = {{row[2], row[0], row[1]}};
        CHECK(amca(t1) == doctest::Approx(amca(t2)).epsilon(1e-12));
    }
}

TEST_CASE("linear probe separates separable features and collapses on shuffled labels") {
    std::mt19937_64 rng(34);
    std::normal_distribution<double> g(0.0, 0.3);
    const int per_class = 40, classes = 4, dim = 6;

    Matrix train_x(per_class * classes, dim), test_x(20 * classes, dim);
    std::vector<int> train_y(train_x.rows()), test_y(test_x.rows());
    auto fill = [&](Matrix& x, std::vector<int>& y, int n_per) {
        std::size_t r = 0;
        for (int c = 0; c < classes; ++c)
            for (int i = 0; i < n_per; ++i, ++r) {
                for (int j = 0; j < dim; ++j) x(r, j) = g(rng);
                x(r, c) += 3.0;  // wide margins: linearly separable
                y[r] = c;
            }
    };
    fill(train_x, train_y, per_class);
    fill(test_x, test_y, 20);

    SUBCASE("separable case reaches accuracy 1") {
        CHECK(linear_probe(train_x, train_y, test_x, test_y) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("shuffled labels fall to chance level") {
        double mean_acc = 0.0;
        for (int rep = 0; rep < 10; ++rep) {
            std::vector<int> shuffled = train_y;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            mean_acc += linear_probe(train_x, shuffled, test_x, test_y);
        }
        mean_acc /= 10.0;
        CHECK(std::abs(mean_acc - 1.0 / classes) < 0.05);
    }

    SUBCASE("single-class probe data is a domain error") {
        std::vector<int> ones(train_y.size(), 1);
        CHECK_THROWS_AS((void)linear_probe(train_x, ones, test_x, test_y), std::domain_error);
    }
}
