#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "prd/errors.hpp"
#include "prd/stream.hpp"

using namespace prd;

namespace {

SyntheticSpec desk_spec() {
    SyntheticSpec s;
    s.classes = 10;
    s.dim = 8;
    s.train_per_class = 12;
    s.test_per_class = 5;
    s.seed = 3;
    return s;
}

}  // namespace

TEST_CASE("synthetic dataset shape and determinism") {
    const Dataset a = Dataset::synthetic_gaussian(desk_spec());
    CHECK(a.train_x.rows() == 120);
    CHECK(a.test_x.rows() == 50);
    CHECK(a.class_ids().size() == 10);

    const Dataset b = Dataset::synthetic_gaussian(desk_spec());
    CHECK(a.train_x == b.train_x);
    CHECK(a.test_y == b.test_y);
}

TEST_CASE("build_stream: disjoint deterministic partitions") {
    const Dataset data = Dataset::synthetic_gaussian(desk_spec());
    const auto sessions = build_stream(data, 5, 2, 77);
    REQUIRE(sessions.size() == 5);

    std::set<int> seen;
    for (const auto& s : sessions) {
        CHECK(s.classes.size() == 2);
        for (int c : s.classes) CHECK(seen.insert(c).second);  // pairwise disjoint
        for (std::size_t r : s.train_indices)
            CHECK(std::count(s.classes.begin(), s.classes.end(), data.train_y[r]) == 1);
        CHECK(s.train_indices.size() == 24);
        CHECK(s.test_indices.size() == 10);
    }

    const auto again = build_stream(data, 5, 2, 77);
    for (std::size_t i = 0; i < sessions.size(); ++i) {
        CHECK(sessions[i].classes == again[i].classes);
        CHECK(sessions[i].train_indices == again[i].train_indices);
    }

    const auto other = build_stream(data, 5, 2, 78);
    bool any_diff = false;
    for (std::size_t i = 0; i < sessions.size(); ++i)
        any_diff = any_diff || sessions[i].classes != other[i].classes;
    CHECK(any_diff);
}

TEST_CASE("build_stream: single-task stream covers everything; errors on overflow") {
    const Dataset data = Dataset::synthetic_gaussian(desk_spec());
    const auto iid = build_stream(data, 1, 10, 5);
    CHECK(iid.size() == 1);
    CHECK(iid[0].train_indices.size() == data.train_x.rows());

    CHECK_THROWS_AS(build_stream(data, 6, 2, 5), ConfigError);  // needs 12 classes
}

TEST_CASE("two-view batches: pairing, labels and epoch wrap") {
    const Dataset data = Dataset::synthetic_gaussian(desk_spec());
    const auto sessions = build_stream(data, 5, 2, 77);

    AugmentationSpec aug;
    aug.kind = AugmentationSpec::Kind::VectorJitter;
    aug.jitter_sigma = 0.05;

    BatchSampler sampler(data, sessions[0], aug, 5, 123);
    CHECK(sampler.steps_per_epoch() == 5);  // 24 sources, 5 per batch

    for (int step = 0; step < 12; ++step) {  // crosses epoch boundaries
        const TwoViewBatch batch = sampler.next();
        REQUIRE(batch.labels.size() == 10);
        for (std::size_t s = 0; s < 5; ++s) {
            CHECK(batch.view_of[2 * s] == batch.view_of[2 * s + 1]);
            CHECK(batch.labels[2 * s] == batch.labels[2 * s + 1]);
            CHECK(batch.source_index[2 * s] == batch.source_index[2 * s + 1]);
            const int label = batch.labels[2 * s];
            CHECK(std::count(sessions[0].classes.begin(), sessions[0].classes.end(), label) == 1);
        }
    }
}

TEST_CASE("a batch larger than the session wraps with a reshuffle") {
    const Dataset data = Dataset::synthetic_gaussian(desk_spec());
    const auto sessions = build_stream(data, 5, 2, 77);
    AugmentationSpec aug;
    aug.kind = AugmentationSpec::Kind::Identity;

    BatchSampler sampler(data, sessions[0], aug, 30, 9);  // 24 sources only
    const TwoViewBatch batch = sampler.next();
    CHECK(batch.labels.size() == 60);
    std::set<std::size_t> sources(batch.source_index.begin(), batch.source_index.end());
    CHECK(sources.size() == 24);  // full coverage plus wrapped repeats
}

TEST_CASE("identity augmentation yields bit-equal view pairs") {
    const Dataset data = Dataset::synthetic_gaussian(desk_spec());
    const auto sessions = build_stream(data, 5, 2, 77);
    AugmentationSpec aug;
    aug.kind = AugmentationSpec::Kind::Identity;

    BatchSampler sampler(data, sessions[0], aug, 4, 5);
    const TwoViewBatch batch = sampler.next();
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t j = 0; j < batch.inputs.cols(); ++j)
            CHECK(batch.inputs(2 * s, j) == batch.inputs(2 * s + 1, j));
}

TEST_CASE("fixed seeds reproduce the exact batch sequence") {
    const Dataset data = Dataset::synthetic_gaussian(desk_spec());
    const auto sessions = build_stream(data, 5, 2, 77);
    AugmentationSpec aug;
    aug.jitter_sigma = 0.1;

    BatchSampler a(data, sessions[1], aug, 6, 42);
    BatchSampler b(data, sessions[1], aug, 6, 42);
    for (int step = 0; step < 8; ++step) {
        const TwoViewBatch ba = a.next(), bb = b.next();
        CHECK(ba.inputs == bb.inputs);
        CHECK(ba.labels == bb.labels);
        CHECK(ba.source_index == bb.source_index);
    }
}

TEST_CASE("image pipeline augmentation stays in shape and is seeded") {
    TinyImageSpec spec;
    spec.classes = 3;
    spec.size = 16;
    spec.train_per_class = 4;
    spec.test_per_class = 2;
    const Dataset data = Dataset::tiny_images(spec);
    CHECK(data.input_shape == std::vector<std::size_t>{3, 16, 16});

    AugmentationSpec aug;
    aug.kind = AugmentationSpec::Kind::ImagePipeline;
    Rng r1(7), r2(7);
    std::vector<double> out1(data.input_size()), out2(data.input_size());
    augment_view(data.train_x.row(0), out1, aug, data.input_shape, r1);
    augment_view(data.train_x.row(0), out2, aug, data.input_shape, r2);
    CHECK(out1 == out2);
}

TEST_CASE("replay buffer ring semantics") {
    ReplayBuffer buffer(2);

    auto stored = [](int label, double v) {
        ReplayBuffer::Stored s;
        s.input = {v};
        s.label = label;
        s.source_session = 1;
        s.source_index = static_cast<std::size_t>(v);
        return s;
    };

    SUBCASE("overflow keeps the newest entries of the class") {
        buffer.insert(stored(0, 1));
        buffer.insert(stored(0, 2));
        buffer.insert(stored(0, 3));
        CHECK(buffer.per_class_counts().at(0) == 2);
        Rng rng(1);
        const auto all = buffer.sample(2, rng);
        std::set<double> values;
        for (const auto& s : all) values.insert(s.input[0]);
        CHECK(values == std::set<double>{2.0, 3.0});
    }

    SUBCASE("per-class capacity holds across classes") {
        ReplayBuffer b(5);
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 9; ++i) b.insert(stored(c, c * 100 + i));
        for (const auto& [c, n] : b.per_class_counts()) CHECK(n == 5);
        CHECK(b.total() == 15);
    }

    SUBCASE("deterministic contents given insertion order") {
        ReplayBuffer a(3), b(3);
        for (int i = 0; i < 10; ++i) {
            a.insert(stored(i % 2, i));
            b.insert(stored(i % 2, i));
        }
        Rng ra(5), rb(5);
        const auto sa = a.sample(6, ra), sb = b.sample(6, rb);
        REQUIRE(sa.size() == sb.size());
        for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].input == sb[i].input);
    }
}

TEST_CASE("replay sampling: edge cases and class frequencies") {
    ReplayBuffer buffer(50);
    Rng rng(11);

    SUBCASE("n = 0 and empty buffer produce empty draws") {
        CHECK(buffer.sample(0, rng).empty());
        CHECK(buffer.sample(5, rng).empty());
    }

    SUBCASE("draw frequencies track buffer composition") {
        // class 0: 30 items, class 1: 10 items -> expect 3:1 draws
        for (int i = 0; i < 30; ++i) {
            ReplayBuffer::Stored s;
            s.input = {0.0};
            s.label = 0;
            s.source_session = 1;
            s.source_index = 0;
            buffer.insert(s);
        }
        for (int i = 0; i < 10; ++i) {
            ReplayBuffer::Stored s;
            s.input = {1.0};
            s.label = 1;
            s.source_session = 1;
            s.source_index = 0;
            buffer.insert(s);
        }
        std::size_t class0 = 0, total = 0;
        for (int rep = 0; rep < 100; ++rep) {
            // 100 draws of 100 with replacement (n > occupancy)
            for (const auto& s : buffer.sample(100, rng)) {
                class0 += (s.label == 0);
                ++total;
            }
        }
        const double expected = 0.75, got = static_cast<double>(class0) / total;
        // chi-square-style sanity at 10k draws: 3 sigma of sqrt(p(1-p)/n)
        CHECK(std::abs(got - expected) < 3.0 * std::sqrt(0.75 * 0.25 / 10000.0) + 0.01);
    }
}

TEST_CASE("access log separates current and prior session reads") {
    const Dataset data = Dataset::synthetic_gaussian(desk_spec());
    const auto sessions = build_stream(data, 5, 2, 77);
    AugmentationSpec aug;

    AccessLog log;
    BatchSampler sampler(data, sessions[2], aug, 4, 3, &log);
    (void)sampler.next();
    CHECK(log.entries.size() == 4);
    for (const auto& e : log.entries) {
        CHECK(e.training_session == 3);
        CHECK(e.source_session == 3);
    }
    CHECK(log.prior_session_reads() == 0);

    log.record(3, 1, 17);  // a replay read of session-1 data
    CHECK(log.prior_session_reads() == 1);
}

TEST_CASE("domain-incremental stream repeats classes across phases") {
    SyntheticSpec spec = desk_spec();
    spec.classes = 4;
    const Dataset data = Dataset::synthetic_gaussian_domain(spec, 3, 0.4);
    const auto sessions = build_domain_stream(data, 3);
    REQUIRE(sessions.size() == 3);
    for (const auto& s : sessions) {
        CHECK(s.classes.size() == 4);
        CHECK(s.train_indices.size() == 4 * spec.train_per_class);
    }
    // phases shift the distribution: same class, different phase means
    double shift = 0.0;
    for (std::size_t j = 0; j < data.train_x.cols(); ++j)
        shift += std::abs(data.train_x(sessions[0].train_indices[0], j) -
                          data.train_x(sessions[2].train_indices[0], j));
    CHECK(shift > 0.0);
}

TEST_CASE("dataset directory round trip") {
    const Dataset data = Dataset::synthetic_gaussian(desk_spec());
    const auto dir = std::filesystem::temp_directory_path() / "prd_dataset_test";
    data.save_dir(dir);
    const Dataset loaded = Dataset::load_dir(dir);
    CHECK(loaded.input_shape == data.input_shape);
    CHECK(loaded.train_x == data.train_x);
    CHECK(loaded.train_y == data.train_y);
    CHECK(loaded.test_x == data.test_x);
    std::filesystem::remove_all(dir);
}
