#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "prd/encoder.hpp"
#include "prd/errors.hpp"

using namespace prd;

namespace {

Matrix random_inputs(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(n, dim);
    for (double& v : m.data()) v = g(rng);
    return m;
}

BackboneSpec small_mlp() {
    BackboneSpec spec;
    spec.arch = Arch::Mlp;
    spec.input_shape = {6};
    spec.hidden_dims = {8};
    spec.feature_dim = 6;
    spec.projection_dim = 4;
    spec.seed = 5;
    return spec;
}

}  // namespace

TEST_CASE("spec validation") {
    BackboneSpec spec = small_mlp();
    spec.projection_dim = 6;  // k must be < d
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = small_mlp();
    spec.feature_dim = 1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("forward_features is deterministic") {
    std::mt19937_64 rng(1);
    const Network net(small_mlp());
    const Matrix x = random_inputs(rng, 5, 6);
    CHECK(net.forward_features(x) == net.forward_features(x));

    const Network net2(small_mlp());  // same seed, fresh init
    CHECK(net.forward_features(x) == net2.forward_features(x));
}

TEST_CASE("identity-initialized single-layer MLP reproduces its inputs") {
    BackboneSpec spec;
    spec.arch = Arch::Mlp;
    spec.input_shape = {5};
    spec.hidden_dims = {};
    spec.feature_dim = 5;
    spec.projection_dim = 3;
    spec.seed = 2;
    Network net(spec);

    auto& w = net.params().tensors[0];  // backbone.0.weight, 5x5
    auto& b = net.params().tensors[1];
    std::fill(w.v.begin(), w.v.end(), 0.0);
    for (std::size_t i = 0; i < 5; ++i) w.v[i * 5 + i] = 1.0;
    std::fill(b.v.begin(), b.v.end(), 0.0);

    std::mt19937_64 rng(3);
    const Matrix x = random_inputs(rng, 4, 5);
    const Matrix f = net.forward_features(x);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
            CHECK(f(i, j) == doctest::Approx(x(i, j)).epsilon(1e-15));
}

TEST_CASE("forward_projection emits unit rows and absorbs feature scale") {
    std::mt19937_64 rng(4);
    const Network net(small_mlp());
    const Matrix x = random_inputs(rng, 6, 6);
    const Matrix f = net.forward_features(x);
    const Matrix z = net.forward_projection(f);
    for (std::size_t i = 0; i < z.rows(); ++i)
        CHECK(l2_norm(z.row(i)) == doctest::Approx(1.0).epsilon(1e-6));

    Matrix f2 = f;
    for (std::size_t j = 0; j < f2.cols(); ++j) f2(0, j) *= 2.0;
    const Matrix z2 = net.forward_projection(f2);
    CHECK(l2_norm(z2.row(0)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("normalization absorbs any positive rescaling of the head output") {
    // With a bias-free linear head, scaling the input scales the pre-norm
    // output, so the normalized projection row is identical.
    BackboneSpec spec = small_mlp();
    Network net(spec);
    // zero the projection-head biases to make g linear in its input
    for (std::size_t t = 0; t < net.params().count(); ++t)
        if (net.params().names[t].rfind("proj.", 0) == 0 &&
            net.params().names[t].ends_with(".bias"))
            std::fill(net.params().tensors[t].v.begin(), net.params().tensors[t].v.end(), 0.0);

    std::mt19937_64 rng(12);
    Matrix f = random_inputs(rng, 1, 6);
    for (double& v : f.data()) v = std::abs(v) + 0.1;  // keep ReLU pattern stable under scaling
    Matrix f2 = f;
    for (double& v : f2.data()) v *= 2.0;

    const Matrix z1 = net.forward_projection(f);
    const Matrix z2 = net.forward_projection(f2);
    for (std::size_t j = 0; j < z1.cols(); ++j)
        CHECK(z1(0, j) == doctest::Approx(z2(0, j)).epsilon(1e-10));
}

TEST_CASE("zero feature row produces a numeric error") {
    const Network net(small_mlp());
    Matrix f(2, 6, 0.0);
    f(0, 0) = 1.0;  // row 1 stays all-zero
    CHECK_THROWS_AS((void)net.forward_projection(f), NumericError);
}

TEST_CASE("network gradients match finite differences (MLP)") {
    std::mt19937_64 rng(6);
    Network net(small_mlp());
    const Matrix x = random_inputs(rng, 3, 6);

    // scalar probe: sum of elementwise products with fixed random coefficients
    Matrix rp(3, 4), rf(3, 6);
    for (double& v : rp.data()) v = std::normal_distribution<double>(0.0, 1.0)(rng);
    for (double& v : rf.data()) v = std::normal_distribution<double>(0.0, 1.0)(rng);

    auto value = [&] {
        ForwardCache cache;
        const Matrix f = net.forward_features(x, cache);
        const Matrix z = net.forward_projection(f, cache);
        double s = 0.0;
        for (std::size_t i = 0; i < z.rows(); ++i)
            for (std::size_t j = 0; j < z.cols(); ++j) s += rp(i, j) * z(i, j);
        for (std::size_t i = 0; i < f.rows(); ++i)
            for (std::size_t j = 0; j < f.cols(); ++j) s += rf(i, j) * f(i, j);
        return s;
    };

    ForwardCache cache;
    (void)net.forward_features(x, cache);
    (void)net.forward_projection(cache.features, cache);
    const ParameterState analytic = net.backward(cache, rp, rf);

    for (std::size_t t = 0; t < net.params().count(); ++t) {
        auto& tensor = net.params().tensors[t];
        const auto numeric = oracle::fd_gradient(value, tensor.v.data(), tensor.v.size(), 1e-5);
        CHECK(oracle::grad_rel_err(analytic.tensors[t].v, numeric) < 1e-4);
    }
}

TEST_CASE("network gradients match finite differences (small conv net)") {
    BackboneSpec spec;
    spec.arch = Arch::SmallConvNet;
    spec.input_shape = {2, 8, 8};
    spec.feature_dim = 6;
    spec.projection_dim = 3;
    spec.seed = 7;
    Network net(spec);

    std::mt19937_64 rng(8);
    const Matrix x = random_inputs(rng, 2, 2 * 8 * 8);
    Matrix rp(2, 3);
    for (double& v : rp.data()) v = std::normal_distribution<double>(0.0, 1.0)(rng);

    auto value = [&] {
        ForwardCache cache;
        const Matrix f = net.forward_features(x, cache);
        const Matrix z = net.forward_projection(f, cache);
        double s = 0.0;
        for (std::size_t i = 0; i < z.rows(); ++i)
            for (std::size_t j = 0; j < z.cols(); ++j) s += rp(i, j) * z(i, j);
        return s;
    };

    ForwardCache cache;
    (void)net.forward_features(x, cache);
    (void)net.forward_projection(cache.features, cache);
    const ParameterState analytic = net.backward(cache, rp, Matrix());

    // checking every conv weight is slow; sample the tensors
    for (std::size_t t = 0; t < net.params().count(); t += 2) {
        auto& tensor = net.params().tensors[t];
        const auto numeric = oracle::fd_gradient(value, tensor.v.data(), tensor.v.size(), 1e-5);
        CHECK(oracle::grad_rel_err(analytic.tensors[t].v, numeric) < 1e-4);
    }
}

TEST_CASE("clone_frozen is mutation-isolated and bit-stable through serialization") {
    Network net(small_mlp());
    const ParameterState clone = net.clone_frozen();

    net.params().tensors[0].v[0] += 42.0;
    CHECK(clone.tensors[0].v[0] != net.params().tensors[0].v[0]);

    const ParameterState clone2 = clone;  // clone-of-clone
    CHECK(clone2 == clone);

    const auto path = std::filesystem::temp_directory_path() / "prd_ckpt_test.bin";
    Network restored_src(small_mlp());
    save_checkpoint(path, restored_src);
    const Network restored = load_checkpoint(path);
    CHECK(restored.params() == restored_src.params());
    CHECK(restored.spec().input_shape == restored_src.spec().input_shape);

    save_checkpoint(path, restored);  // second round trip, bit-stable
    const Network restored2 = load_checkpoint(path);
    CHECK(restored2.params() == restored.params());
    std::filesystem::remove(path);
}

TEST_CASE("no parameter storage is shared between a network and its copies") {
    Network net(small_mlp());
    const Network copy = net;
    for (std::size_t t = 0; t < net.params().count(); ++t)
        CHECK(net.params().tensors[t].v.data() != copy.params().tensors[t].v.data());
}

TEST_CASE("mismatched input shape raises a domain error") {
    const Network net(small_mlp());
    CHECK_THROWS_AS((void)net.forward_features(Matrix(2, 5, 0.1)), std::domain_error);
    CHECK_THROWS_AS((void)net.forward_projection(Matrix(2, 5, 0.1)), std::domain_error);
}
