#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prd/tensor.hpp"

namespace prd {

enum class Arch { Mlp, SmallConvNet };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& name);

// Architecture description of encoder f: input -> R^d and projection head
// g: R^d -> R^k (k < d). The projection head is a 2-layer perceptron of
// hidden width d whose output rows are L2-normalized.
struct BackboneSpec {
    Arch arch = Arch::Mlp;
    std::vector<std::size_t> input_shape;          // {dim} for MLP, {C,H,W} for conv
    std::vector<std::size_t> hidden_dims = {64, 64};  // MLP hidden widths; may be empty
    std::size_t feature_dim = 32;                  // d
    std::size_t projection_dim = 16;               // k
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t input_size() const;
};

// Flat ordered collection of named parameter tensors.
struct ParameterState {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    std::size_t count() const { return tensors.size(); }
    std::size_t total_size() const;
    bool all_finite() const;
    double flat_norm() const;

    friend bool operator==(const ParameterState& a, const ParameterState& b) {
        return a.names == b.names && a.tensors == b.tensors;
    }
};

// Activations recorded during a training forward pass, consumed by backward().
struct ForwardCache {
    Matrix inputs;
    std::vector<Matrix> backbone_acts;   // input to each backbone layer
    std::vector<std::vector<std::size_t>> pool_argmax;
    Matrix features;
    std::vector<Matrix> proj_acts;       // input to each projection layer
    Matrix pre_norm;                     // projection output before row normalization
    std::vector<double> row_norms;
};

// Encoder + projection head with explicit parameters and manual backprop.
// Value semantics: copying a Network deep-copies every parameter.
class Network {
public:
    explicit Network(const BackboneSpec& spec);
    Network(const BackboneSpec& spec, ParameterState params);

    const BackboneSpec& spec() const { return spec_; }
    ParameterState& params() { return params_; }
    const ParameterState& params() const { return params_; }

    // f(x): deterministic in (params, inputs). Rows of `inputs` are samples.
    Matrix forward_features(const Matrix& inputs) const;
    Matrix forward_features(const Matrix& inputs, ForwardCache& cache) const;

    // g(f(x)) with L2-normalized rows. Throws NumericError on a zero feature row.
    Matrix forward_projection(const Matrix& features) const;
    Matrix forward_projection(const Matrix& features, ForwardCache& cache) const;

    // Accumulates parameter gradients for upstream gradients d_projections
    // (N x k, may be empty) and d_features (N x d, may be empty; applied to
    // the features directly, bypassing the projection head).
    ParameterState backward(const ForwardCache& cache, const Matrix& d_projections,
                            const Matrix& d_features) const;

    // Deep, mutation-isolated copy of the parameters.
    ParameterState clone_frozen() const { return params_; }

    ParameterState zero_grads_like() const;

private:
    struct Layer {
        enum class Kind { Dense, Relu, Conv3x3, MaxPool2, GlobalAvgPool };
        Kind kind;
        std::size_t in = 0, out = 0;   // dense dims, or channels for conv
        std::size_t h = 0, w = 0;      // input spatial dims (conv/pool/gap)
        int wi = -1, bi = -1;          // parameter indices
    };

    void build_layers();
    void init_params();

    Matrix run_layers(const std::vector<Layer>& layers, const Matrix& input,
                      std::vector<Matrix>* acts,
                      std::vector<std::vector<std::size_t>>* pool_argmax) const;
    Matrix backprop_layers(const std::vector<Layer>& layers,
                           const std::vector<Matrix>& acts,
                           const std::vector<std::vector<std::size_t>>& pool_argmax,
                           Matrix grad, ParameterState& grads) const;

    BackboneSpec spec_;
    ParameterState params_;
    std::vector<Layer> backbone_;
    std::vector<Layer> proj_;
    std::size_t n_pool_layers_ = 0;
};

// Versioned binary checkpoint: manifest (names, shapes, seed, architecture id)
// followed by raw little-endian doubles. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace prd
