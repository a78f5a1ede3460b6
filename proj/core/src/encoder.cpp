#include "prd/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

#include "prd/errors.hpp"
#include "prd/rng.hpp"

namespace prd {

std::string arch_name(Arch a) {
    return a == Arch::Mlp ? "mlp" : "small_convnet";
}

Arch arch_from_name(const std::string& name) {
    if (name == "mlp") return Arch::Mlp;
    if (name == "small_convnet") return Arch::SmallConvNet;
    throw ConfigError("unknown architecture id: " + name);
}

void BackboneSpec::validate() const {
    if (feature_dim < 2 || projection_dim < 2)
        throw ConfigError("BackboneSpec: feature_dim and projection_dim must be >= 2");
    if (projection_dim >= feature_dim)
        throw ConfigError("BackboneSpec: projection_dim must be < feature_dim");
    if (arch == Arch::Mlp) {
        if (input_shape.size() != 1 || input_shape[0] == 0)
            throw ConfigError("BackboneSpec: mlp expects input_shape {dim}");
    } else {
        if (input_shape.size() != 3)
            throw ConfigError("BackboneSpec: small_convnet expects input_shape {C,H,W}");
        if (input_shape[1] < 4 || input_shape[2] < 4)
            throw ConfigError("BackboneSpec: small_convnet needs spatial dims >= 4");
    }
}

std::size_t BackboneSpec::input_size() const {
    std::size_t n = 1;
    for (std::size_t d : input_shape) n *= d;
    return n;
}

std::size_t ParameterState::total_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

bool ParameterState::all_finite() const {
    for (const auto& t : tensors)
        for (double v : t.v)
            if (!std::isfinite(v)) return false;
    return true;
}

double ParameterState::flat_norm() const {
    double s = 0.0;
    for (const auto& t : tensors)
        for (double v : t.v) s += v * v;
    return std::sqrt(s);
}

Network::Network(const BackboneSpec& spec) : spec_(spec) {
    spec_.validate();
    build_layers();
    init_params();
}

Network::Network(const BackboneSpec& spec, ParameterState params) : spec_(spec) {
    spec_.validate();
    build_layers();
    ParameterState expected = std::move(params_);
    params_ = std::move(params);
    if (params_.names != expected.names)
        throw StateError("Network: parameter names do not match architecture");
    for (std::size_t i = 0; i < params_.count(); ++i)
        if (params_.tensors[i].shape != expected.tensors[i].shape)
            throw StateError("Network: parameter shape mismatch for " + params_.names[i]);
}

void Network::build_layers() {
    auto add_dense = [&](std::vector<Layer>& dst, const std::string& prefix,
                         std::size_t in, std::size_t out) {
        Layer l;
        l.kind = Layer::Kind::Dense;
        l.in = in;
        l.out = out;
        l.wi = static_cast<int>(params_.count());
        params_.names.push_back(prefix + ".weight");
        params_.tensors.emplace_back(std::vector<std::size_t>{in, out});
        l.bi = static_cast<int>(params_.count());
        params_.names.push_back(prefix + ".bias");
        params_.tensors.emplace_back(std::vector<std::size_t>{out});
        dst.push_back(l);
    };
    auto add_relu = [&](std::vector<Layer>& dst) {
        Layer l;
        l.kind = Layer::Kind::Relu;
        dst.push_back(l);
    };

    if (spec_.arch == Arch::Mlp) {
        std::size_t cur = spec_.input_shape[0];
        std::size_t idx = 0;
        for (std::size_t hdim : spec_.hidden_dims) {
            add_dense(backbone_, "backbone." + std::to_string(idx++), cur, hdim);
            add_relu(backbone_);
            cur = hdim;
        }
        add_dense(backbone_, "backbone." + std::to_string(idx), cur, spec_.feature_dim);
    } else {
        const std::size_t channels[4] = {spec_.input_shape[0], 8, 16, 32};
        std::size_t h = spec_.input_shape[1], w = spec_.input_shape[2];
        std::size_t idx = 0;
        for (int stage = 0; stage < 3; ++stage) {
            Layer conv;
            conv.kind = Layer::Kind::Conv3x3;
            conv.in = channels[stage];
            conv.out = channels[stage + 1];
            conv.h = h;
            conv.w = w;
            conv.wi = static_cast<int>(params_.count());
            params_.names.push_back("backbone." + std::to_string(idx) + ".weight");
            params_.tensors.emplace_back(std::vector<std::size_t>{conv.out, conv.in, 3, 3});
            conv.bi = static_cast<int>(params_.count());
            params_.names.push_back("backbone." + std::to_string(idx) + ".bias");
            params_.tensors.emplace_back(std::vector<std::size_t>{conv.out});
            backbone_.push_back(conv);
            add_relu(backbone_);
            ++idx;
            if (stage < 2) {
                Layer pool;
                pool.kind = Layer::Kind::MaxPool2;
                pool.in = channels[stage + 1];
                pool.h = h;
                pool.w = w;
                backbone_.push_back(pool);
                h /= 2;
                w /= 2;
                ++n_pool_layers_;
            }
        }
        Layer gap;
        gap.kind = Layer::Kind::GlobalAvgPool;
        gap.in = channels[3];
        gap.h = h;
        gap.w = w;
        backbone_.push_back(gap);
        add_dense(backbone_, "backbone." + std::to_string(idx), channels[3], spec_.feature_dim);
    }

    add_dense(proj_, "proj.0", spec_.feature_dim, spec_.feature_dim);
    add_relu(proj_);
    add_dense(proj_, "proj.1", spec_.feature_dim, spec_.projection_dim);
}

void Network::init_params() {
    // He init for weights feeding a ReLU, 1/fan_in for the stack outputs.
    const int backbone_final_wi = [&] {
        for (auto it = backbone_.rbegin(); it != backbone_.rend(); ++it)
            if (it->wi >= 0) return it->wi;
        return -1;
    }();
    const int proj_final_wi = proj_.back().wi;

    for (std::size_t i = 0; i < params_.count(); ++i) {
        Tensor& t = params_.tensors[i];
        const bool is_bias = params_.names[i].ends_with(".bias");
        if (is_bias) continue;  // biases start at zero
        std::size_t fan_in = 1;
        if (t.shape.size() == 2) {
            fan_in = t.shape[0];
        } else {  // conv {cout, cin, kh, kw}
            fan_in = t.shape[1] * t.shape[2] * t.shape[3];
        }
        const bool feeds_relu =
            static_cast<int>(i) != backbone_final_wi && static_cast<int>(i) != proj_final_wi;
        const double stddev = std::sqrt((feeds_relu ? 2.0 : 1.0) / static_cast<double>(fan_in));
        Rng rng = make_rng(spec_.seed, rng_tag::kNetworkInit + 100 * i);
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& v : t.v) v = dist(rng);
    }
}

static Matrix dense_forward(const Matrix& x, const Tensor& w, const Tensor& b) {
    const std::size_t in = w.shape[0], out = w.shape[1];
    Matrix y(x.rows(), out);
    for (std::size_t n = 0; n < x.rows(); ++n) {
        for (std::size_t o = 0; o < out; ++o) {
            double s = b.v[o];
            for (std::size_t i = 0; i < in; ++i) s += x(n, i) * w.v[i * out + o];
            y(n, o) = s;
        }
    }
    return y;
}

static std::size_t chw(std::size_t c, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    return c * h * w + y * w + x;
}

Matrix Network::run_layers(const std::vector<Layer>& layers, const Matrix& input,
                           std::vector<Matrix>* acts,
                           std::vector<std::vector<std::size_t>>* pool_argmax) const {
    Matrix cur = input;
    for (const Layer& l : layers) {
        if (acts) acts->push_back(cur);
        switch (l.kind) {
            case Layer::Kind::Dense:
                cur = dense_forward(cur, params_.tensors[l.wi], params_.tensors[l.bi]);
                break;
            case Layer::Kind::Relu: {
                Matrix y = cur;
                for (double& v : y.data()) v = std::max(v, 0.0);
                cur = std::move(y);
                break;
            }
            case Layer::Kind::Conv3x3: {
                const Tensor& w = params_.tensors[l.wi];
                const Tensor& b = params_.tensors[l.bi];
                const std::size_t H = l.h, W = l.w, Ci = l.in, Co = l.out;
                Matrix y(cur.rows(), Co * H * W);
                for (std::size_t n = 0; n < cur.rows(); ++n) {
                    auto xr = cur.row(n);
                    auto yr = y.row(n);
                    for (std::size_t co = 0; co < Co; ++co)
                        for (std::size_t py = 0; py < H; ++py)
                            for (std::size_t px = 0; px < W; ++px) {
                                double s = b.v[co];
                                for (std::size_t ci = 0; ci < Ci; ++ci)
                                    for (int ky = -1; ky <= 1; ++ky)
                                        for (int kx = -1; kx <= 1; ++kx) {
                                            const long iy = static_cast<long>(py) + ky;
                                            const long ix = static_cast<long>(px) + kx;
                                            if (iy < 0 || ix < 0 ||
                                                iy >= static_cast<long>(H) ||
                                                ix >= static_cast<long>(W))
                                                continue;
                                            const std::size_t widx =
                                                ((co * Ci + ci) * 3 + (ky + 1)) * 3 + (kx + 1);
                                            s += w.v[widx] * xr[chw(ci, iy, ix, H, W)];
                                        }
                                yr[chw(co, py, px, H, W)] = s;
                            }
                }
                cur = std::move(y);
                break;
            }
            case Layer::Kind::MaxPool2: {
                const std::size_t H = l.h, W = l.w, C = l.in;
                const std::size_t Ho = H / 2, Wo = W / 2;
                Matrix y(cur.rows(), C * Ho * Wo);
                std::vector<std::size_t> argmax(cur.rows() * C * Ho * Wo);
                for (std::size_t n = 0; n < cur.rows(); ++n) {
                    auto xr = cur.row(n);
                    auto yr = y.row(n);
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t py = 0; py < Ho; ++py)
                            for (std::size_t px = 0; px < Wo; ++px) {
                                std::size_t best = chw(c, 2 * py, 2 * px, H, W);
                                double bv = xr[best];
                                for (int dy = 0; dy < 2; ++dy)
                                    for (int dx = 0; dx < 2; ++dx) {
                                        const std::size_t idx =
                                            chw(c, 2 * py + dy, 2 * px + dx, H, W);
                                        if (xr[idx] > bv) {
                                            bv = xr[idx];
                                            best = idx;
                                        }
                                    }
                                const std::size_t oidx = chw(c, py, px, Ho, Wo);
                                yr[oidx] = bv;
                                argmax[n * C * Ho * Wo + oidx] = best;
                            }
                }
                if (pool_argmax) pool_argmax->push_back(std::move(argmax));
                cur = std::move(y);
                break;
            }
            case Layer::Kind::GlobalAvgPool: {
                const std::size_t H = l.h, W = l.w, C = l.in;
                Matrix y(cur.rows(), C);
                for (std::size_t n = 0; n < cur.rows(); ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        double s = 0.0;
                        for (std::size_t p = 0; p < H * W; ++p)
                            s += cur(n, c * H * W + p);
                        y(n, c) = s / static_cast<double>(H * W);
                    }
                cur = std::move(y);
                break;
            }
        }
    }
    return cur;
}

Matrix Network::forward_features(const Matrix& inputs) const {
    if (inputs.cols() != spec_.input_size())
        throw std::domain_error("forward_features: input shape mismatch");
    return run_layers(backbone_, inputs, nullptr, nullptr);
}

Matrix Network::forward_features(const Matrix& inputs, ForwardCache& cache) const {
    if (inputs.cols() != spec_.input_size())
        throw std::domain_error("forward_features: input shape mismatch");
    cache.inputs = inputs;
    cache.backbone_acts.clear();
    cache.pool_argmax.clear();
    cache.features = run_layers(backbone_, inputs, &cache.backbone_acts, &cache.pool_argmax);
    return cache.features;
}

static Matrix normalize_rows(const Matrix& x, std::vector<double>* norms) {
    Matrix y = x;
    if (norms) norms->assign(x.rows(), 0.0);
    for (std::size_t n = 0; n < x.rows(); ++n) {
        const double r = l2_norm(x.row(n));
        if (r == 0.0)
            throw NumericError("forward_projection: zero-norm projection row " +
                               std::to_string(n));
        if (norms) (*norms)[n] = r;
        for (std::size_t j = 0; j < x.cols(); ++j) y(n, j) /= r;
    }
    return y;
}

Matrix Network::forward_projection(const Matrix& features) const {
    if (features.cols() != spec_.feature_dim)
        throw std::domain_error("forward_projection: feature dim mismatch");
    for (std::size_t n = 0; n < features.rows(); ++n)
        if (l2_norm(features.row(n)) == 0.0)
            throw NumericError("forward_projection: zero feature row " + std::to_string(n));
    Matrix pre = run_layers(proj_, features, nullptr, nullptr);
    return normalize_rows(pre, nullptr);
}

Matrix Network::forward_projection(const Matrix& features, ForwardCache& cache) const {
    if (features.cols() != spec_.feature_dim)
        throw std::domain_error("forward_projection: feature dim mismatch");
    for (std::size_t n = 0; n < features.rows(); ++n)
        if (l2_norm(features.row(n)) == 0.0)
            throw NumericError("forward_projection: zero feature row " + std::to_string(n));
    cache.proj_acts.clear();
    cache.pre_norm = run_layers(proj_, features, &cache.proj_acts, nullptr);
    return normalize_rows(cache.pre_norm, &cache.row_norms);
}

ParameterState Network::zero_grads_like() const {
    ParameterState g;
    g.names = params_.names;
    g.tensors.reserve(params_.count());
    for (const auto& t : params_.tensors) g.tensors.emplace_back(t.shape);
    return g;
}

Matrix Network::backprop_layers(const std::vector<Layer>& layers,
                                const std::vector<Matrix>& acts,
                                const std::vector<std::vector<std::size_t>>& pool_argmax,
                                Matrix grad, ParameterState& grads) const {
    std::size_t pool_slot = pool_argmax.size();
    for (std::size_t li = layers.size(); li-- > 0;) {
        const Layer& l = layers[li];
        const Matrix& x = acts[li];
        switch (l.kind) {
            case Layer::Kind::Dense: {
                const Tensor& w = params_.tensors[l.wi];
                Tensor& dw = grads.tensors[l.wi];
                Tensor& db = grads.tensors[l.bi];
                Matrix dx(x.rows(), l.in);
                for (std::size_t n = 0; n < x.rows(); ++n)
                    for (std::size_t o = 0; o < l.out; ++o) {
                        const double g = grad(n, o);
                        db.v[o] += g;
                        for (std::size_t i = 0; i < l.in; ++i) {
                            dw.v[i * l.out + o] += x(n, i) * g;
                            dx(n, i) += w.v[i * l.out + o] * g;
                        }
                    }
                grad = std::move(dx);
                break;
            }
            case Layer::Kind::Relu: {
                for (std::size_t n = 0; n < x.rows(); ++n)
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        if (x(n, j) <= 0.0) grad(n, j) = 0.0;
                break;
            }
            case Layer::Kind::Conv3x3: {
                const Tensor& w = params_.tensors[l.wi];
                Tensor& dw = grads.tensors[l.wi];
                Tensor& db = grads.tensors[l.bi];
                const std::size_t H = l.h, W = l.w, Ci = l.in, Co = l.out;
                Matrix dx(x.rows(), Ci * H * W);
                for (std::size_t n = 0; n < x.rows(); ++n) {
                    auto xr = x.row(n);
                    auto gr = grad.row(n);
                    auto dxr = dx.row(n);
                    for (std::size_t co = 0; co < Co; ++co)
                        for (std::size_t py = 0; py < H; ++py)
                            for (std::size_t px = 0; px < W; ++px) {
                                const double g = gr[chw(co, py, px, H, W)];
                                if (g == 0.0) continue;
                                db.v[co] += g;
                                for (std::size_t ci = 0; ci < Ci; ++ci)
                                    for (int ky = -1; ky <= 1; ++ky)
                                        for (int kx = -1; kx <= 1; ++kx) {
                                            const long iy = static_cast<long>(py) + ky;
                                            const long ix = static_cast<long>(px) + kx;
                                            if (iy < 0 || ix < 0 ||
                                                iy >= static_cast<long>(H) ||
                                                ix >= static_cast<long>(W))
                                                continue;
                                            const std::size_t widx =
                                                ((co * Ci + ci) * 3 + (ky + 1)) * 3 + (kx + 1);
                                            const std::size_t xidx = chw(ci, iy, ix, H, W);
                                            dw.v[widx] += g * xr[xidx];
                                            dxr[xidx] += g * w.v[widx];
                                        }
                            }
                }
                grad = std::move(dx);
                break;
            }
            case Layer::Kind::MaxPool2: {
                --pool_slot;
                const auto& argmax = pool_argmax[pool_slot];
                const std::size_t out_cols = grad.cols();
                Matrix dx(x.rows(), x.cols());
                for (std::size_t n = 0; n < x.rows(); ++n)
                    for (std::size_t j = 0; j < out_cols; ++j)
                        dx(n, argmax[n * out_cols + j]) += grad(n, j);
                grad = std::move(dx);
                break;
            }
            case Layer::Kind::GlobalAvgPool: {
                const std::size_t H = l.h, W = l.w, C = l.in;
                const double inv = 1.0 / static_cast<double>(H * W);
                Matrix dx(x.rows(), C * H * W);
                for (std::size_t n = 0; n < x.rows(); ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const double g = grad(n, c) * inv;
                        for (std::size_t p = 0; p < H * W; ++p)
                            dx(n, c * H * W + p) = g;
                    }
                grad = std::move(dx);
                break;
            }
        }
    }
    return grad;
}

ParameterState Network::backward(const ForwardCache& cache, const Matrix& d_projections,
                                 const Matrix& d_features) const {
    ParameterState grads = zero_grads_like();

    Matrix d_feat_total;
    if (!d_projections.empty()) {
        if (d_projections.rows() != cache.pre_norm.rows() ||
            d_projections.cols() != cache.pre_norm.cols())
            throw std::domain_error("backward: d_projections shape mismatch");
        // Through row normalization: dx = (dy - (dy . y_hat) y_hat) / r.
        Matrix d_pre(cache.pre_norm.rows(), cache.pre_norm.cols());
        for (std::size_t n = 0; n < d_pre.rows(); ++n) {
            const double r = cache.row_norms[n];
            double proj = 0.0;
            for (std::size_t j = 0; j < d_pre.cols(); ++j)
                proj += d_projections(n, j) * cache.pre_norm(n, j) / r;
            for (std::size_t j = 0; j < d_pre.cols(); ++j) {
                const double yhat = cache.pre_norm(n, j) / r;
                d_pre(n, j) = (d_projections(n, j) - proj * yhat) / r;
            }
        }
        d_feat_total = backprop_layers(proj_, cache.proj_acts, {}, std::move(d_pre), grads);
    }

    if (!d_features.empty()) {
        if (d_features.rows() != cache.features.rows() ||
            d_features.cols() != cache.features.cols())
            throw std::domain_error("backward: d_features shape mismatch");
        if (d_feat_total.empty()) {
            d_feat_total = d_features;
        } else {
            for (std::size_t i = 0; i < d_feat_total.data().size(); ++i)
                d_feat_total.data()[i] += d_features.data()[i];
        }
    }

    if (!d_feat_total.empty())
        backprop_layers(backbone_, cache.backbone_acts, cache.pool_argmax,
                        std::move(d_feat_total), grads);
    return grads;
}

namespace {
constexpr char kCheckpointMagic[8] = {'P', 'R', 'D', 'C', 'K', 'P', 'T', '\x01'};
}

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["arch"] = arch_name(net.spec().arch);
    manifest["input_shape"] = net.spec().input_shape;
    manifest["hidden_dims"] = net.spec().hidden_dims;
    manifest["feature_dim"] = net.spec().feature_dim;
    manifest["projection_dim"] = net.spec().projection_dim;
    manifest["seed"] = net.spec().seed;
    manifest["names"] = net.params().names;
    std::vector<std::vector<std::size_t>> shapes;
    for (const auto& t : net.params().tensors) shapes.push_back(t.shape);
    manifest["shapes"] = shapes;

    const std::string mstr = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t mlen = mstr.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const auto& t : net.params().tensors)
        out.write(reinterpret_cast<const char*>(t.v.data()),
                  static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
    std::uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mstr(mlen, '\0');
    in.read(mstr.data(), static_cast<std::streamsize>(mlen));
    const nlohmann::json manifest = nlohmann::json::parse(mstr);
    if (manifest.at("version").get<int>() != 1)
        throw std::runtime_error("load_checkpoint: unsupported version");

    BackboneSpec spec;
    spec.arch = arch_from_name(manifest.at("arch").get<std::string>());
    spec.input_shape = manifest.at("input_shape").get<std::vector<std::size_t>>();
    spec.hidden_dims = manifest.at("hidden_dims").get<std::vector<std::size_t>>();
    spec.feature_dim = manifest.at("feature_dim").get<std::size_t>();
    spec.projection_dim = manifest.at("projection_dim").get<std::size_t>();
    spec.seed = manifest.at("seed").get<std::uint64_t>();

    ParameterState params;
    params.names = manifest.at("names").get<std::vector<std::string>>();
    const auto shapes = manifest.at("shapes").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& s : shapes) params.tensors.emplace_back(s);
    for (auto& t : params.tensors) {
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        if (!in) throw std::runtime_error("load_checkpoint: truncated tensor data");
    }
    return Network(spec, std::move(params));
}

}  // namespace prd
