#include "prd/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "prd/errors.hpp"
#include "prd/simcore.hpp"

namespace prd {

std::size_t Dataset::input_size() const {
    std::size_t n = 1;
    for (std::size_t d : input_shape) n *= d;
    return n;
}

std::vector<int> Dataset::class_ids() const {
    std::set<int> ids(train_y.begin(), train_y.end());
    return {ids.begin(), ids.end()};
}

namespace {

void fill_gaussian_split(Matrix& x, std::vector<int>& y, const std::vector<Vector>& centers,
                         int per_class, double spread, Rng& rng) {
    std::normal_distribution<double> noise(0.0, spread);
    const std::size_t dim = centers[0].size();
    std::size_t row = 0;
    for (std::size_t c = 0; c < centers.size(); ++c)
        for (int s = 0; s < per_class; ++s, ++row) {
            for (std::size_t j = 0; j < dim; ++j)
                x(row, j) = centers[c][j] + noise(rng);
            y[row] = static_cast<int>(c);
        }
}

std::vector<Vector> gaussian_centers(int classes, int dim, double radius, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Vector> centers(classes, Vector(dim));
    for (auto& c : centers) {
        double n2 = 0.0;
        for (double& v : c) {
            v = g(rng);
            n2 += v * v;
        }
        const double scale = radius / std::sqrt(n2);
        for (double& v : c) v *= scale;
    }
    return centers;
}

}  // namespace

Dataset Dataset::synthetic_gaussian(const SyntheticSpec& spec) {
    if (spec.classes < 2 || spec.dim < 1 || spec.train_per_class < 1 || spec.test_per_class < 1)
        throw ConfigError("synthetic_gaussian: invalid spec");
    Dataset d;
    d.input_shape = {static_cast<std::size_t>(spec.dim)};
    Rng rng = make_rng(spec.seed, rng_tag::kDataGen);
    const auto centers = gaussian_centers(spec.classes, spec.dim, spec.center_radius, rng);

    d.train_x = Matrix(static_cast<std::size_t>(spec.classes) * spec.train_per_class, spec.dim);
    d.train_y.resize(d.train_x.rows());
    fill_gaussian_split(d.train_x, d.train_y, centers, spec.train_per_class, spec.cluster_spread,
                        rng);
    d.test_x = Matrix(static_cast<std::size_t>(spec.classes) * spec.test_per_class, spec.dim);
    d.test_y.resize(d.test_x.rows());
    fill_gaussian_split(d.test_x, d.test_y, centers, spec.test_per_class, spec.cluster_spread,
                        rng);
    return d;
}

Dataset Dataset::synthetic_gaussian_domain(const SyntheticSpec& spec, int phases,
                                           double phase_drift) {
    if (phases < 1) throw ConfigError("synthetic_gaussian_domain: phases must be >= 1");
    Dataset d;
    d.input_shape = {static_cast<std::size_t>(spec.dim)};
    Rng rng = make_rng(spec.seed, rng_tag::kDataGen);
    auto centers = gaussian_centers(spec.classes, spec.dim, spec.center_radius, rng);

    const std::size_t train_per_phase = static_cast<std::size_t>(spec.classes) * spec.train_per_class;
    const std::size_t test_per_phase = static_cast<std::size_t>(spec.classes) * spec.test_per_class;
    d.train_x = Matrix(train_per_phase * phases, spec.dim);
    d.train_y.resize(d.train_x.rows());
    d.train_session.resize(d.train_x.rows());
    d.test_x = Matrix(test_per_phase * phases, spec.dim);
    d.test_y.resize(d.test_x.rows());
    d.test_session.resize(d.test_x.rows());

    std::normal_distribution<double> drift(0.0, phase_drift);
    for (int t = 0; t < phases; ++t) {
        if (t > 0)
            for (auto& c : centers)
                for (double& v : c) v += drift(rng);
        Matrix tx(train_per_phase, spec.dim);
        std::vector<int> ty(train_per_phase);
        fill_gaussian_split(tx, ty, centers, spec.train_per_class, spec.cluster_spread, rng);
        Matrix sx(test_per_phase, spec.dim);
        std::vector<int> sy(test_per_phase);
        fill_gaussian_split(sx, sy, centers, spec.test_per_class, spec.cluster_spread, rng);
        for (std::size_t r = 0; r < train_per_phase; ++r) {
            const std::size_t dst = t * train_per_phase + r;
            std::copy(tx.row(r).begin(), tx.row(r).end(), d.train_x.row(dst).begin());
            d.train_y[dst] = ty[r];
            d.train_session[dst] = t + 1;
        }
        for (std::size_t r = 0; r < test_per_phase; ++r) {
            const std::size_t dst = t * test_per_phase + r;
            std::copy(sx.row(r).begin(), sx.row(r).end(), d.test_x.row(dst).begin());
            d.test_y[dst] = sy[r];
            d.test_session[dst] = t + 1;
        }
    }
    return d;
}

Dataset Dataset::tiny_images(const TinyImageSpec& spec) {
    if (spec.classes < 2 || spec.size < 4)
        throw ConfigError("tiny_images: invalid spec");
    Dataset d;
    const std::size_t hw = static_cast<std::size_t>(spec.size);
    d.input_shape = {3, hw, hw};
    Rng rng = make_rng(spec.seed, rng_tag::kDataGen);
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * 3.14159265358979323846);

    auto render = [&](Matrix& x, std::vector<int>& y, int per_class) {
        std::size_t row = 0;
        for (int c = 0; c < spec.classes; ++c) {
            const double angle = 3.14159265358979323846 * c / spec.classes;
            const double freq = 0.35 + 0.18 * (c % 3);
            const double tint[3] = {0.9 - 0.15 * (c % 3), 0.7 + 0.1 * ((c + 1) % 3),
                                    0.6 + 0.12 * ((c + 2) % 3)};
            for (int s = 0; s < per_class; ++s, ++row) {
                const double ph = phase(rng);
                for (std::size_t ch = 0; ch < 3; ++ch)
                    for (std::size_t py = 0; py < hw; ++py)
                        for (std::size_t px = 0; px < hw; ++px) {
                            const double t = freq * (px * std::cos(angle) + py * std::sin(angle));
                            const double v =
                                0.5 + 0.4 * tint[ch] * std::sin(t + ph) + noise(rng);
                            x(row, ch * hw * hw + py * hw + px) = v;
                        }
                y[row] = c;
            }
        }
    };

    d.train_x = Matrix(static_cast<std::size_t>(spec.classes) * spec.train_per_class, 3 * hw * hw);
    d.train_y.resize(d.train_x.rows());
    render(d.train_x, d.train_y, spec.train_per_class);
    d.test_x = Matrix(static_cast<std::size_t>(spec.classes) * spec.test_per_class, 3 * hw * hw);
    d.test_y.resize(d.test_x.rows());
    render(d.test_x, d.test_y, spec.test_per_class);
    return d;
}

namespace {
constexpr char kDataMagic[8] = {'P', 'R', 'D', 'D', 'A', 'T', 'A', '\x01'};

void write_split(const std::filesystem::path& file, const std::vector<std::size_t>& shape,
                 const Matrix& x, const std::vector<int>& y, const std::vector<int>& session) {
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["input_shape"] = shape;
    manifest["count"] = x.rows();
    manifest["has_session_tags"] = !session.empty();
    const std::string mstr = manifest.dump();

    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out.write(kDataMagic, sizeof(kDataMagic));
    const std::uint64_t mlen = mstr.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const std::int32_t label = y[r];
        out.write(reinterpret_cast<const char*>(&label), sizeof(label));
        const std::int32_t tag = session.empty() ? 0 : session[r];
        out.write(reinterpret_cast<const char*>(&tag), sizeof(tag));
        out.write(reinterpret_cast<const char*>(x.row(r).data()),
                  static_cast<std::streamsize>(x.cols() * sizeof(double)));
    }
}

void read_split(const std::filesystem::path& file, std::vector<std::size_t>& shape, Matrix& x,
                std::vector<int>& y, std::vector<int>& session) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kDataMagic, sizeof(magic)) != 0)
        throw std::runtime_error("bad dataset magic in " + file.string());
    std::uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mstr(mlen, '\0');
    in.read(mstr.data(), static_cast<std::streamsize>(mlen));
    const nlohmann::json manifest = nlohmann::json::parse(mstr);
    shape = manifest.at("input_shape").get<std::vector<std::size_t>>();
    const std::size_t count = manifest.at("count").get<std::size_t>();
    const bool tags = manifest.at("has_session_tags").get<bool>();

    std::size_t dim = 1;
    for (std::size_t d : shape) dim *= d;
    x = Matrix(count, dim);
    y.resize(count);
    session.clear();
    if (tags) session.resize(count);
    for (std::size_t r = 0; r < count; ++r) {
        std::int32_t label = 0, tag = 0;
        in.read(reinterpret_cast<char*>(&label), sizeof(label));
        in.read(reinterpret_cast<char*>(&tag), sizeof(tag));
        in.read(reinterpret_cast<char*>(x.row(r).data()),
                static_cast<std::streamsize>(dim * sizeof(double)));
        y[r] = label;
        if (tags) session[r] = tag;
    }
    if (!in) throw std::runtime_error("truncated dataset file " + file.string());
}
}  // namespace

void Dataset::save_dir(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_split(dir / "train.prdd", input_shape, train_x, train_y, train_session);
    write_split(dir / "test.prdd", input_shape, test_x, test_y, test_session);
}

Dataset Dataset::load_dir(const std::filesystem::path& dir) {
    Dataset d;
    std::vector<std::size_t> shape2;
    read_split(dir / "train.prdd", d.input_shape, d.train_x, d.train_y, d.train_session);
    read_split(dir / "test.prdd", shape2, d.test_x, d.test_y, d.test_session);
    if (shape2 != d.input_shape)
        throw std::runtime_error("train/test input shapes differ in " + dir.string());
    return d;
}

std::vector<SessionSpec> build_stream(const Dataset& data, int num_tasks, int classes_per_task,
                                      std::uint64_t seed) {
    if (num_tasks < 1 || classes_per_task < 1)
        throw ConfigError("build_stream: num_tasks and classes_per_task must be >= 1");
    std::vector<int> ids = data.class_ids();
    if (static_cast<std::size_t>(num_tasks) * classes_per_task > ids.size())
        throw ConfigError("build_stream: " + std::to_string(num_tasks) + " x " +
                          std::to_string(classes_per_task) + " classes requested but only " +
                          std::to_string(ids.size()) + " available");

    Rng rng = make_rng(seed, rng_tag::kStreamPartition);
    std::shuffle(ids.begin(), ids.end(), rng);

    std::vector<SessionSpec> sessions(num_tasks);
    std::map<int, int> class_to_session;
    for (int t = 0; t < num_tasks; ++t) {
        sessions[t].index = t + 1;
        sessions[t].classes.assign(ids.begin() + static_cast<std::ptrdiff_t>(t) * classes_per_task,
                                   ids.begin() +
                                       static_cast<std::ptrdiff_t>(t + 1) * classes_per_task);
        std::sort(sessions[t].classes.begin(), sessions[t].classes.end());
        for (int c : sessions[t].classes) class_to_session[c] = t;
    }
    for (std::size_t r = 0; r < data.train_x.rows(); ++r) {
        auto it = class_to_session.find(data.train_y[r]);
        if (it != class_to_session.end()) sessions[it->second].train_indices.push_back(r);
    }
    for (std::size_t r = 0; r < data.test_x.rows(); ++r) {
        auto it = class_to_session.find(data.test_y[r]);
        if (it != class_to_session.end()) sessions[it->second].test_indices.push_back(r);
    }
    return sessions;
}

std::vector<SessionSpec> build_domain_stream(const Dataset& data, int phases) {
    if (data.train_session.empty())
        throw ConfigError("build_domain_stream: dataset has no phase tags");
    std::vector<SessionSpec> sessions(phases);
    const std::vector<int> ids = data.class_ids();
    for (int t = 0; t < phases; ++t) {
        sessions[t].index = t + 1;
        sessions[t].classes = ids;
    }
    for (std::size_t r = 0; r < data.train_x.rows(); ++r) {
        const int t = data.train_session[r];
        if (t < 1 || t > phases) throw ConfigError("build_domain_stream: phase tag out of range");
        sessions[t - 1].train_indices.push_back(r);
    }
    for (std::size_t r = 0; r < data.test_x.rows(); ++r) {
        const int t = data.test_session[r];
        if (t < 1 || t > phases) throw ConfigError("build_domain_stream: phase tag out of range");
        sessions[t - 1].test_indices.push_back(r);
    }
    return sessions;
}

void augment_view(std::span<const double> input, std::span<double> out,
                  const AugmentationSpec& aug, const std::vector<std::size_t>& shape, Rng& rng) {
    switch (aug.kind) {
        case AugmentationSpec::Kind::Identity:
            std::copy(input.begin(), input.end(), out.begin());
            return;
        case AugmentationSpec::Kind::VectorJitter: {
            std::normal_distribution<double> noise(0.0, aug.jitter_sigma);
            for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] + noise(rng);
            return;
        }
        case AugmentationSpec::Kind::ImagePipeline: {
            if (shape.size() != 3)
                throw std::domain_error("augment_view: image pipeline needs {C,H,W} input");
            const std::size_t C = shape[0], H = shape[1], W = shape[2];
            std::uniform_int_distribution<int> shift(-aug.crop_padding, aug.crop_padding);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            std::uniform_real_distribution<double> jit(1.0 - aug.color_jitter,
                                                       1.0 + aug.color_jitter);
            const int dy = shift(rng), dx = shift(rng);
            const bool flip = unit(rng) < aug.flip_prob;
            const double brightness = jit(rng);
            const double contrast = jit(rng);
            const double saturation = jit(rng);
            const bool gray = unit(rng) < aug.grayscale_prob;

            // shifted crop with zero padding, then optional horizontal flip
            auto src_at = [&](std::size_t c, long y, long x) -> double {
                if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W))
                    return 0.0;
                return input[c * H * W + static_cast<std::size_t>(y) * W +
                             static_cast<std::size_t>(x)];
            };
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        const std::size_t sx = flip ? (W - 1 - x) : x;
                        out[c * H * W + y * W + x] =
                            src_at(c, static_cast<long>(y) + dy, static_cast<long>(sx) + dx);
                    }

            double mean = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) mean += out[i];
            mean /= static_cast<double>(out.size());
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = mean + contrast * (out[i] * brightness - mean);

            if (C == 3) {
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        const std::size_t p = y * W + x;
                        const double luma = 0.299 * out[p] + 0.587 * out[H * W + p] +
                                            0.114 * out[2 * H * W + p];
                        for (std::size_t c = 0; c < 3; ++c) {
                            double v = gray ? luma
                                            : luma + saturation * (out[c * H * W + p] - luma);
                            out[c * H * W + p] = v;
                        }
                    }
            }
            return;
        }
    }
}

std::size_t AccessLog::prior_session_reads() const {
    std::size_t n = 0;
    for (const auto& e : entries)
        if (e.source_session < e.training_session) ++n;
    return n;
}

BatchSampler::BatchSampler(const Dataset& data, const SessionSpec& session,
                           const AugmentationSpec& aug, std::size_t sources_per_batch,
                           std::uint64_t seed, AccessLog* log)
    : data_(&data),
      session_(&session),
      aug_(aug),
      sources_per_batch_(sources_per_batch),
      order_(session.train_indices),
      order_rng_(make_rng(seed, rng_tag::kBatchOrder)),
      aug_rng_(make_rng(seed, rng_tag::kAugmentation)),
      log_(log) {
    if (session.train_indices.empty())
        throw std::domain_error("BatchSampler: session has no training data");
    if (sources_per_batch == 0)
        throw std::domain_error("BatchSampler: batch size must be >= 1");
    reshuffle();
}

void BatchSampler::reshuffle() {
    std::shuffle(order_.begin(), order_.end(), order_rng_);
    cursor_ = 0;
}

std::size_t BatchSampler::steps_per_epoch() const {
    return (order_.size() + sources_per_batch_ - 1) / sources_per_batch_;
}

TwoViewBatch BatchSampler::next() {
    const std::size_t dim = data_->input_size();
    TwoViewBatch batch;
    batch.inputs = Matrix(2 * sources_per_batch_, dim);
    batch.labels.resize(2 * sources_per_batch_);
    batch.view_of.resize(2 * sources_per_batch_);
    batch.source_session.resize(2 * sources_per_batch_);
    batch.source_index.resize(2 * sources_per_batch_);

    for (std::size_t s = 0; s < sources_per_batch_; ++s) {
        if (cursor_ >= order_.size()) reshuffle();
        const std::size_t row = order_[cursor_++];
        const int origin =
            data_->train_session.empty() ? session_->index : data_->train_session[row];
        if (log_) log_->record(session_->index, origin, row);

        const auto src = data_->train_x.row(row);
        augment_view(src, batch.inputs.row(2 * s), aug_, data_->input_shape, aug_rng_);
        augment_view(src, batch.inputs.row(2 * s + 1), aug_, data_->input_shape, aug_rng_);
        for (int v = 0; v < 2; ++v) {
            batch.labels[2 * s + v] = data_->train_y[row];
            batch.view_of[2 * s + v] = static_cast<int>(s);
            batch.source_session[2 * s + v] = origin;
            batch.source_index[2 * s + v] = row;
        }
    }
    return batch;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity_per_class) : capacity_(capacity_per_class) {
    if (capacity_per_class == 0)
        throw std::domain_error("ReplayBuffer: capacity must be >= 1 (use no buffer for M=0)");
}

void ReplayBuffer::insert(Stored s) {
    Ring& ring = rings_[s.label];
    if (ring.items.size() < capacity_) {
        ring.items.push_back(std::move(s));
    } else {
        ring.items[ring.cursor] = std::move(s);
    }
    ring.cursor = (ring.cursor + 1) % capacity_;
}

std::size_t ReplayBuffer::total() const {
    std::size_t n = 0;
    for (const auto& [_, r] : rings_) n += r.items.size();
    return n;
}

std::map<int, std::size_t> ReplayBuffer::per_class_counts() const {
    std::map<int, std::size_t> out;
    for (const auto& [c, r] : rings_) out[c] = r.items.size();
    return out;
}

std::vector<ReplayBuffer::Stored> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    std::vector<Stored> out;
    const std::size_t occupancy = total();
    if (n == 0 || occupancy == 0) return out;

    std::vector<const Stored*> flat;
    flat.reserve(occupancy);
    for (const auto& [_, r] : rings_)
        for (const auto& item : r.items) flat.push_back(&item);

    out.reserve(n);
    if (occupancy >= n) {
        // partial Fisher-Yates: n distinct uniform picks
        std::vector<std::size_t> idx(occupancy);
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, occupancy - 1);
            std::swap(idx[i], idx[pick(rng)]);
            out.push_back(*flat[idx[i]]);
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, occupancy - 1);
        for (std::size_t i = 0; i < n; ++i) out.push_back(*flat[pick(rng)]);
    }
    return out;
}

}  // namespace prd
