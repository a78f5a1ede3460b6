#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "prd/rng.hpp"
#include "prd/tensor.hpp"

namespace prd {

// Synthetic Gaussian-cluster classification data: class centers on a sphere
// of radius `center_radius`, isotropic within-class spread.
struct SyntheticSpec {
    int classes = 10;
    int dim = 16;
    int train_per_class = 100;
    int test_per_class = 40;
    double center_radius = 1.0;
    double cluster_spread = 0.3;
    std::uint64_t seed = 1;
};

// Procedural 3x32x32 image classes (oriented gratings with class tint);
// exercises the conv backbone and the image augmentation pipeline.
struct TinyImageSpec {
    int classes = 4;
    int size = 32;
    int train_per_class = 20;
    int test_per_class = 8;
    double noise = 0.05;
    std::uint64_t seed = 1;
};

// In-memory dataset with train/test splits. `train_session`/`test_session`
// tag each sample with the phase that generated it (used by the
// domain-incremental stream; empty tags mean "derive from class partition").
struct Dataset {
    std::vector<std::size_t> input_shape;
    Matrix train_x;
    std::vector<int> train_y;
    Matrix test_x;
    std::vector<int> test_y;
    std::vector<int> train_session;
    std::vector<int> test_session;

    std::size_t input_size() const;
    std::vector<int> class_ids() const;  // ascending unique labels

    static Dataset synthetic_gaussian(const SyntheticSpec& spec);
    // Domain-incremental variant: `phases` copies of the same classes with a
    // per-phase drift of the cluster centers.
    static Dataset synthetic_gaussian_domain(const SyntheticSpec& spec, int phases,
                                             double phase_drift);
    static Dataset tiny_images(const TinyImageSpec& spec);

    // Directory loader interface for externally-prepared data
    // (train.prdd / test.prdd, see save_dir for the format).
    static Dataset load_dir(const std::filesystem::path& dir);
    void save_dir(const std::filesystem::path& dir) const;
};

// One phase of the continual sequence.
struct SessionSpec {
    int index = 0;  // 1-based session number
    std::vector<int> classes;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
};

// Deterministic class partition into `num_tasks` disjoint sessions of
// `classes_per_task` classes each, under a seeded class permutation.
std::vector<SessionSpec> build_stream(const Dataset& data, int num_tasks, int classes_per_task,
                                      std::uint64_t seed);

// Domain-incremental: every session carries the full class set; samples are
// routed by their phase tag.
std::vector<SessionSpec> build_domain_stream(const Dataset& data, int phases);

struct AugmentationSpec {
    enum class Kind { Identity, VectorJitter, ImagePipeline };
    Kind kind = Kind::VectorJitter;
    double jitter_sigma = 0.05;
    // image pipeline
    int crop_padding = 4;
    double flip_prob = 0.5;
    double color_jitter = 0.4;
    double grayscale_prob = 0.2;
};

// One stochastic augmented view of a sample.
void augment_view(std::span<const double> input, std::span<double> out,
                  const AugmentationSpec& aug, const std::vector<std::size_t>& shape, Rng& rng);

// Training-data access audit. Every training read is recorded with the
// session being trained and the session the datum originated from.
struct AccessLog {
    struct Entry {
        int training_session;
        int source_session;
        std::size_t sample_index;
    };
    std::vector<Entry> entries;

    void record(int training_session, int source_session, std::size_t sample_index) {
        entries.push_back({training_session, source_session, sample_index});
    }
    std::size_t prior_session_reads() const;
};

// Two augmented views per source sample, interleaved [v0 v0' v1 v1' ...].
struct TwoViewBatch {
    Matrix inputs;                          // 2N x input_size
    std::vector<int> labels;                // 2N
    std::vector<int> view_of;               // 2N source ids within the batch
    std::vector<int> source_session;        // 2N origin session tags
    std::vector<std::size_t> source_index;  // 2N dataset row of the source
};

// Iterates one session's training data in seeded epoch permutations and
// emits two-view batches. A batch larger than the remaining epoch tail wraps
// into a fresh reshuffle.
class BatchSampler {
public:
    BatchSampler(const Dataset& data, const SessionSpec& session, const AugmentationSpec& aug,
                 std::size_t sources_per_batch, std::uint64_t seed, AccessLog* log = nullptr);

    TwoViewBatch next();
    std::size_t steps_per_epoch() const;
    std::size_t session_size() const { return order_.size(); }

private:
    void reshuffle();

    const Dataset* data_;
    const SessionSpec* session_;
    AugmentationSpec aug_;
    std::size_t sources_per_batch_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    Rng order_rng_;
    Rng aug_rng_;
    AccessLog* log_;
};

// Per-class ring buffers of fixed capacity; the oldest entry of a class is
// overwritten once its ring is full.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity_per_class);

    struct Stored {
        std::vector<double> input;
        int label;
        int source_session;
        std::size_t source_index;
    };

    void insert(Stored s);
    // n uniform draws over the buffer contents; without replacement when the
    // occupancy allows it, with replacement otherwise. Empty buffer -> empty.
    std::vector<Stored> sample(std::size_t n, Rng& rng) const;

    std::size_t capacity_per_class() const { return capacity_; }
    std::size_t total() const;
    bool empty() const { return total() == 0; }
    std::map<int, std::size_t> per_class_counts() const;

private:
    struct Ring {
        std::vector<Stored> items;
        std::size_t cursor = 0;
    };
    std::size_t capacity_;
    std::map<int, Ring> rings_;
};

}  // namespace prd
