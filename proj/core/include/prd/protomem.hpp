#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "prd/encoder.hpp"
#include "prd/simcore.hpp"

namespace prd {

// Trainable per-class vectors in encoder-feature space, partitioned into
// old classes (introduced before the current session) and current classes.
class PrototypeSet {
public:
    // Adds one unit-norm Gaussian prototype per class id. Seeded per class,
    // so the same (seed, class) pair always yields the same vector.
    void add_classes(const std::vector<int>& classes, std::size_t dim, std::uint64_t seed);

    void advance_session() { ++current_session_; }
    int current_session() const { return current_session_; }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return vectors_.size(); }
    bool empty() const { return vectors_.empty(); }
    bool has_class(int c) const { return vectors_.count(c) != 0; }
    int introduced_in(int c) const;

    const Vector& vector_of(int c) const;
    Vector& mutable_vector(int c);

    std::vector<int> all_classes() const;      // ascending class id
    std::vector<int> old_classes() const;      // introduced_in < current_session
    std::vector<int> current_classes() const;  // the complement

    // Nearest prototype by cosine similarity. `allowed` restricts the
    // candidate set (task-incremental); ties break to the smallest class id.
    int predict(std::span<const double> feature,
                const std::optional<std::set<int>>& allowed = std::nullopt) const;

    std::string to_json_string() const;
    static PrototypeSet from_json_string(const std::string& text);

    friend bool operator==(const PrototypeSet& a, const PrototypeSet& b) {
        return a.vectors_ == b.vectors_ && a.introduced_in_ == b.introduced_in_ &&
               a.current_session_ == b.current_session_;
    }

private:
    std::map<int, Vector> vectors_;
    std::map<int, int> introduced_in_;
    int current_session_ = 1;
    std::size_t dim_ = 0;
};

// Immutable copy of the encoder and prototype set frozen at the end of the
// previous session. Never receives gradient.
class TeacherSnapshot {
public:
    TeacherSnapshot(Network encoder, PrototypeSet prototypes, int session)
        : encoder_(std::move(encoder)), prototypes_(std::move(prototypes)), session_(session) {}

    const Network& encoder() const { return encoder_; }
    const PrototypeSet& prototypes() const { return prototypes_; }
    int session() const { return session_; }

private:
    Network encoder_;
    PrototypeSet prototypes_;
    int session_;
};

// Deep-copy snapshot of the live model at a session boundary.
TeacherSnapshot snapshot(const PrototypeSet& protos, const Network& encoder);

}  // namespace prd
