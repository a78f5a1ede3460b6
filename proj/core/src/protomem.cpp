#include "prd/protomem.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

#include "prd/errors.hpp"
#include "prd/rng.hpp"

namespace prd {

void PrototypeSet::add_classes(const std::vector<int>& classes, std::size_t dim,
                               std::uint64_t seed) {
    if (dim == 0) throw std::domain_error("add_classes: dim must be >= 1");
    if (dim_ != 0 && dim != dim_)
        throw StateError("add_classes: prototype dimension changed");
    for (int c : classes)
        if (vectors_.count(c))
            throw StateError("add_classes: duplicate class id " + std::to_string(c));

    dim_ = dim;
    for (int c : classes) {
        Rng rng = make_rng(derive_seed(seed, rng_tag::kPrototypeInit),
                           static_cast<std::uint64_t>(static_cast<std::int64_t>(c)));
        std::normal_distribution<double> dist(0.0, 1.0);
        Vector v(dim);
        double norm_sq = 0.0;
        for (double& x : v) {
            x = dist(rng);
            norm_sq += x * x;
        }
        const double norm = std::sqrt(norm_sq);
        for (double& x : v) x /= norm;
        vectors_[c] = std::move(v);
        introduced_in_[c] = current_session_;
    }
}

int PrototypeSet::introduced_in(int c) const {
    auto it = introduced_in_.find(c);
    if (it == introduced_in_.end())
        throw StateError("introduced_in: unknown class " + std::to_string(c));
    return it->second;
}

const Vector& PrototypeSet::vector_of(int c) const {
    auto it = vectors_.find(c);
    if (it == vectors_.end())
        throw StateError("vector_of: missing prototype for class " + std::to_string(c));
    return it->second;
}

Vector& PrototypeSet::mutable_vector(int c) {
    auto it = vectors_.find(c);
    if (it == vectors_.end())
        throw StateError("mutable_vector: missing prototype for class " + std::to_string(c));
    return it->second;
}

std::vector<int> PrototypeSet::all_classes() const {
    std::vector<int> out;
    out.reserve(vectors_.size());
    for (const auto& [c, _] : vectors_) out.push_back(c);
    return out;
}

std::vector<int> PrototypeSet::old_classes() const {
    std::vector<int> out;
    for (const auto& [c, s] : introduced_in_)
        if (s < current_session_) out.push_back(c);
    return out;
}

std::vector<int> PrototypeSet::current_classes() const {
    std::vector<int> out;
    for (const auto& [c, s] : introduced_in_)
        if (s >= current_session_) out.push_back(c);
    return out;
}

int PrototypeSet::predict(std::span<const double> feature,
                          const std::optional<std::set<int>>& allowed) const {
    if (vectors_.empty()) throw StateError("predict: no prototypes");
    if (feature.size() != dim_) throw std::domain_error("predict: feature dim mismatch");
    if (allowed) {
        if (allowed->empty()) throw std::domain_error("predict: empty allowed set");
        for (int c : *allowed)
            if (!vectors_.count(c))
                throw std::domain_error("predict: allowed class " + std::to_string(c) +
                                        " unknown");
    }
    int best = -1;
    double best_sim = 0.0;
    for (const auto& [c, p] : vectors_) {  // ascending ids: strict > keeps smallest on tie
        if (allowed && !allowed->count(c)) continue;
        const double s = cosine_sim(p, feature);
        if (best == -1 || s > best_sim) {
            best = c;
            best_sim = s;
        }
    }
    return best;
}

std::string PrototypeSet::to_json_string() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["current_session"] = current_session_;
    j["dim"] = dim_;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [c, v] : vectors_) {
        nlohmann::json e;
        e["class_id"] = c;
        e["introduced_in"] = introduced_in_.at(c);
        e["vector"] = v;
        entries.push_back(std::move(e));
    }
    j["prototypes"] = std::move(entries);
    return j.dump();
}

PrototypeSet PrototypeSet::from_json_string(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("format_version").get<int>() != 1)
        throw std::runtime_error("PrototypeSet: unsupported format version");
    PrototypeSet out;
    out.current_session_ = j.at("current_session").get<int>();
    out.dim_ = j.at("dim").get<std::size_t>();
    for (const auto& e : j.at("prototypes")) {
        const int c = e.at("class_id").get<int>();
        out.vectors_[c] = e.at("vector").get<Vector>();
        out.introduced_in_[c] = e.at("introduced_in").get<int>();
    }
    return out;
}

TeacherSnapshot snapshot(const PrototypeSet& protos, const Network& encoder) {
    return TeacherSnapshot(encoder, protos, protos.current_session());
}

}  // namespace prd
