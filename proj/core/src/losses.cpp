#include "prd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "prd/errors.hpp"

namespace prd {

void EmbeddingBatch::validate() const {
    const std::size_t n = labels.size();
    if (n < 1) throw std::domain_error("EmbeddingBatch: empty batch");
    if (projections.rows() != n || features.rows() != n || view_of.size() != n)
        throw std::domain_error("EmbeddingBatch: inconsistent sizes");
    if (!teacher_features.empty() &&
        (teacher_features.rows() != n || teacher_features.cols() != features.cols()))
        throw StateError("EmbeddingBatch: teacher feature shape mismatch");
    if (!projections.all_finite() || !features.all_finite())
        throw NumericError("EmbeddingBatch: non-finite embedding");
}

void LossConfig::validate() const {
    if (alpha < 0.0 || beta < 0.0 || sc_weight < 0.0)
        throw ConfigError("LossConfig: coefficients must be non-negative");
}

namespace {

// Positive set A(i): all other entries sharing the anchor's label.
std::vector<std::vector<std::size_t>> positive_sets(const EmbeddingBatch& batch) {
    const std::size_t n = batch.size();
    std::vector<std::vector<std::size_t>> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && batch.labels[j] == batch.labels[i]) pos[i].push_back(j);
        if (pos[i].empty())
            throw ProtocolError("supcon_loss: anchor " + std::to_string(i) +
                                " has an empty positive set (two-view construction violated)");
    }
    return pos;
}

Matrix pairwise_cosine(const Matrix& z) {
    const std::size_t n = z.rows();
    Matrix s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        s(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = cosine_sim(z.row(i), z.row(j));
            s(i, j) = v;
            s(j, i) = v;
        }
    }
    return s;
}

bool teacher_features_missing(const EmbeddingBatch& batch) {
    return batch.teacher_features.empty() ||
           batch.teacher_features.rows() != batch.size() ||
           batch.teacher_features.cols() != batch.features.cols();
}

}  // namespace

std::vector<double> supcon_anchor_terms(const EmbeddingBatch& batch, Temperature tau) {
    batch.validate();
    const std::size_t n = batch.size();
    if (n < 2) throw std::domain_error("supcon_loss: need at least 2 samples");
    const auto pos = positive_sets(batch);
    const Matrix sims = pairwise_cosine(batch.projections);

    std::vector<double> terms(n);
    std::vector<double> logits;
    logits.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        logits.clear();
        for (std::size_t a = 0; a < n; ++a)
            if (a != i) logits.push_back(sims(a, i) / tau.tau);
        const double lse = log_sum_exp(logits);
        double mean_pos = 0.0;
        for (std::size_t p : pos[i]) mean_pos += sims(p, i) / tau.tau;
        mean_pos /= static_cast<double>(pos[i].size());
        terms[i] = lse - mean_pos;
    }
    return terms;
}

SupConResult supcon_loss(const EmbeddingBatch& batch, Temperature tau) {
    batch.validate();
    const std::size_t n = batch.size();
    if (n < 2) throw std::domain_error("supcon_loss: need at least 2 samples");
    const auto pos = positive_sets(batch);
    const Matrix sims = pairwise_cosine(batch.projections);

    SupConResult out;
    out.d_projections = Matrix(n, batch.projections.cols());

    // dL/dw[a][i] for anchor i and other sample a (w = sim/tau).
    Matrix dw(n, n);
    std::vector<double> logits(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t idx = 0;
        for (std::size_t a = 0; a < n; ++a)
            if (a != i) logits[idx++] = sims(a, i) / tau.tau;
        const double lse = log_sum_exp(logits);

        double mean_pos = 0.0;
        for (std::size_t p : pos[i]) mean_pos += sims(p, i) / tau.tau;
        mean_pos /= static_cast<double>(pos[i].size());
        out.value += (lse - mean_pos) / static_cast<double>(n);

        const double inv_pos = 1.0 / static_cast<double>(pos[i].size());
        for (std::size_t a = 0; a < n; ++a) {
            if (a == i) continue;
            const double softmax_ai = std::exp(sims(a, i) / tau.tau - lse);
            double g = softmax_ai;
            if (batch.labels[a] == batch.labels[i]) g -= inv_pos;
            dw(a, i) = g / static_cast<double>(n);
        }
    }

    // Each unordered pair's similarity feeds two anchor terms.
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            if (a == b) continue;
            const double coeff = dw(a, b) / tau.tau;  // d/d sim(a,b)
            if (coeff == 0.0) continue;
            add_cosine_grad_wrt_a(batch.projections.row(a), batch.projections.row(b), coeff,
                                  out.d_projections.row(a));
            add_cosine_grad_wrt_a(batch.projections.row(b), batch.projections.row(a), coeff,
                                  out.d_projections.row(b));
        }
    return out;
}

PrototypeLossResult prototype_loss(const EmbeddingBatch& batch, const PrototypeSet& protos) {
    batch.validate();
    const std::size_t n = batch.size();
    for (int y : batch.labels)
        if (!protos.has_class(y))
            throw StateError("prototype_loss: missing prototype for class " + std::to_string(y));

    PrototypeLossResult out;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = batch.labels[i];
        const Vector& p = protos.vector_of(y);
        out.value -= cosine_sim(p, batch.features.row(i)) * inv_n;
        auto [it, _] = out.d_prototypes.try_emplace(y, Vector(protos.dim(), 0.0));
        add_cosine_grad_wrt_a(p, batch.features.row(i), -inv_n, it->second);
    }
    return out;
}

PrototypeLossResult prototype_loss_with_contrasts(const EmbeddingBatch& batch,
                                                  const PrototypeSet& protos, Temperature tau) {
    batch.validate();
    const std::size_t n = batch.size();
    for (int y : batch.labels)
        if (!protos.has_class(y))
            throw StateError("prototype_loss_with_contrasts: missing prototype for class " +
                             std::to_string(y));

    const std::vector<int> classes = protos.all_classes();
    PrototypeLossResult out;
    for (int c : classes) out.d_prototypes.emplace(c, Vector(protos.dim(), 0.0));

    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> logits(classes.size());
    for (std::size_t i = 0; i < n; ++i) {
        const int y = batch.labels[i];
        const auto f = batch.features.row(i);

        out.value -= cosine_sim(protos.vector_of(y), f) * inv_n;
        add_cosine_grad_wrt_a(protos.vector_of(y), f, -inv_n, out.d_prototypes.at(y));

        for (std::size_t k = 0; k < classes.size(); ++k)
            logits[k] = cosine_sim(protos.vector_of(classes[k]), f) / tau.tau;
        const double lse = log_sum_exp(logits);
        out.value += lse * inv_n;
        for (std::size_t k = 0; k < classes.size(); ++k) {
            const double softmax_k = std::exp(logits[k] - lse);
            add_cosine_grad_wrt_a(protos.vector_of(classes[k]), f,
                                  softmax_k * inv_n / tau.tau, out.d_prototypes.at(classes[k]));
        }
    }
    return out;
}

DistillResult relation_distill_loss(const EmbeddingBatch& batch, const PrototypeSet& protos,
                                    const TeacherSnapshot& teacher, Temperature tau) {
    batch.validate();
    const std::vector<int> old = protos.old_classes();

    DistillResult out;
    if (old.empty()) return out;  // first session

    if (teacher.prototypes().all_classes() != old)
        throw StateError("relation_distill_loss: teacher prototype set does not cover P_o");
    if (teacher_features_missing(batch))
        throw StateError("relation_distill_loss: batch has no teacher features");
    if (teacher.prototypes().dim() != protos.dim())
        throw StateError("relation_distill_loss: prototype dimension mismatch");

    const std::size_t n = batch.size();
    out.d_features = Matrix(n, batch.features.cols());

    std::vector<double> u(n), v(n);
    for (int c : old) {
        const Vector& p_cur = protos.vector_of(c);
        const Vector& p_old = teacher.prototypes().vector_of(c);
        for (std::size_t i = 0; i < n; ++i) {
            u[i] = cosine_sim(p_cur, batch.features.row(i)) / tau.tau;
            v[i] = cosine_sim(p_old, batch.teacher_features.row(i)) / tau.tau;
        }
        const double lse_u = log_sum_exp(u);
        const double lse_v = log_sum_exp(v);

        double kl = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            kl += std::exp(u[i] - lse_u) * ((u[i] - lse_u) - (v[i] - lse_v));
        out.value += kl;

        auto [it, _] = out.d_prototypes.try_emplace(c, Vector(protos.dim(), 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            const double q = std::exp(u[i] - lse_u);
            const double du = q * (((u[i] - lse_u) - (v[i] - lse_v)) - kl) / tau.tau;
            if (du == 0.0) continue;
            add_cosine_grad_wrt_a(p_cur, batch.features.row(i), du, it->second);
            add_cosine_grad_wrt_a(batch.features.row(i), p_cur, du, out.d_features.row(i));
        }
    }
    return out;
}

TotalLossResult total_loss(const EmbeddingBatch& batch, const PrototypeSet& protos,
                           const TeacherSnapshot* teacher, const LossConfig& cfg) {
    cfg.validate();
    TotalLossResult out;

    SupConResult sc = supcon_loss(batch, cfg.tau_sc);
    out.breakdown.sc = sc.value;
    out.d_projections = std::move(sc.d_projections);
    if (cfg.sc_weight != 1.0)
        for (double& g : out.d_projections.data()) g *= cfg.sc_weight;

    PrototypeLossResult pl = prototype_loss(batch, protos);
    out.breakdown.proto = pl.value;
    if (cfg.alpha != 0.0)
        for (auto& [c, g] : pl.d_prototypes) {
            auto [it, _] = out.d_prototypes.try_emplace(c, Vector(protos.dim(), 0.0));
            for (std::size_t j = 0; j < g.size(); ++j) it->second[j] += cfg.alpha * g[j];
        }

    if (cfg.beta != 0.0 && !protos.old_classes().empty()) {
        if (teacher == nullptr)
            throw StateError("total_loss: old classes present but no teacher snapshot");
        DistillResult dl = relation_distill_loss(batch, protos, *teacher, cfg.tau_d);
        out.breakdown.distill = dl.value;
        out.d_features = std::move(dl.d_features);
        for (double& g : out.d_features.data()) g *= cfg.beta;
        for (auto& [c, g] : dl.d_prototypes) {
            auto [it, _] = out.d_prototypes.try_emplace(c, Vector(protos.dim(), 0.0));
            for (std::size_t j = 0; j < g.size(); ++j) it->second[j] += cfg.beta * g[j];
        }
    }

    out.breakdown.total = cfg.sc_weight * out.breakdown.sc + cfg.alpha * out.breakdown.proto +
                          cfg.beta * out.breakdown.distill;
    return out;
}

}  // namespace prd
