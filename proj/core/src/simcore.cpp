#include "prd/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "prd/errors.hpp"

namespace prd {

Temperature::Temperature(double t) : tau(t) {
    if (!(t > 0.0) || !std::isfinite(t))
        throw std::domain_error("Temperature: tau must be positive and finite");
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::domain_error("cosine_sim: dimension mismatch");
    if (a.empty())
        throw std::domain_error("cosine_sim: empty vectors");
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0) throw std::domain_error("cosine_sim: first argument has zero norm");
    if (nb == 0.0) throw std::domain_error("cosine_sim: second argument has zero norm");
    return dot(a, b) / (na * nb);
}

double temp_kernel(std::span<const double> a, std::span<const double> b, Temperature t) {
    return std::exp(cosine_sim(a, b) / t.tau);
}

double log_sum_exp(std::span<const double> logits) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double s = 0.0;
    for (double v : logits) s += std::exp(v - m);
    return m + std::log(s);
}

static SimilarityDistribution softmax_of_logits(std::vector<double>& logits) {
    for (double v : logits)
        if (!std::isfinite(v)) throw NumericError("prototype_softmax: non-finite similarity");
    const double lse = log_sum_exp(logits);
    SimilarityDistribution probs(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = std::exp(logits[i] - lse);
    return probs;
}

SimilarityDistribution prototype_softmax(std::span<const double> p,
                                         const std::vector<Vector>& feats,
                                         Temperature t) {
    if (feats.empty())
        throw std::domain_error("prototype_softmax: empty feature set");
    std::vector<double> logits(feats.size());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        if (feats[i].size() != p.size())
            throw std::domain_error("prototype_softmax: feature dimension mismatch");
        logits[i] = cosine_sim(p, feats[i]) / t.tau;
    }
    return softmax_of_logits(logits);
}

SimilarityDistribution prototype_softmax(std::span<const double> p,
                                         const Matrix& feats, Temperature t) {
    if (feats.rows() == 0)
        throw std::domain_error("prototype_softmax: empty feature set");
    if (feats.cols() != p.size())
        throw std::domain_error("prototype_softmax: feature dimension mismatch");
    std::vector<double> logits(feats.rows());
    for (std::size_t i = 0; i < feats.rows(); ++i)
        logits[i] = cosine_sim(p, feats.row(i)) / t.tau;
    return softmax_of_logits(logits);
}

void add_cosine_grad_wrt_a(std::span<const double> a, std::span<const double> b,
                           double coeff, std::span<double> out) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    const double inv = 1.0 / (na * nb);
    const double s = dot(a, b) * inv;
    const double inv_na2 = 1.0 / (na * na);
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] += coeff * (b[i] * inv - s * a[i] * inv_na2);
}

}  // namespace prd
