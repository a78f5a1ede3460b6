#pragma once

#include <span>
#include <vector>

#include "prd/tensor.hpp"

namespace prd {

using Vector = std::vector<double>;

// Softmax temperature. tau > 0 enforced at construction.
struct Temperature {
    double tau;
    explicit Temperature(double t);
};

// Probabilities of one prototype over a minibatch: entries >= 0, sum == 1.
using SimilarityDistribution = std::vector<double>;

// Cosine similarity a^T b / (|a||b|). Rejects zero-norm inputs.
double cosine_sim(std::span<const double> a, std::span<const double> b);

// exp(cosine_sim(a, b) / tau).
double temp_kernel(std::span<const double> a, std::span<const double> b, Temperature t);

// Softmax of a prototype's temperature-scaled similarities over a feature set.
// Computed with max-logit subtraction so small tau cannot overflow.
SimilarityDistribution prototype_softmax(std::span<const double> p,
                                         const std::vector<Vector>& feats,
                                         Temperature t);

// Same distribution when the features are rows of a matrix.
SimilarityDistribution prototype_softmax(std::span<const double> p,
                                         const Matrix& feats, Temperature t);

// Gradient of cosine_sim(a, b) with respect to a:
//   b / (|a||b|) - sim * a / |a|^2.
// Shared by every loss backward pass.
void add_cosine_grad_wrt_a(std::span<const double> a, std::span<const double> b,
                           double coeff, std::span<double> out);

// Stable log(sum_i exp(logits_i)).
double log_sum_exp(std::span<const double> logits);

}  // namespace prd
