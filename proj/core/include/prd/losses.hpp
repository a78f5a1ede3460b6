#pragma once

#include <map>
#include <vector>

#include "prd/protomem.hpp"
#include "prd/simcore.hpp"
#include "prd/tensor.hpp"

namespace prd {

// One training minibatch in embedding space. `projections` are the
// L2-normalized outputs of the projection head (anchor space of the
// contrastive loss); `features` are raw encoder outputs (prototype space).
// `teacher_features` holds the frozen teacher encoder's features for the
// same inputs and is empty when no distillation is active.
struct EmbeddingBatch {
    Matrix projections;            // N x k
    Matrix features;               // N x d
    std::vector<int> labels;       // N
    std::vector<int> view_of;      // N source sample ids (two views per source)
    Matrix teacher_features;       // N x d or empty

    std::size_t size() const { return labels.size(); }

    // Structural checks: consistent sizes, non-empty, finite entries.
    void validate() const;
};

struct LossConfig {
    Temperature tau_sc{0.1};   // contrastive temperature
    Temperature tau_d{0.1};    // prototype-sample softmax temperature
    double alpha = 2.0;        // prototype tightness coefficient
    double beta = 4.0;         // relation distillation coefficient
    double sc_weight = 1.0;    // contrastive term weight; 0 disables representation learning

    void validate() const;
};

struct LossBreakdown {
    double sc = 0.0;
    double proto = 0.0;
    double distill = 0.0;
    double total = 0.0;
};

// Per-class prototype gradients. Classes absent from the map received
// exactly zero gradient; that absence is itself part of the contract.
using PrototypeGrads = std::map<int, Vector>;

struct SupConResult {
    double value = 0.0;
    Matrix d_projections;  // N x k
};

// Supervised contrastive loss. Positives of anchor i are every other batch
// entry with the same label (the paired view plus same-class samples). The
// batch loss is the mean of the per-anchor terms; each per-anchor term is
//   -(1/|A(i)|) sum_{p in A(i)} log( h(z_p,z_i) / sum_{a != i} h(z_a,z_i) )
// with h(a,b) = exp(cos(a,b)/tau). Gradients are w.r.t. the projections.
SupConResult supcon_loss(const EmbeddingBatch& batch, Temperature tau);

// The individual per-anchor terms, in batch order.
std::vector<double> supcon_anchor_terms(const EmbeddingBatch& batch, Temperature tau);

struct PrototypeLossResult {
    double value = 0.0;
    PrototypeGrads d_prototypes;
};

// Contrast-free tightness term: -(1/N) sum_i cos(p_{y_i}, sg[f_i]).
// Features are behind a stop-gradient, so the encoder receives exactly zero;
// only prototypes of classes present in the batch appear in the gradient map.
PrototypeLossResult prototype_loss(const EmbeddingBatch& batch, const PrototypeSet& protos);

// Rejected softmax + cross-entropy alternative, kept for ablation:
//   (1/N) sum_i [ -cos(p_{y_i}, f_i) + log sum_{p_k in P} h(p_k, f_i) ].
// Gradients flow to every prototype (the interference the tightness term
// avoids). Features remain stop-gradient, as in prototype_loss.
PrototypeLossResult prototype_loss_with_contrasts(const EmbeddingBatch& batch,
                                                  const PrototypeSet& protos, Temperature tau);

struct DistillResult {
    double value = 0.0;
    Matrix d_features;          // N x d; gradient into the current encoder
    PrototypeGrads d_prototypes;  // old classes only
};

// Prototype-sample relation distillation: for each old-class prototype,
// KL( student distribution || teacher distribution ) where each distribution
// is the prototype's temperature-scaled cosine softmax over the minibatch.
// Student side uses current features/prototypes; teacher side uses the frozen
// snapshot. Gradients reach current features and current old-class prototypes
// only; the teacher and current-class prototypes receive exactly zero.
DistillResult relation_distill_loss(const EmbeddingBatch& batch, const PrototypeSet& protos,
                                    const TeacherSnapshot& teacher, Temperature tau);

struct TotalLossResult {
    LossBreakdown breakdown;
    Matrix d_projections;      // sc_weight-scaled
    Matrix d_features;         // beta-scaled; empty when distillation inactive
    PrototypeGrads d_prototypes;  // alpha/beta-scaled, merged
};

// Weighted combination sc_weight*L_sc + alpha*L_p + beta*L_d. The distillation
// term is skipped entirely when beta == 0 or no old classes exist; a missing
// teacher with old classes present and beta > 0 is a StateError.
TotalLossResult total_loss(const EmbeddingBatch& batch, const PrototypeSet& protos,
                           const TeacherSnapshot* teacher, const LossConfig& cfg);

}  // namespace prd
