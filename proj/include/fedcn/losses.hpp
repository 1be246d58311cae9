#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedcn/numcore.hpp"

namespace fedcn {

struct LossConfig {
    double tau = 0.07;  // temperature
    double eta = 0.1;   // weight of the prototype contrastive term in the known stage

    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

/// Scalar loss plus gradients w.r.t. whichever inputs the loss consumes. Members a
/// loss does not touch are left empty.
struct LossOutput {
    double value = 0.0;
    std::vector<Vector> grad_logits;
    std::vector<Vector> grad_probs;
    std::vector<Vector> grad_reps;
    std::vector<Vector> grad_prototypes;
};

/// Mean cross-entropy of softmax(logits) against integer labels.
LossOutput ce_loss(std::span<const Vector> logits, std::span<const int> labels);

/// Prototype contrastive loss. Positive pair: (z_i, p_{y_i}). The denominator sums
/// exp(z_i . p_c / tau) over all prototypes and exp(z_i . z_j / tau) over batch
/// samples j whose label differs from y_i. The per-sample term is -log of the ratio.
LossOutput pcl_loss(std::span<const Vector> reps, std::span<const int> labels,
                    std::span<const Vector> prototypes, const LossConfig& config);

/// ce + eta * pcl, values and every gradient member.
LossOutput combined_known_loss(const LossOutput& ce, const LossOutput& pcl, double eta);

/// Semantic-weighted loss: mean over samples of sum_c softmax_c(z . p_c / tau) * ||z - p_c||.
/// Gradients flow to both the representations and the prototypes.
LossOutput swl_loss(std::span<const Vector> reps, std::span<const Vector> prototypes, const LossConfig& config);

inline constexpr double kBceClamp = 1e-7;
inline constexpr std::size_t kDefaultRankTopK = 5;

/// Indices of the k largest coordinates, sorted ascending (ties to the lower index).
std::vector<std::size_t> topk_indices(std::span<const double> v, std::size_t k);

/// Pairwise binary cross-entropy over all ordered pairs (i, j), including i == j.
/// Targets s_ij = 1 iff the top-k coordinate index sets of reps i and j coincide.
/// Produces grad_probs only; the targets carry no gradient.
LossOutput pairwise_bce_loss(std::span<const Vector> novel_probs, std::span<const Vector> reps, std::size_t topk);

/// pairwise_bce_loss on softmax(novel_logits); produces grad_logits.
LossOutput pairwise_bce_from_logits(std::span<const Vector> novel_logits, std::span<const Vector> reps,
                                    std::size_t topk);

}  // namespace fedcn
