#include "fedcn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedcn {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw InvalidArgument("loss: tau must be > 0");
    if (!(eta >= 0.0)) throw InvalidArgument("loss: eta must be >= 0");
}

namespace {

void require_batch(std::size_t n, const char* op) {
    if (n == 0) throw InvalidArgument(std::string(op) + ": empty batch");
}

std::vector<Vector> zeros(std::size_t n, std::size_t d) { return std::vector<Vector>(n, Vector(d, 0.0)); }

}  // namespace

LossOutput ce_loss(std::span<const Vector> logits, std::span<const int> labels) {
    require_batch(logits.size(), "ce_loss");
    if (labels.size() != logits.size()) throw InvalidArgument("ce_loss: labels/logits batch mismatch");
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    LossOutput out;
    out.grad_logits.reserve(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const auto& l = logits[i];
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= l.size()) {
            throw InvalidArgument("ce_loss: label " + std::to_string(y) + " outside logit width " +
                                  std::to_string(l.size()));
        }
        out.value += (log_sum_exp(l) - l[static_cast<std::size_t>(y)]) * inv_n;
        Vector g = softmax(l);
        g[static_cast<std::size_t>(y)] -= 1.0;
        for (double& v : g) v *= inv_n;
        out.grad_logits.push_back(std::move(g));
    }
    return out;
}

LossOutput pcl_loss(std::span<const Vector> reps, std::span<const int> labels, std::span<const Vector> prototypes,
                    const LossConfig& config) {
    config.validate();
    require_batch(reps.size(), "pcl_loss");
    if (labels.size() != reps.size()) throw InvalidArgument("pcl_loss: labels/reps batch mismatch");
    if (prototypes.empty()) throw InvalidArgument("pcl_loss: no prototypes");
    const std::size_t n = reps.size();
    const std::size_t d = prototypes.front().size();
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= prototypes.size()) {
            throw InvalidArgument("pcl_loss: no prototype for label " + std::to_string(y));
        }
    }

    const double inv_tau = 1.0 / config.tau;
    const double inv_n = 1.0 / static_cast<double>(n);
    LossOutput out;
    out.grad_reps = zeros(n, d);
    out.grad_prototypes = zeros(prototypes.size(), d);

    Vector scores;
    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < n; ++i) {
        const Vector& z = reps[i];
        const auto y = static_cast<std::size_t>(labels[i]);
        negatives.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (labels[j] != labels[i]) negatives.push_back(j);
        }
        scores.assign(prototypes.size() + negatives.size(), 0.0);
        for (std::size_t c = 0; c < prototypes.size(); ++c) scores[c] = dot(z, prototypes[c]) * inv_tau;
        for (std::size_t k = 0; k < negatives.size(); ++k) {
            scores[prototypes.size() + k] = dot(z, reps[negatives[k]]) * inv_tau;
        }
        out.value += (log_sum_exp(scores) - scores[y]) * inv_n;

        const Vector a = softmax(scores);
        const double scale = inv_n * inv_tau;
        Vector& gz = out.grad_reps[i];
        axpy(-scale, prototypes[y], gz);
        for (std::size_t c = 0; c < prototypes.size(); ++c) {
            axpy(scale * a[c], prototypes[c], gz);
            const double coef = scale * (a[c] - (c == y ? 1.0 : 0.0));
            axpy(coef, z, out.grad_prototypes[c]);
        }
        for (std::size_t k = 0; k < negatives.size(); ++k) {
            const double b = a[prototypes.size() + k];
            axpy(scale * b, reps[negatives[k]], gz);
            axpy(scale * b, z, out.grad_reps[negatives[k]]);
        }
    }
    return out;
}

LossOutput combined_known_loss(const LossOutput& ce, const LossOutput& pcl, double eta) {
    LossOutput out = ce;
    out.value = ce.value + eta * pcl.value;
    auto merge = [eta](std::vector<Vector>& dst, const std::vector<Vector>& src) {
        if (src.empty()) return;
        if (dst.empty()) {
            dst = zeros(src.size(), src.front().size());
        }
        if (dst.size() != src.size()) throw InvalidArgument("combined_known_loss: batch mismatch");
        for (std::size_t i = 0; i < src.size(); ++i) axpy(eta, src[i], dst[i]);
    };
    merge(out.grad_logits, pcl.grad_logits);
    merge(out.grad_probs, pcl.grad_probs);
    merge(out.grad_reps, pcl.grad_reps);
    merge(out.grad_prototypes, pcl.grad_prototypes);
    return out;
}

LossOutput swl_loss(std::span<const Vector> reps, std::span<const Vector> prototypes, const LossConfig& config) {
    config.validate();
    if (prototypes.empty()) throw InvalidArgument("swl_loss: empty prototype set");
    require_batch(reps.size(), "swl_loss");
    const std::size_t n = reps.size();
    const std::size_t m = prototypes.size();
    const std::size_t d = prototypes.front().size();
    const double inv_tau = 1.0 / config.tau;
    const double inv_n = 1.0 / static_cast<double>(n);

    LossOutput out;
    out.grad_reps = zeros(n, d);
    out.grad_prototypes = zeros(m, d);

    Vector scores(m), dist(m);
    Vector diff(d);
    for (std::size_t i = 0; i < n; ++i) {
        const Vector& z = reps[i];
        if (z.size() != d) throw InvalidArgument("swl_loss: representation dim mismatch");
        for (std::size_t c = 0; c < m; ++c) {
            scores[c] = dot(z, prototypes[c]) * inv_tau;
            dist[c] = euclidean_distance(z, prototypes[c]);
        }
        const Vector w = softmax(scores);
        double sample_loss = 0.0;
        for (std::size_t c = 0; c < m; ++c) sample_loss += w[c] * dist[c];
        out.value += sample_loss * inv_n;

        Vector& gz = out.grad_reps[i];
        for (std::size_t c = 0; c < m; ++c) {
            const Vector& p = prototypes[c];
            Vector& gp = out.grad_prototypes[c];
            // Distance term; the subgradient at z == p is taken as zero.
            if (dist[c] > 0.0) {
                const double coef = inv_n * w[c] / dist[c];
                for (std::size_t k = 0; k < d; ++k) diff[k] = z[k] - p[k];
                axpy(coef, diff, gz);
                axpy(-coef, diff, gp);
            }
            // Weight term: dw_c/ds_j = w_c (delta_cj - w_j).
            const double wcoef = inv_n * inv_tau * w[c] * (dist[c] - sample_loss);
            axpy(wcoef, p, gz);
            axpy(wcoef, z, gp);
        }
    }
    return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> v, std::size_t k) {
    if (k > v.size()) throw InvalidArgument("topk_indices: k exceeds dimension");
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

LossOutput pairwise_bce_loss(std::span<const Vector> novel_probs, std::span<const Vector> reps, std::size_t topk) {
    const std::size_t n = novel_probs.size();
    if (n < 2) throw InvalidArgument("pairwise_bce_loss: batch must hold at least 2 samples");
    if (reps.size() != n) throw InvalidArgument("pairwise_bce_loss: probs/reps batch mismatch");

    std::vector<std::vector<std::size_t>> ranks;
    ranks.reserve(n);
    for (const auto& z : reps) ranks.push_back(topk_indices(z, topk));

    const double inv_pairs = 1.0 / static_cast<double>(n * n);
    LossOutput out;
    out.grad_probs = zeros(n, novel_probs.front().size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const bool similar = ranks[i] == ranks[j];
            const double raw = dot(novel_probs[i], novel_probs[j]);
            const double q = std::clamp(raw, kBceClamp, 1.0 - kBceClamp);
            out.value -= inv_pairs * (similar ? std::log(q) : std::log(1.0 - q));
            if (raw != q) continue;  // clamped: flat
            const double g = -inv_pairs * (similar ? 1.0 / q : -1.0 / (1.0 - q));
            axpy(g, novel_probs[j], out.grad_probs[i]);
            axpy(g, novel_probs[i], out.grad_probs[j]);
        }
    }
    return out;
}

LossOutput pairwise_bce_from_logits(std::span<const Vector> novel_logits, std::span<const Vector> reps,
                                    std::size_t topk) {
    std::vector<Vector> probs;
    probs.reserve(novel_logits.size());
    for (const auto& l : novel_logits) probs.push_back(softmax(l));
    LossOutput out = pairwise_bce_loss(probs, reps, topk);
    out.grad_logits.resize(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double pg = dot(probs[i], out.grad_probs[i]);
        Vector g(probs[i].size());
        for (std::size_t c = 0; c < g.size(); ++c) g[c] = probs[i][c] * (out.grad_probs[i][c] - pg);
        out.grad_logits[i] = std::move(g);
    }
    return out;
}

}  // namespace fedcn
