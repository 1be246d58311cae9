#include "fedcn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace fedcn {

Assignment hungarian_assignment(const Matrix& cost) {
    if (cost.rows() == 0 || cost.cols() == 0) throw InvalidArgument("hungarian_assignment: empty matrix");
    if (!all_finite(cost.data())) throw InvalidArgument("hungarian_assignment: non-finite cost");
    const std::size_t n = std::max(cost.rows(), cost.cols());
    auto at = [&](std::size_t r, std::size_t c) {
        return (r < cost.rows() && c < cost.cols()) ? cost(r, c) : 0.0;
    };

    // 1-indexed potentials formulation; col_of_row via p[] (p[j] = row matched to column j).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::size_t> col_of_row(n, 0);
    for (std::size_t j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;

    Assignment out;
    for (std::size_t r = 0; r < cost.rows(); ++r) {
        const std::size_t c = col_of_row[r];
        if (c >= cost.cols()) continue;
        out.matching.emplace_back(r, c);
        out.total_cost += cost(r, c);
    }
    return out;
}

std::size_t novel_cluster_matches(std::span<const int> pred_clusters, std::span<const int> true_labels) {
    if (pred_clusters.size() != true_labels.size()) {
        throw InvalidArgument("novel_cluster_accuracy: prediction/label length mismatch");
    }
    if (pred_clusters.empty()) throw InvalidArgument("novel_cluster_accuracy: empty input");
    std::map<int, std::size_t> pred_index, true_index;
    for (int p : pred_clusters) pred_index.emplace(p, 0);
    for (int t : true_labels) true_index.emplace(t, 0);
    std::size_t k = 0;
    for (auto& [_, idx] : pred_index) idx = k++;
    k = 0;
    for (auto& [_, idx] : true_index) idx = k++;

    Matrix counts(pred_index.size(), true_index.size());
    for (std::size_t i = 0; i < pred_clusters.size(); ++i) {
        counts(pred_index[pred_clusters[i]], true_index[true_labels[i]]) += 1.0;
    }
    Matrix cost = counts;
    for (double& v : cost.data()) v = -v;
    const auto assignment = hungarian_assignment(cost);
    std::size_t matched = 0;
    for (const auto& [r, c] : assignment.matching) matched += static_cast<std::size_t>(counts(r, c));
    return matched;
}

double novel_cluster_accuracy(std::span<const int> pred_clusters, std::span<const int> true_labels) {
    const std::size_t matched = novel_cluster_matches(pred_clusters, true_labels);
    return static_cast<double>(matched) / static_cast<double>(pred_clusters.size());
}

Tally known_accuracy(const Model& model, const Dataset& test, std::span<const ClassId> known_classes) {
    std::map<ClassId, std::size_t> row_of;
    for (std::size_t r = 0; r < known_classes.size(); ++r) row_of[known_classes[r]] = r;
    Tally t;
    for (const auto& s : test.samples) {
        const auto it = row_of.find(s.label);
        if (it == row_of.end()) continue;
        const Vector logits = forward_logits(model.classifier, forward_features(model.extractor, s.features));
        ++t.total;
        if (argmax_stable(logits) == it->second) ++t.correct;
    }
    return t;
}

std::vector<int> head_predictions(const Model& model, std::span<const Vector> inputs, std::size_t head) {
    const std::size_t offset = model.classifier.head_offset(head);
    const std::size_t width = model.classifier.head_sizes[head];
    std::vector<int> out;
    out.reserve(inputs.size());
    for (const auto& x : inputs) {
        const Vector logits = forward_logits(model.classifier, forward_features(model.extractor, x));
        std::span<const double> slice(logits.data() + offset, width);
        out.push_back(static_cast<int>(argmax_stable(slice)));
    }
    return out;
}

Tally novel_head_accuracy(const Model& model, const Dataset& test, std::size_t head) {
    Tally t;
    t.total = test.size();
    if (test.empty()) return t;
    std::vector<Vector> inputs;
    std::vector<int> truth;
    inputs.reserve(test.size());
    for (const auto& s : test.samples) {
        inputs.push_back(s.features);
        truth.push_back(s.label);
    }
    t.correct = novel_cluster_matches(head_predictions(model, inputs, head), truth);
    return t;
}

std::optional<double> overall_accuracy(double known_acc, double novel_acc, std::size_t n_known, std::size_t n_novel) {
    if (n_known + n_novel == 0) return std::nullopt;
    const double nk = static_cast<double>(n_known);
    const double nn = static_cast<double>(n_novel);
    return (known_acc * nk + novel_acc * nn) / (nk + nn);
}

double forgetting(double known_acc_before, double known_acc_after) { return known_acc_before - known_acc_after; }

}  // namespace fedcn
