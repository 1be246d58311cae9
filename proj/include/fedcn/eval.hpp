#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedcn/dataset.hpp"
#include "fedcn/model.hpp"
#include "fedcn/numcore.hpp"

namespace fedcn {

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> matching;  // (row, col), ascending rows
    double total_cost = 0.0;
};

/// Minimum-cost matching (Kuhn-Munkres with potentials). Rectangular inputs are
/// padded with zero-cost dummy rows/cols; dummy pairs are not reported.
Assignment hungarian_assignment(const Matrix& cost);

/// Number of samples agreeing under the best one-to-one cluster -> class map.
std::size_t novel_cluster_matches(std::span<const int> pred_clusters, std::span<const int> true_labels);

/// Hungarian clustering accuracy: novel_cluster_matches / N.
double novel_cluster_accuracy(std::span<const int> pred_clusters, std::span<const int> true_labels);

struct Tally {
    std::size_t correct = 0;
    std::size_t total = 0;

    /// Empty when total == 0 (undefined metric).
    std::optional<double> fraction() const {
        if (total == 0) return std::nullopt;
        return static_cast<double>(correct) / static_cast<double>(total);
    }
};

/// Argmax over every classifier row; sample counted correct when it lands on the row
/// of its class (row = position of the class id in `known_classes`).
Tally known_accuracy(const Model& model, const Dataset& test, std::span<const ClassId> known_classes);

/// Argmax restricted to the rows of one classifier head.
std::vector<int> head_predictions(const Model& model, std::span<const Vector> inputs, std::size_t head);

/// Hungarian-matched agreement of a novel head's predictions on a labeled test set.
Tally novel_head_accuracy(const Model& model, const Dataset& test, std::size_t head);

/// Sample-weighted combination; empty when both counts are zero.
std::optional<double> overall_accuracy(double known_acc, double novel_acc, std::size_t n_known, std::size_t n_novel);

/// before - after; positive values mean the model forgot.
double forgetting(double known_acc_before, double known_acc_after);

}  // namespace fedcn
