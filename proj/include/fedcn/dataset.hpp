#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "fedcn/numcore.hpp"
#include "fedcn/rng.hpp"

namespace fedcn {

using ClassId = int;

struct LabeledSample {
    Vector features;
    ClassId label = -1;
};

/// A labeled (or label-free, when loaded from a CSV without a label column) dataset.
struct Dataset {
    std::size_t dim = 0;
    bool labeled = true;
    std::vector<LabeledSample> samples;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    /// 1 + largest label, or 0 for an empty / unlabeled set.
    std::size_t class_count() const;
    /// Sample counts indexed by class id, length class_count().
    std::vector<std::size_t> class_histogram() const;
};

/// Novel-class data as seen by participants: features only. The ground-truth ids
/// ride along for evaluation and are never read by training code.
struct UnlabeledSet {
    std::size_t dim = 0;
    std::vector<Vector> features;
    std::vector<ClassId> hidden_labels;

    std::size_t size() const noexcept { return features.size(); }
    bool empty() const noexcept { return features.empty(); }
};

struct GaussianMixtureSpec {
    std::size_t class_count = 0;
    std::size_t dim = 0;
    std::vector<Vector> means;
    std::vector<double> stddev;  // one per class
    std::size_t samples_per_class = 0;

    void validate() const;
    /// Smallest distance between two class means (infinity for a single class).
    double min_mean_separation() const;
};

/// Random class means rescaled so the closest pair sits exactly `separation` apart.
std::vector<Vector> separated_means(std::size_t class_count, std::size_t dim, double separation,
                                    RngStream& rng);

/// Class c sits on axis c at distance separation / sqrt(2) from the origin, so every
/// pair of means is exactly `separation` apart. Needs dim >= class_count.
std::vector<Vector> orthogonal_means(std::size_t class_count, std::size_t dim, double separation);

/// Samples are emitted class-major: all of class 0, then class 1, ...
Dataset generate_gaussian_mixture(const GaussianMixtureSpec& spec, RngStream& rng);

struct PartitionSpec {
    std::size_t participant_count = 1;
    double alpha = 0.1;
    Vector prior;  // empty = uniform over the dataset's classes

    void validate(std::size_t class_count) const;
};

struct Partition {
    std::vector<Dataset> participants;
    Matrix proportions;               // participant x class, rows are the drawn q vectors
    std::vector<std::size_t> owner;   // owning participant per input sample
};

/// Each participant draws q ~ Dir(alpha * prior); each sample of class c is then
/// handed to a participant drawn from column c of the q matrix.
Partition dirichlet_partition(const Dataset& data, const PartitionSpec& spec, RngStream& rng);

struct StageSchedule {
    std::vector<ClassId> known_classes;
    std::vector<std::vector<ClassId>> novel_stages;

    /// Throws InvalidArgument when any class id repeats across (or within) lists.
    void validate() const;
    std::size_t stage_count() const noexcept { return novel_stages.size(); }
};

struct StageSplit {
    Dataset known_train;
    std::vector<UnlabeledSet> novel_train;
    Dataset known_test;
    std::vector<Dataset> novel_test;
};

inline constexpr double kDefaultTestFraction = 1.0 / 6.0;

/// Holds out the last floor(n * test_fraction) samples of each class for testing,
/// then routes the remaining samples by schedule. Classes outside the schedule are
/// dropped. Known sets keep labels; novel training sets are stripped.
StageSplit split_stages(const Dataset& data, const StageSchedule& schedule,
                        double test_fraction = kDefaultTestFraction);

/// Reads `f0,...,f{d-1}[,label]` CSV embeddings.
Dataset load_embedding_csv(const std::filesystem::path& path);

}  // namespace fedcn
