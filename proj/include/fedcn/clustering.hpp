#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fedcn/numcore.hpp"
#include "fedcn/rng.hpp"

namespace fedcn {

struct KmeansResult {
    std::vector<Vector> centroids;
    std::vector<std::size_t> assignment;
    double inertia = 0.0;
    std::size_t iterations = 0;
    /// Inertia after every assignment step, final assignment last.
    std::vector<double> inertia_trace;
};

inline constexpr std::size_t kKmeansMaxIter = 300;
inline constexpr double kKmeansTol = 1e-6;

std::size_t distinct_point_count(std::span<const Vector> points);

/// k-means++ seeding followed by Lloyd iterations. k is capped at the number of
/// distinct points. An empty cluster is reseeded at the point farthest from its
/// current centroid.
KmeansResult kmeans(std::span<const Vector> points, std::size_t k, RngStream& rng,
                    std::size_t max_iter = kKmeansMaxIter, double tol = kKmeansTol);

/// Centroids of kmeans with k = min(known_count, distinct points).
std::vector<Vector> local_prototypes(std::span<const Vector> reps, std::size_t known_count, RngStream& rng);

struct DbscanResult {
    std::vector<int> labels;  // -1 = noise; clusters numbered by first occurrence
    std::size_t cluster_count = 0;
};

/// A point is core when at least `min_size` points (itself included) lie within
/// distance <= eps. Clusters are connected components of core points plus the border
/// points they reach.
DbscanResult dbscan(std::span<const Vector> points, double eps, std::size_t min_size);

/// eps_e = min D + (e / E)(max D - min D), e = 0..E, over all pairwise distances D.
std::vector<double> rising_eps_schedule(std::span<const Vector> points, std::size_t steps);

struct PpmResult {
    std::size_t estimated_count = 0;
    std::vector<Vector> global_prototypes;
    std::vector<std::pair<double, std::size_t>> per_step_counts;  // (eps_e, clusters at eps_e)
};

inline constexpr std::size_t kPpmSteps = 50;
inline constexpr std::size_t kPpmMinSize = 2;

/// Potential prototype merge: sweep DBSCAN over the rising radius schedule, take the
/// largest cluster count as the class-count estimate, then k-means the pool with that
/// count to obtain the global prototypes.
PpmResult ppm_estimate(std::span<const Vector> pool, std::size_t steps, std::size_t min_size, RngStream& rng);

}  // namespace fedcn
