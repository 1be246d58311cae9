#include "fedcn/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace fedcn {

namespace {

void require_points(std::span<const Vector> points, const char* op) {
    if (points.empty()) throw InvalidArgument(std::string(op) + ": empty input");
    const std::size_t d = points.front().size();
    for (const auto& p : points) {
        if (p.size() != d) throw InvalidArgument(std::string(op) + ": ragged point dimensions");
    }
}

std::pair<std::size_t, double> nearest(std::span<const double> p, const std::vector<Vector>& centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(p, centroids[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return {best, best_d};
}

double assign_all(std::span<const Vector> points, const std::vector<Vector>& centroids,
                  std::vector<std::size_t>& assignment) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto [c, d] = nearest(points[i], centroids);
        assignment[i] = c;
        inertia += d;
    }
    return inertia;
}

std::vector<Vector> plus_plus_seed(std::span<const Vector> points, std::size_t k, RngStream& rng) {
    std::vector<Vector> centroids;
    centroids.reserve(k);
    centroids.push_back(points[rng.uniform_index(points.size())]);
    Vector d2(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) d2[i] = squared_distance(points[i], centroids[0]);
    while (centroids.size() < k) {
        const std::size_t pick = rng.categorical(d2);
        centroids.push_back(points[pick]);
        for (std::size_t i = 0; i < points.size(); ++i) {
            d2[i] = std::min(d2[i], squared_distance(points[i], centroids.back()));
        }
    }
    return centroids;
}

}  // namespace

std::size_t distinct_point_count(std::span<const Vector> points) {
    std::vector<const Vector*> ptrs;
    ptrs.reserve(points.size());
    for (const auto& p : points) ptrs.push_back(&p);
    std::sort(ptrs.begin(), ptrs.end(), [](const Vector* a, const Vector* b) { return *a < *b; });
    return static_cast<std::size_t>(
        std::unique(ptrs.begin(), ptrs.end(), [](const Vector* a, const Vector* b) { return *a == *b; }) -
        ptrs.begin());
}

KmeansResult kmeans(std::span<const Vector> points, std::size_t k, RngStream& rng, std::size_t max_iter,
                    double tol) {
    require_points(points, "kmeans");
    if (k < 1) throw InvalidArgument("kmeans: k must be >= 1");
    k = std::min(k, distinct_point_count(points));
    const std::size_t n = points.size();
    const std::size_t d = points.front().size();

    KmeansResult res;
    res.centroids = plus_plus_seed(points, k, rng);
    res.assignment.assign(n, 0);

    std::vector<std::size_t> counts(k);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        res.inertia_trace.push_back(assign_all(points, res.centroids, res.assignment));
        res.iterations = iter + 1;

        std::vector<Vector> next(k, Vector(d, 0.0));
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            axpy(1.0, points[i], next[res.assignment[i]]);
            ++counts[res.assignment[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (double& v : next[c]) v /= static_cast<double>(counts[c]);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            // Reseed at the point farthest from its centroid, taken from a cluster that
            // keeps at least one member.
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[res.assignment[i]] < 2) continue;
                const double dd = squared_distance(points[i], next[res.assignment[i]]);
                if (dd > far_d) {
                    far_d = dd;
                    far = i;
                }
            }
            if (far == n) break;
            --counts[res.assignment[far]];
            res.assignment[far] = c;
            counts[c] = 1;
            next[c] = points[far];
        }

        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, euclidean_distance(next[c], res.centroids[c]));
        res.centroids = std::move(next);
        if (shift < tol) break;
    }
    res.inertia = assign_all(points, res.centroids, res.assignment);
    res.inertia_trace.push_back(res.inertia);
    return res;
}

std::vector<Vector> local_prototypes(std::span<const Vector> reps, std::size_t known_count, RngStream& rng) {
    if (reps.empty()) throw InvalidArgument("local_prototypes: empty representations");
    return kmeans(reps, std::max<std::size_t>(known_count, 1), rng).centroids;
}

DbscanResult dbscan(std::span<const Vector> points, double eps, std::size_t min_size) {
    DbscanResult res;
    const std::size_t n = points.size();
    res.labels.assign(n, -1);
    if (n == 0) return res;
    if (!(eps >= 0.0)) throw InvalidArgument("dbscan: eps must be >= 0");
    if (min_size < 1) throw InvalidArgument("dbscan: min_size must be >= 1");
    require_points(points, "dbscan");

    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i) {
        neighbors[i].push_back(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            if (euclidean_distance(points[i], points[j]) <= eps) {
                neighbors[i].push_back(j);
                neighbors[j].push_back(i);
            }
        }
    }
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) core[i] = neighbors[i].size() >= min_size;

    int next_id = 0;
    std::deque<std::size_t> frontier;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i] || res.labels[i] != -1) continue;
        const int id = next_id++;
        res.labels[i] = id;
        frontier.push_back(i);
        while (!frontier.empty()) {
            const std::size_t p = frontier.front();
            frontier.pop_front();
            for (std::size_t q : neighbors[p]) {
                if (res.labels[q] != -1) continue;
                res.labels[q] = id;
                if (core[q]) frontier.push_back(q);
            }
        }
    }

    // Renumber clusters by first occurrence in input order.
    std::vector<int> remap(static_cast<std::size_t>(next_id), -1);
    int canonical = 0;
    for (int& l : res.labels) {
        if (l < 0) continue;
        auto& slot = remap[static_cast<std::size_t>(l)];
        if (slot < 0) slot = canonical++;
        l = slot;
    }
    res.cluster_count = static_cast<std::size_t>(canonical);
    return res;
}

std::vector<double> rising_eps_schedule(std::span<const Vector> points, std::size_t steps) {
    if (points.size() < 2) throw InvalidArgument("rising_eps_schedule: need at least 2 points");
    if (steps < 1) throw InvalidArgument("rising_eps_schedule: steps must be >= 1");
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            const double d = euclidean_distance(points[i], points[j]);
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
    }
    std::vector<double> eps(steps + 1);
    for (std::size_t e = 0; e < steps; ++e) {
        eps[e] = lo + (static_cast<double>(e) / static_cast<double>(steps)) * (hi - lo);
    }
    eps[steps] = hi;
    return eps;
}

PpmResult ppm_estimate(std::span<const Vector> pool, std::size_t steps, std::size_t min_size, RngStream& rng) {
    if (pool.size() < 2) throw InvalidArgument("ppm_estimate: pool needs at least 2 points");
    PpmResult res;
    for (double eps : rising_eps_schedule(pool, steps)) {
        const std::size_t count = dbscan(pool, eps, min_size).cluster_count;
        res.per_step_counts.emplace_back(eps, count);
        res.estimated_count = std::max(res.estimated_count, count);
    }
    // Only reachable with min_size > pool size.
    if (res.estimated_count == 0) res.estimated_count = 1;
    res.global_prototypes = kmeans(pool, res.estimated_count, rng).centroids;
    return res;
}

}  // namespace fedcn
