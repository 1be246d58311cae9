// Exhaustive assignment search, the reference for the Hungarian solver.
#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "fedcn/numcore.hpp"
#include "fedcn/rng.hpp"

namespace fedcn::testing {

/// Minimum total cost over every one-to-one matching of min(rows, cols) pairs. Each
/// candidate is summed in ascending row order, the order the solver reports in.
inline double brute_force_assignment(const Matrix& cost) {
    const std::size_t r = cost.rows(), c = cost.cols();
    const std::size_t big = std::max(r, c);
    std::vector<std::size_t> perm(big);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        // perm maps row i -> column perm[i] over the padded square; pairs touching
        // padding cost nothing and are skipped.
        double total = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            if (perm[i] < c) total += cost(i, perm[i]);
        }
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

/// Random instance: shape in [1, 7] x [1, 7], costs uniform in [-10, 10).
inline Matrix random_cost_matrix(RngStream& rng) {
    const std::size_t rows = 1 + rng.uniform_index(7);
    const std::size_t cols = 1 + rng.uniform_index(7);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.uniform(-10.0, 10.0);
    return m;
}

}  // namespace fedcn::testing
