// Shared oracles and generators for the test binaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "fedcn/model.hpp"
#include "fedcn/numcore.hpp"
#include "fedcn/rng.hpp"

namespace fedcn::testing {

inline std::vector<Vector> random_vectors(RngStream& rng, std::size_t n, std::size_t d, double scale = 1.0) {
    std::vector<Vector> out(n, Vector(d));
    for (auto& v : out) {
        for (double& x : v) x = scale * rng.normal();
    }
    return out;
}

inline Matrix random_matrix(RngStream& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& x : m.data()) x = scale * rng.normal();
    return m;
}

/// Straight-line re-evaluation of an MLP, written without the library's forward path.
inline Vector reference_forward(const FeatureExtractor& f, const Vector& x) {
    Vector cur = x;
    for (const auto& layer : f.layers) {
        Vector next(layer.weight.rows(), 0.0);
        for (std::size_t r = 0; r < layer.weight.rows(); ++r) {
            double acc = layer.bias[r];
            for (std::size_t c = 0; c < layer.weight.cols(); ++c) acc += layer.weight(r, c) * cur[c];
            next[r] = (layer.activation == Activation::Relu && acc < 0.0) ? 0.0 : acc;
        }
        cur = std::move(next);
    }
    return cur;
}

inline Vector reference_logits(const Classifier& g, const Vector& z) {
    Vector out(g.class_count(), 0.0);
    for (std::size_t c = 0; c < g.class_count(); ++c) {
        for (std::size_t k = 0; k < g.dim(); ++k) out[c] += g.weights(c, k) * z[k];
    }
    return out;
}

/// True when some relu pre-activation sits within `margin` of its kink, where central
/// differences stop approximating the one-sided derivative.
inline bool near_relu_kink(const FeatureExtractor& f, const std::vector<Vector>& inputs, double margin = 1e-3) {
    for (const auto& x : inputs) {
        Vector cur = x;
        for (const auto& layer : f.layers) {
            Vector next(layer.weight.rows(), 0.0);
            for (std::size_t r = 0; r < layer.weight.rows(); ++r) {
                double acc = layer.bias[r];
                for (std::size_t c = 0; c < layer.weight.cols(); ++c) acc += layer.weight(r, c) * cur[c];
                if (layer.activation == Activation::Relu && std::abs(acc) < margin) return true;
                next[r] = (layer.activation == Activation::Relu && acc < 0.0) ? 0.0 : acc;
            }
            cur = std::move(next);
        }
    }
    return false;
}

/// Every trainable scalar of a model, in a fixed order shared with flatten().
inline std::vector<double*> parameter_refs(Model& m) {
    std::vector<double*> out;
    for (auto& layer : m.extractor.layers) {
        for (double& v : layer.weight.data()) out.push_back(&v);
        for (double& v : layer.bias) out.push_back(&v);
    }
    for (double& v : m.classifier.weights.data()) out.push_back(&v);
    return out;
}

inline std::vector<double> flatten(const GradientSet& g) {
    std::vector<double> out;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        for (double v : g.weights[l].data()) out.push_back(v);
        for (double v : g.biases[l]) out.push_back(v);
    }
    for (double v : g.classifier.data()) out.push_back(v);
    return out;
}

/// Whether parameter `index` (parameter_refs order) sits in a frozen classifier row.
inline bool is_frozen_param(const Model& m, std::size_t index) {
    std::size_t extractor = 0;
    for (const auto& layer : m.extractor.layers) extractor += layer.weight.size() + layer.bias.size();
    if (index < extractor) return false;
    return m.classifier.is_frozen((index - extractor) / m.classifier.dim());
}

struct FdReport {
    std::size_t checked = 0;
    std::size_t failures = 0;
    double worst_rel = 0.0;
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-4;

/// Cancellation noise of a central difference: the two loss values each carry about
/// one ulp of error, amplified by 1/(2h). A generous multiple keeps the bound safe.
inline double fd_noise(double loss_scale) {
    return 16.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(loss_scale), 1.0) / kFdStep;
}

/// Relative error, except that gaps below the difference-quotient noise do not count.
inline double relative_gap(double analytic, double numeric, double noise = 0.0) {
    const double gap = std::abs(analytic - numeric);
    if (gap <= noise) return 0.0;
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    return scale == 0.0 ? std::numeric_limits<double>::infinity() : (gap - noise) / scale;
}

/// Central differences of `loss` over every parameter; frozen classifier rows must carry
/// an exactly zero analytic gradient instead.
inline FdReport finite_difference_check(const Model& model, const std::function<double(const Model&)>& loss,
                                        const GradientSet& analytic) {
    FdReport rep;
    Model probe = model;
    const auto refs = parameter_refs(probe);
    const auto grads = flatten(analytic);
    const double noise = fd_noise(loss(model));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (is_frozen_param(model, i)) {
            if (grads[i] != 0.0) ++rep.failures;
            continue;
        }
        const double saved = *refs[i];
        *refs[i] = saved + kFdStep;
        const double up = loss(probe);
        *refs[i] = saved - kFdStep;
        const double down = loss(probe);
        *refs[i] = saved;
        const double numeric = (up - down) / (2.0 * kFdStep);
        const double gap = relative_gap(grads[i], numeric, noise);
        rep.worst_rel = std::max(rep.worst_rel, gap);
        if (gap > kFdRelTol) ++rep.failures;
        ++rep.checked;
    }
    return rep;
}

}  // namespace fedcn::testing
