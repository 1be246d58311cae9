#include "fedcn/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fedcn {

namespace {

void require_same_dim(std::span<const double> a, std::span<const double> b, const char* op) {
    if (a.size() != b.size()) {
        throw InvalidArgument(std::string(op) + ": dimension mismatch (" + std::to_string(a.size()) +
                              " vs " + std::to_string(b.size()) + ")");
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw InvalidArgument("Matrix: element count does not match rows*cols");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) throw InvalidArgument("Matrix::append_row: width mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a, b, "squared_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a, b, "euclidean_distance");
    return std::sqrt(squared_distance(a, b));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a, b, "cosine_similarity");
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw DegenerateInput("cosine_similarity: zero-norm input");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Vector softmax(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw InvalidArgument("softmax: temperature must be positive");
    if (logits.empty()) return {};
    const double m = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - m) / temperature);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) throw InvalidArgument("log_sum_exp: empty input");
    const double m = *std::max_element(v.begin(), v.end());
    if (std::isinf(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

std::size_t argmax_stable(std::span<const double> v) {
    if (v.empty()) throw InvalidArgument("argmax_stable: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw InvalidArgument("axpy: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace fedcn
