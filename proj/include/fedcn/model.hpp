#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedcn/numcore.hpp"
#include "fedcn/rng.hpp"

namespace fedcn {

enum class Activation { Identity, Relu };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
    Activation activation = Activation::Identity;
};

/// MLP feature extractor z = f(x).
struct FeatureExtractor {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    void validate() const;

    friend bool operator==(const FeatureExtractor&, const FeatureExtractor&) = default;
};

inline bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weight == b.weight && a.bias == b.bias && a.activation == b.activation;
}

/// Bias-free linear classifier. Row c is the prototype of class c. Rows are grouped
/// into heads: head 0 holds the known classes, head s (s >= 1) the classes added in
/// novel stage s.
struct Classifier {
    Matrix weights;                     // class_count x d
    std::vector<bool> frozen;           // per row
    std::vector<std::size_t> head_sizes;

    std::size_t class_count() const noexcept { return weights.rows(); }
    std::size_t dim() const noexcept { return weights.cols(); }
    std::size_t head_offset(std::size_t head) const;
    bool is_frozen(std::size_t row) const { return frozen.at(row); }

    friend bool operator==(const Classifier&, const Classifier&) = default;
};

struct Model {
    FeatureExtractor extractor;
    Classifier classifier;

    friend bool operator==(const Model&, const Model&) = default;
};

struct ModelShape {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden = {64, 32};
    std::size_t representation_dim = 16;
    std::size_t class_count = 0;
};

/// Weights and biases ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)); relu on hidden layers,
/// identity on the representation layer.
Model make_model(const ModelShape& shape, RngStream& rng);

/// Per-sample layer outputs; outputs[0] is the input, outputs[l + 1] the output of layer l.
struct FeatureTrace {
    std::vector<Vector> outputs;
};

Vector forward_features(const FeatureExtractor& f, std::span<const double> x, FeatureTrace* trace = nullptr);
Vector forward_logits(const Classifier& g, std::span<const double> z);

/// Cached forward pass over a batch, consumed by backward().
struct BatchForward {
    std::vector<FeatureTrace> traces;
    std::vector<Vector> representations;
    std::vector<Vector> logits;

    std::size_t size() const noexcept { return representations.size(); }
    bool has_trace() const noexcept { return !traces.empty(); }
};

BatchForward forward_batch(const Model& model, std::span<const Vector> inputs);

/// Parameter-shaped blocks; used both for gradients and for parameter deltas.
struct GradientSet {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    Matrix classifier;

    static GradientSet zeros_like(const Model& model);

    bool matches(const Model& model) const;
    bool same_shape(const GradientSet& other) const;
    void add_scaled(const GradientSet& other, double scale);
    void scale(double factor);
    bool is_zero() const;
    double max_abs() const;

    friend bool operator==(const GradientSet&, const GradientSet&) = default;
};

/// Upstream gradients of a scalar loss. Any member may be empty.
struct UpstreamGrad {
    std::vector<Vector> logits;       // dL/dlogits per sample
    std::vector<Vector> reps;         // dL/dz per sample
    std::vector<Vector> prototypes;   // dL/d(classifier row) for rows prototype_offset...
    std::size_t prototype_offset = 0;
};

/// Reverse-mode pass. Frozen classifier rows receive zero gradient. Throws StateError
/// when `forward` carries no trace.
GradientSet backward(const Model& model, const BatchForward& forward, const UpstreamGrad& upstream);

/// p <- p - lr * g on every unfrozen parameter.
void sgd_step(Model& model, const GradientSet& grads, double lr);

/// (local - global) over every parameter block.
GradientSet parameter_delta(const Model& local, const Model& global);

/// p <- p + delta on every parameter not held by a frozen classifier row.
void apply_delta(Model& model, const GradientSet& delta);

/// Live view of a contiguous range of classifier rows; reads current weights.
class PrototypeView {
public:
    PrototypeView(const Classifier& g, std::size_t first, std::size_t count);

    std::size_t size() const noexcept { return count_; }
    std::span<const double> operator[](std::size_t i) const { return g_->weights.row(first_ + i); }
    std::vector<Vector> copy() const;

private:
    const Classifier* g_;
    std::size_t first_;
    std::size_t count_;
};

/// Rows 0..known_count-1 of the classifier.
PrototypeView known_prototypes(const Classifier& g, std::size_t known_count);

/// Appends one row per prototype as a new head and freezes every pre-existing row.
Classifier extend_classifier(const Classifier& g, std::span<const Vector> new_prototypes);

/// Immutable deep copy of a model taken at a named moment.
class ModelSnapshot {
public:
    ModelSnapshot(std::string name, Model model) : name_(std::move(name)), model_(std::move(model)) {}

    const std::string& name() const noexcept { return name_; }
    const Model& model() const noexcept { return model_; }

private:
    std::string name_;
    Model model_;
};

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& text, const std::string& source = "<memory>");

}  // namespace fedcn
