#include "fedcn/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fedcn {

const char* to_string(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "identity") return Activation::Identity;
    throw InvalidArgument("unknown activation '" + name + "'");
}

std::size_t FeatureExtractor::input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }

std::size_t FeatureExtractor::output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

void FeatureExtractor::validate() const {
    if (layers.empty()) throw InvalidArgument("extractor: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].bias.size() != layers[l].weight.rows()) {
            throw InvalidArgument("extractor: bias size mismatch in layer " + std::to_string(l));
        }
        if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows()) {
            throw InvalidArgument("extractor: layer " + std::to_string(l) + " does not compose");
        }
    }
}

std::size_t Classifier::head_offset(std::size_t head) const {
    if (head >= head_sizes.size()) throw InvalidArgument("classifier: no head " + std::to_string(head));
    std::size_t offset = 0;
    for (std::size_t h = 0; h < head; ++h) offset += head_sizes[h];
    return offset;
}

Model make_model(const ModelShape& shape, RngStream& rng) {
    if (shape.input_dim == 0 || shape.representation_dim == 0) {
        throw InvalidArgument("make_model: dimensions must be positive");
    }
    Model m;
    std::vector<std::size_t> widths{shape.input_dim};
    widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
    widths.push_back(shape.representation_dim);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        DenseLayer layer;
        layer.weight = Matrix(widths[l + 1], widths[l]);
        layer.bias.assign(widths[l + 1], 0.0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
        for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
        for (double& b : layer.bias) b = rng.uniform(-bound, bound);
        layer.activation = (l + 2 < widths.size()) ? Activation::Relu : Activation::Identity;
        m.extractor.layers.push_back(std::move(layer));
    }
    m.classifier.weights = Matrix(shape.class_count, shape.representation_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape.representation_dim));
    for (double& w : m.classifier.weights.data()) w = rng.uniform(-bound, bound);
    m.classifier.frozen.assign(shape.class_count, false);
    if (shape.class_count > 0) m.classifier.head_sizes = {shape.class_count};
    return m;
}

Vector forward_features(const FeatureExtractor& f, std::span<const double> x, FeatureTrace* trace) {
    if (f.layers.empty()) throw InvalidArgument("forward_features: extractor has no layers");
    if (x.size() != f.input_dim()) {
        throw InvalidArgument("forward_features: input dim " + std::to_string(x.size()) + " != " +
                              std::to_string(f.input_dim()));
    }
    if (trace) {
        trace->outputs.clear();
        trace->outputs.emplace_back(x.begin(), x.end());
    }
    Vector cur(x.begin(), x.end());
    for (const auto& layer : f.layers) {
        Vector next(layer.weight.rows());
        for (std::size_t r = 0; r < next.size(); ++r) {
            double s = layer.bias[r];
            const auto w = layer.weight.row(r);
            for (std::size_t c = 0; c < cur.size(); ++c) s += w[c] * cur[c];
            next[r] = (layer.activation == Activation::Relu && s < 0.0) ? 0.0 : s;
        }
        cur = std::move(next);
        if (trace) trace->outputs.push_back(cur);
    }
    return cur;
}

Vector forward_logits(const Classifier& g, std::span<const double> z) {
    if (z.size() != g.dim()) throw InvalidArgument("forward_logits: representation dim mismatch");
    Vector out(g.class_count());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = dot(g.weights.row(c), z);
    return out;
}

BatchForward forward_batch(const Model& model, std::span<const Vector> inputs) {
    BatchForward out;
    out.traces.resize(inputs.size());
    out.representations.reserve(inputs.size());
    out.logits.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        out.representations.push_back(forward_features(model.extractor, inputs[i], &out.traces[i]));
        out.logits.push_back(forward_logits(model.classifier, out.representations.back()));
    }
    return out;
}

GradientSet GradientSet::zeros_like(const Model& model) {
    GradientSet g;
    for (const auto& layer : model.extractor.layers) {
        g.weights.emplace_back(layer.weight.rows(), layer.weight.cols());
        g.biases.emplace_back(layer.bias.size(), 0.0);
    }
    g.classifier = Matrix(model.classifier.weights.rows(), model.classifier.weights.cols());
    return g;
}

bool GradientSet::matches(const Model& model) const {
    if (weights.size() != model.extractor.layers.size() || biases.size() != weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (!weights[l].same_shape(model.extractor.layers[l].weight)) return false;
        if (biases[l].size() != model.extractor.layers[l].bias.size()) return false;
    }
    return classifier.same_shape(model.classifier.weights);
}

bool GradientSet::same_shape(const GradientSet& other) const {
    if (weights.size() != other.weights.size() || biases.size() != other.biases.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (!weights[l].same_shape(other.weights[l]) || biases[l].size() != other.biases[l].size()) return false;
    }
    return classifier.same_shape(other.classifier);
}

void GradientSet::add_scaled(const GradientSet& other, double scale_by) {
    if (!same_shape(other)) throw InvalidArgument("GradientSet::add_scaled: shape mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        axpy(scale_by, other.weights[l].data(), weights[l].data());
        axpy(scale_by, other.biases[l], biases[l]);
    }
    axpy(scale_by, other.classifier.data(), classifier.data());
}

void GradientSet::scale(double factor) {
    for (auto& w : weights) {
        for (double& v : w.data()) v *= factor;
    }
    for (auto& b : biases) {
        for (double& v : b) v *= factor;
    }
    for (double& v : classifier.data()) v *= factor;
}

double GradientSet::max_abs() const {
    double m = 0.0;
    auto visit = [&](std::span<const double> block) {
        for (double v : block) m = std::max(m, std::abs(v));
    };
    for (const auto& w : weights) visit(w.data());
    for (const auto& b : biases) visit(b);
    visit(classifier.data());
    return m;
}

bool GradientSet::is_zero() const { return max_abs() == 0.0; }

GradientSet backward(const Model& model, const BatchForward& forward, const UpstreamGrad& upstream) {
    if (!forward.has_trace() || forward.traces.size() != forward.representations.size()) {
        throw StateError("backward: no cached forward pass");
    }
    const std::size_t n = forward.size();
    const auto& cls = model.classifier;
    const std::size_t d = cls.dim();
    if (!upstream.logits.empty() && upstream.logits.size() != n) {
        throw InvalidArgument("backward: logits gradient batch size mismatch");
    }
    if (!upstream.reps.empty() && upstream.reps.size() != n) {
        throw InvalidArgument("backward: representation gradient batch size mismatch");
    }
    if (upstream.prototype_offset + upstream.prototypes.size() > cls.class_count()) {
        throw InvalidArgument("backward: prototype gradient exceeds classifier rows");
    }

    GradientSet g = GradientSet::zeros_like(model);

    for (std::size_t p = 0; p < upstream.prototypes.size(); ++p) {
        const std::size_t row = upstream.prototype_offset + p;
        if (upstream.prototypes[p].size() != d) throw InvalidArgument("backward: prototype gradient dim mismatch");
        if (!cls.frozen[row]) axpy(1.0, upstream.prototypes[p], g.classifier.row(row));
    }

    const auto& layers = model.extractor.layers;
    for (std::size_t i = 0; i < n; ++i) {
        const Vector& z = forward.representations[i];
        Vector dz(d, 0.0);
        if (!upstream.reps.empty()) {
            if (upstream.reps[i].size() != d) throw InvalidArgument("backward: representation gradient dim mismatch");
            dz = upstream.reps[i];
        }
        if (!upstream.logits.empty()) {
            const Vector& dl = upstream.logits[i];
            if (dl.size() != cls.class_count()) throw InvalidArgument("backward: logits gradient width mismatch");
            for (std::size_t c = 0; c < dl.size(); ++c) {
                if (dl[c] == 0.0) continue;
                axpy(dl[c], cls.weights.row(c), dz);
                if (!cls.frozen[c]) axpy(dl[c], z, g.classifier.row(c));
            }
        }

        const auto& outs = forward.traces[i].outputs;
        Vector delta = std::move(dz);
        for (std::size_t l = layers.size(); l-- > 0;) {
            const auto& layer = layers[l];
            const Vector& out = outs[l + 1];
            const Vector& in = outs[l];
            if (layer.activation == Activation::Relu) {
                for (std::size_t r = 0; r < delta.size(); ++r) {
                    if (out[r] <= 0.0) delta[r] = 0.0;
                }
            }
            Vector prev(in.size(), 0.0);
            for (std::size_t r = 0; r < delta.size(); ++r) {
                const double dr = delta[r];
                if (dr == 0.0) continue;
                g.biases[l][r] += dr;
                auto gw = g.weights[l].row(r);
                const auto w = layer.weight.row(r);
                for (std::size_t c = 0; c < in.size(); ++c) {
                    gw[c] += dr * in[c];
                    prev[c] += dr * w[c];
                }
            }
            delta = std::move(prev);
        }
    }
    return g;
}

namespace {

template <typename Fn>
void for_each_trainable(Model& model, const GradientSet& grads, Fn&& fn) {
    if (!grads.matches(model)) throw InvalidArgument("parameter update: shape mismatch");
    for (std::size_t l = 0; l < model.extractor.layers.size(); ++l) {
        fn(model.extractor.layers[l].weight.data(), grads.weights[l].data());
        fn(std::span<double>(model.extractor.layers[l].bias), std::span<const double>(grads.biases[l]));
    }
    auto& cls = model.classifier;
    for (std::size_t r = 0; r < cls.class_count(); ++r) {
        if (!cls.frozen[r]) fn(cls.weights.row(r), grads.classifier.row(r));
    }
}

}  // namespace

void sgd_step(Model& model, const GradientSet& grads, double lr) {
    for_each_trainable(model, grads, [lr](std::span<double> p, std::span<const double> g) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    });
}

void apply_delta(Model& model, const GradientSet& delta) {
    for_each_trainable(model, delta, [](std::span<double> p, std::span<const double> g) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += g[i];
    });
}

GradientSet parameter_delta(const Model& local, const Model& global) {
    GradientSet d = GradientSet::zeros_like(global);
    if (!d.matches(local)) throw InvalidArgument("parameter_delta: model shapes differ");
    auto diff = [](std::span<const double> a, std::span<const double> b, std::span<double> out) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    };
    for (std::size_t l = 0; l < global.extractor.layers.size(); ++l) {
        diff(local.extractor.layers[l].weight.data(), global.extractor.layers[l].weight.data(), d.weights[l].data());
        diff(local.extractor.layers[l].bias, global.extractor.layers[l].bias, d.biases[l]);
    }
    diff(local.classifier.weights.data(), global.classifier.weights.data(), d.classifier.data());
    return d;
}

PrototypeView::PrototypeView(const Classifier& g, std::size_t first, std::size_t count)
    : g_(&g), first_(first), count_(count) {
    if (first + count > g.class_count()) throw InvalidArgument("PrototypeView: range exceeds classifier rows");
}

std::vector<Vector> PrototypeView::copy() const {
    std::vector<Vector> out;
    out.reserve(count_);
    for (std::size_t i = 0; i < count_; ++i) {
        const auto r = (*this)[i];
        out.emplace_back(r.begin(), r.end());
    }
    return out;
}

PrototypeView known_prototypes(const Classifier& g, std::size_t known_count) {
    if (known_count > g.class_count()) {
        throw InvalidArgument("known_prototypes: C_L=" + std::to_string(known_count) + " exceeds " +
                              std::to_string(g.class_count()) + " rows");
    }
    return PrototypeView(g, 0, known_count);
}

Classifier extend_classifier(const Classifier& g, std::span<const Vector> new_prototypes) {
    for (const auto& p : new_prototypes) {
        if (p.size() != g.dim()) throw InvalidArgument("extend_classifier: prototype dim mismatch");
    }
    Classifier out = g;
    if (new_prototypes.empty()) return out;
    std::fill(out.frozen.begin(), out.frozen.end(), true);
    for (const auto& p : new_prototypes) {
        out.weights.append_row(p);
        out.frozen.push_back(false);
    }
    out.head_sizes.push_back(new_prototypes.size());
    return out;
}

// Checkpoint format (text, version 1). Doubles are written as hex floats so the
// file round-trips bitwise:
//   fedcn-checkpoint 1
//   layers <L>
//   layer <out> <in> <activation>
//   w <out*in values>
//   b <out values>
//   classifier <rows> <cols>
//   heads <H> <sizes...>
//   frozen <rows 0/1 flags>
//   w <rows*cols values>
namespace {

void write_doubles(std::ostream& os, const char* tag, std::span<const double> values) {
    os << tag;
    char buf[64];
    for (double v : values) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
        os << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    os << '\n';
}

class TokenReader {
public:
    TokenReader(const std::string& text, std::string source) : in_(text), source_(std::move(source)) {}

    std::string word() {
        std::string w;
        if (!(in_ >> w)) fail("unexpected end of checkpoint");
        return w;
    }

    void expect(const std::string& tag) {
        const auto w = word();
        if (w != tag) fail("expected '" + tag + "', got '" + w + "'");
    }

    std::size_t count() {
        const auto w = word();
        std::size_t v = 0;
        const auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
        if (ec != std::errc() || ptr != w.data() + w.size()) fail("bad count '" + w + "'");
        return v;
    }

    double real() {
        const auto w = word();
        double v = 0.0;
        const char* first = w.data();
        const char* last = w.data() + w.size();
        bool negative = false;
        if (first != last && *first == '-') {
            negative = true;
            ++first;
        }
        const auto [ptr, ec] = std::from_chars(first, last, v, std::chars_format::hex);
        if (ec != std::errc() || ptr != last) fail("bad value '" + w + "'");
        return negative ? -v : v;
    }

    void read_doubles(const std::string& tag, std::span<double> out) {
        expect(tag);
        for (double& v : out) v = real();
    }

    [[noreturn]] void fail(const std::string& what) {
        throw ParseError(source_, 0, what);
    }

private:
    std::istringstream in_;
    std::string source_;
};

}  // namespace

std::string serialize_model(const Model& model) {
    std::ostringstream os;
    os << "fedcn-checkpoint 1\n";
    os << "layers " << model.extractor.layers.size() << '\n';
    for (const auto& layer : model.extractor.layers) {
        os << "layer " << layer.weight.rows() << ' ' << layer.weight.cols() << ' ' << to_string(layer.activation)
           << '\n';
        write_doubles(os, "w", layer.weight.data());
        write_doubles(os, "b", layer.bias);
    }
    const auto& cls = model.classifier;
    os << "classifier " << cls.weights.rows() << ' ' << cls.weights.cols() << '\n';
    os << "heads " << cls.head_sizes.size();
    for (auto h : cls.head_sizes) os << ' ' << h;
    os << "\nfrozen";
    for (bool f : cls.frozen) os << ' ' << (f ? 1 : 0);
    os << '\n';
    write_doubles(os, "w", cls.weights.data());
    return os.str();
}

Model deserialize_model(const std::string& text, const std::string& source) {
    TokenReader in(text, source);
    in.expect("fedcn-checkpoint");
    if (in.count() != 1) in.fail("unsupported checkpoint version");
    Model m;
    in.expect("layers");
    const std::size_t layer_count = in.count();
    for (std::size_t l = 0; l < layer_count; ++l) {
        in.expect("layer");
        const std::size_t rows = in.count();
        const std::size_t cols = in.count();
        DenseLayer layer;
        layer.activation = activation_from_string(in.word());
        layer.weight = Matrix(rows, cols);
        layer.bias.assign(rows, 0.0);
        in.read_doubles("w", layer.weight.data());
        in.read_doubles("b", layer.bias);
        m.extractor.layers.push_back(std::move(layer));
    }
    in.expect("classifier");
    const std::size_t rows = in.count();
    const std::size_t cols = in.count();
    in.expect("heads");
    m.classifier.head_sizes.resize(in.count());
    std::size_t total = 0;
    for (auto& h : m.classifier.head_sizes) total += (h = in.count());
    if (total != rows) in.fail("head sizes do not sum to classifier rows");
    in.expect("frozen");
    m.classifier.frozen.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) m.classifier.frozen[r] = in.count() != 0;
    m.classifier.weights = Matrix(rows, cols);
    in.read_doubles("w", m.classifier.weights.data());
    m.extractor.validate();
    if (m.extractor.output_dim() != cols) in.fail("classifier width does not match representation dim");
    return m;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open checkpoint for writing");
    out << serialize_model(model);
    if (!out) throw IoError(path.string(), "write failed");
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open checkpoint");
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_model(buf.str(), path.string());
}

}  // namespace fedcn
