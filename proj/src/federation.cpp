#include "fedcn/federation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

namespace fedcn {

void FederationConfig::validate() const {
    if (participants < 1) throw InvalidArgument("federation.participants must be >= 1");
    if (clients_per_round < 1 || clients_per_round > participants) {
        throw InvalidArgument("federation.clients_per_round must be in [1, participants]");
    }
    if (local_epochs < 1) throw InvalidArgument("federation.local_epochs must be >= 1");
    if (!(lr > 0.0)) throw InvalidArgument("federation.lr must be > 0");
    if (batch_size < 1) throw InvalidArgument("federation.batch_size must be >= 1");
    if (!(filter_threshold > -1.0 && filter_threshold <= 1.0)) {
        throw InvalidArgument("federation.filter_threshold must be in (-1, 1]");
    }
    if (!(ema_beta >= 0.0 && ema_beta <= 1.0)) throw InvalidArgument("federation.ema_beta must be in [0, 1]");
    if (!(alpha > 0.0)) throw InvalidArgument("federation.alpha must be > 0");
    if (memory_capacity < 1) throw InvalidArgument("federation.memory_capacity must be >= 1");
    if (ppm_steps < 1) throw InvalidArgument("ppm.steps must be >= 1");
    if (ppm_min_size < 1) throw InvalidArgument("ppm.min_size must be >= 1");
    if (bce_topk < 1) throw InvalidArgument("modes.bce_topk must be >= 1");
    loss.validate();
}

// ---- messages ---------------------------------------------------------------

namespace {

struct Fnv {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::size_t n = 0;

    void add(std::span<const double> values) {
        for (double v : values) {
            auto bits = std::bit_cast<std::uint64_t>(v);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits & 0xffU);
                h *= 0x100000001b3ULL;
                bits >>= 8;
            }
        }
        n += values.size();
    }

    void add(const GradientSet& g) {
        for (const auto& w : g.weights) add(w.data());
        for (const auto& b : g.biases) add(b);
        add(g.classifier.data());
    }

    void add(const Model& m) {
        for (const auto& layer : m.extractor.layers) {
            add(layer.weight.data());
            add(layer.bias);
        }
        add(m.classifier.weights.data());
    }
};

Fnv fingerprint(const Message& message) {
    Fnv f;
    std::visit(
        [&f](const auto& msg) {
            using T = std::decay_t<decltype(msg)>;
            if constexpr (std::is_same_v<T, PrototypeUpload>) {
                for (const auto& v : msg.vectors) f.add(v);
            } else if constexpr (std::is_same_v<T, DeltaUpload>) {
                f.add(msg.delta);
            } else {
                f.add(msg.params);
            }
        },
        message);
    return f;
}

}  // namespace

std::uint64_t payload_checksum(const Message& message) { return fingerprint(message).h; }

std::size_t payload_values(const Message& message) { return fingerprint(message).n; }

void Transcript::record(const Message& message, std::size_t stage) {
    const Fnv f = fingerprint(message);
    MessageRecord rec;
    rec.stage = stage;
    rec.payload_values = f.n;
    rec.checksum = f.h;
    std::visit(
        [&rec](const auto& msg) {
            using T = std::decay_t<decltype(msg)>;
            if constexpr (std::is_same_v<T, PrototypeUpload>) {
                rec.kind = "PrototypeUpload";
                rec.participant = msg.participant;
            } else if constexpr (std::is_same_v<T, DeltaUpload>) {
                rec.kind = "DeltaUpload";
                rec.participant = msg.participant;
                rec.round = msg.round;
            } else {
                rec.kind = "ModelBroadcast";
                rec.round = msg.round;
            }
        },
        message);
    records_.push_back(std::move(rec));
}

std::size_t Transcript::count(const std::string& kind) const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [&](const MessageRecord& r) { return r.kind == kind; }));
}

std::size_t Transcript::prototype_uploads(std::size_t participant, std::size_t stage) const {
    return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(), [&](const MessageRecord& r) {
        return r.kind == "PrototypeUpload" && r.participant == participant && r.stage == stage;
    }));
}

std::string Transcript::to_log() const {
    std::ostringstream os;
    for (const auto& r : records_) {
        os << r.kind << " stage=" << r.stage << " round=" << r.round << " participant=" << r.participant
           << " values=" << r.payload_values << " checksum=" << std::hex << r.checksum << std::dec << '\n';
    }
    return os.str();
}

// ---- memory -----------------------------------------------------------------

void DataMemory::push(Vector features, ClassId hidden_label) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.emplace_back(std::move(features), hidden_label);
}

void DataMemory::clear() { items_.clear(); }

std::vector<Vector> DataMemory::features() const {
    std::vector<Vector> out;
    out.reserve(items_.size());
    for (const auto& [x, _] : items_) out.push_back(x);
    return out;
}

std::vector<ClassId> DataMemory::hidden_labels() const {
    std::vector<ClassId> out;
    out.reserve(items_.size());
    for (const auto& [_, y] : items_) out.push_back(y);
    return out;
}

// ---- operations -------------------------------------------------------------

FilterResult filter_novel(std::span<const Vector> samples, const FeatureExtractor& extractor,
                          std::span<const Vector> prototypes, double threshold) {
    if (prototypes.empty()) throw InvalidArgument("filter_novel: no known prototypes");
    FilterResult out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Vector z = forward_features(extractor, samples[i]);
        if (norm(z) == 0.0) {
            ++out.zero_norm;
            out.known.push_back(i);
            continue;
        }
        double best = -1.0;
        for (const auto& p : prototypes) {
            if (norm(p) == 0.0) continue;
            best = std::max(best, cosine_similarity(z, p));
        }
        (best < threshold ? out.novel : out.known).push_back(i);
    }
    return out;
}

RoundPlan select_clients(std::span<const std::size_t> active_ids, std::size_t count, RngStream& rng) {
    if (count > active_ids.size()) {
        throw InvalidArgument("select_clients: requested " + std::to_string(count) + " of " +
                              std::to_string(active_ids.size()) + " participants");
    }
    std::vector<std::size_t> pool(active_ids.begin(), active_ids.end());
    std::sort(pool.begin(), pool.end());
    if (std::adjacent_find(pool.begin(), pool.end()) != pool.end()) {
        throw InvalidArgument("select_clients: duplicate participant ids");
    }
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.uniform_index(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    RoundPlan plan;
    plan.clients = std::move(pool);
    return plan;
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, RngStream& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t b = std::min(batch_size, n);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += b) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
    }
    return out;
}

GradientSet known_batch_gradient(const Model& model, std::span<const Vector> inputs, std::span<const int> labels,
                                 std::size_t known_count, const LossConfig& loss) {
    const BatchForward fwd = forward_batch(model, inputs);
    LossOutput out = ce_loss(fwd.logits, labels);
    if (loss.eta > 0.0) {
        const auto protos = known_prototypes(model.classifier, known_count).copy();
        out = combined_known_loss(out, pcl_loss(fwd.representations, labels, protos, loss), loss.eta);
    }
    UpstreamGrad up;
    up.logits = std::move(out.grad_logits);
    up.reps = std::move(out.grad_reps);
    up.prototypes = std::move(out.grad_prototypes);
    return backward(model, fwd, up);
}

// Diverged training (too large a step for the loss scale) shows up as inf/nan weights;
// stop there rather than carry NaN through clustering and metrics.
void require_finite(const Model& model, std::size_t stage, std::size_t round) {
    auto finite = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    bool ok = finite(model.classifier.weights.data());
    for (const auto& layer : model.extractor.layers) ok = ok && finite(layer.weight.data()) && finite(layer.bias);
    if (!ok) {
        throw DegenerateInput("training diverged in stage " + std::to_string(stage) + ", round " +
                              std::to_string(round) + ": non-finite parameters (try a smaller federation.lr)");
    }
}

}  // namespace

GradientSet local_train_known(const Dataset& labeled, const Model& global, std::size_t known_count,
                              const LocalTrainOptions& options, RngStream& rng) {
    options.loss.validate();
    if (labeled.empty() || options.epochs == 0 || options.lr == 0.0) return GradientSet::zeros_like(global);
    Model local = global;
    std::vector<Vector> inputs;
    std::vector<int> labels;
    for (std::size_t e = 0; e < options.epochs; ++e) {
        for (const auto& batch : epoch_batches(labeled.size(), options.batch_size, rng)) {
            inputs.clear();
            labels.clear();
            for (std::size_t i : batch) {
                inputs.push_back(labeled.samples[i].features);
                labels.push_back(labeled.samples[i].label);
            }
            sgd_step(local, known_batch_gradient(local, inputs, labels, known_count, options.loss), options.lr);
        }
    }
    return parameter_delta(local, global);
}

GradientSet local_train_novel(std::span<const Vector> memory, const Model& global, const ModelSnapshot& theta_known,
                              const NovelTrainOptions& options, RngStream& rng, const Dataset& pseudo_labeled) {
    const auto& heads = global.classifier.head_sizes;
    if (heads.size() < 2) throw StateError("local_train_novel: classifier has no novel head");
    if (memory.empty() || options.base.epochs == 0) return GradientSet::zeros_like(global);

    const std::size_t head = heads.size() - 1;
    const std::size_t offset = global.classifier.head_offset(head);
    const std::size_t width = heads[head];
    const std::size_t known_count = heads.front();

    Model local = global;
    std::vector<Vector> inputs;
    std::size_t pseudo_cursor = 0;
    for (std::size_t e = 0; e < options.base.epochs; ++e) {
        for (const auto& batch : epoch_batches(memory.size(), options.base.batch_size, rng)) {
            inputs.clear();
            for (std::size_t i : batch) inputs.push_back(memory[i]);
            const BatchForward fwd = forward_batch(local, inputs);
            UpstreamGrad up;
            if (options.loss_kind == NovelLoss::Swl) {
                const auto protos = PrototypeView(local.classifier, offset, width).copy();
                LossOutput out = swl_loss(fwd.representations, protos, options.base.loss);
                up.reps = std::move(out.grad_reps);
                up.prototypes = std::move(out.grad_prototypes);
                up.prototype_offset = offset;
            } else {
                if (inputs.size() < 2) continue;
                std::vector<Vector> novel_logits;
                for (const auto& l : fwd.logits) {
                    novel_logits.emplace_back(l.begin() + static_cast<std::ptrdiff_t>(offset),
                                              l.begin() + static_cast<std::ptrdiff_t>(offset + width));
                }
                LossOutput out = pairwise_bce_from_logits(novel_logits, fwd.representations, options.bce_topk);
                up.logits.assign(inputs.size(), Vector(local.classifier.class_count(), 0.0));
                for (std::size_t i = 0; i < inputs.size(); ++i) {
                    std::copy(out.grad_logits[i].begin(), out.grad_logits[i].end(),
                              up.logits[i].begin() + static_cast<std::ptrdiff_t>(offset));
                }
            }
            GradientSet grads = backward(local, fwd, up);

            if (!pseudo_labeled.empty()) {
                std::vector<Vector> px;
                std::vector<int> py;
                for (std::size_t k = 0; k < batch.size(); ++k) {
                    const auto& s = pseudo_labeled.samples[pseudo_cursor];
                    pseudo_cursor = (pseudo_cursor + 1) % pseudo_labeled.size();
                    px.push_back(s.features);
                    py.push_back(s.label);
                }
                LossConfig ce_only = options.base.loss;
                ce_only.eta = 0.0;
                grads.add_scaled(known_batch_gradient(local, px, py, known_count, ce_only), 1.0);
            }
            sgd_step(local, grads, options.base.lr);
        }
    }
    if (options.use_ema) {
        local.extractor = ema_update(theta_known.model().extractor, local.extractor, options.ema_beta);
    }
    return parameter_delta(local, global);
}

GradientSet fedavg_aggregate(std::span<const GradientSet> deltas) {
    if (deltas.empty()) throw InvalidArgument("fedavg_aggregate: no deltas");
    GradientSet sum = deltas.front();
    for (std::size_t k = 1; k < deltas.size(); ++k) {
        if (!sum.same_shape(deltas[k])) throw InvalidArgument("fedavg_aggregate: delta shapes differ");
        sum.add_scaled(deltas[k], 1.0);
    }
    const auto n = static_cast<double>(deltas.size());
    auto divide = [n](std::span<double> block) {
        for (double& v : block) v /= n;
    };
    for (auto& w : sum.weights) divide(w.data());
    for (auto& b : sum.biases) divide(b);
    divide(sum.classifier.data());
    return sum;
}

FeatureExtractor ema_update(const FeatureExtractor& theta_known, const FeatureExtractor& theta_local, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("ema_update: beta must be in [0, 1]");
    if (theta_known.layers.size() != theta_local.layers.size()) throw InvalidArgument("ema_update: layer count mismatch");
    FeatureExtractor out = theta_local;
    auto blend = [beta](std::span<const double> a, std::span<const double> b, std::span<double> dst) {
        if (a.size() != b.size()) throw InvalidArgument("ema_update: shape mismatch");
        for (std::size_t i = 0; i < dst.size(); ++i) {
            // Equal inputs are a fixed point; skip the rounding of beta*a + (1-beta)*a.
            dst[i] = (a[i] == b[i]) ? a[i] : beta * a[i] + (1.0 - beta) * b[i];
        }
    };
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        const auto& a = theta_known.layers[l];
        const auto& b = theta_local.layers[l];
        if (!a.weight.same_shape(b.weight)) throw InvalidArgument("ema_update: shape mismatch");
        blend(a.weight.data(), b.weight.data(), out.layers[l].weight.data());
        blend(a.bias, b.bias, out.layers[l].bias);
    }
    return out;
}

Dataset pseudo_label_known(std::span<const Vector> samples, const Model& model, std::size_t known_count) {
    Dataset out;
    out.dim = model.extractor.input_dim();
    if (known_count == 0 || known_count > model.classifier.class_count()) {
        throw InvalidArgument("pseudo_label_known: bad known class count");
    }
    for (const auto& x : samples) {
        const Vector logits = forward_logits(model.classifier, forward_features(model.extractor, x));
        const auto label = argmax_stable(std::span<const double>(logits.data(), known_count));
        out.samples.push_back({x, static_cast<ClassId>(label)});
    }
    return out;
}

// ---- pipelines --------------------------------------------------------------

Federation::Federation(FederationConfig config, Model initial, std::vector<ParticipantState> participants,
                       std::size_t known_count, RngStream root)
    : config_(std::move(config)), participants_(std::move(participants)), root_(root) {
    config_.validate();
    if (participants_.size() != config_.participants) {
        throw InvalidArgument("Federation: participant list does not match configured count");
    }
    for (std::size_t i = 0; i < participants_.size(); ++i) {
        if (participants_[i].id != i) throw InvalidArgument("Federation: participant ids must be 0..K-1");
        participants_[i].memory = DataMemory(config_.memory_capacity);
    }
    if (known_count == 0 || known_count > initial.classifier.class_count()) {
        throw InvalidArgument("Federation: known class count does not fit the classifier");
    }
    server_.global = std::move(initial);
    server_.known_count = known_count;
}

void Federation::run_known_stage() {
    if (server_.theta_known) throw StateError("run_known_stage: known stage already completed");
    server_.phase = Phase::KnownStage;
    std::vector<std::size_t> ids(participants_.size());
    std::iota(ids.begin(), ids.end(), 0);

    LocalTrainOptions opts{config_.local_epochs, config_.lr, config_.batch_size, config_.loss};
    for (std::size_t r = 0; r < config_.known_rounds; ++r) {
        RngStream sel = root_.derive("client-selection").derive(std::uint64_t{0}).derive(r);
        RoundPlan plan = select_clients(ids, config_.clients_per_round, sel);
        std::vector<GradientSet> deltas;
        for (std::size_t id : plan.clients) {
            RngStream shuffle = root_.derive("shuffle").derive(std::uint64_t{0}).derive(r).derive(id);
            DeltaUpload up{id, server_.round,
                           local_train_known(participants_[id].local_labeled, server_.global, server_.known_count,
                                             opts, shuffle)};
            transcript_.record(up, 0);
            deltas.push_back(std::move(up.delta));
        }
        apply_delta(server_.global, fedavg_aggregate(deltas));
        require_finite(server_.global, 0, r);
        ++server_.round;
        transcript_.record(ModelBroadcast{server_.round, server_.global}, 0);
        spdlog::debug("known round {}/{}", r + 1, config_.known_rounds);
    }
    server_.theta_known.emplace("theta_known", server_.global);
}

std::vector<std::size_t> Federation::novel_roster() const {
    if (!novel_roster_.empty()) return novel_roster_;
    std::vector<std::size_t> ids(participants_.size());
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

void Federation::filter_stage_streams(std::size_t stage) {
    const auto learned = PrototypeView(server_.global.classifier, 0, server_.global.classifier.class_count()).copy();
    for (std::size_t id : novel_roster()) {
        auto& p = participants_.at(id);
        p.memory.clear();
        p.known_screened.clear();
        if (stage > p.stage_streams.size()) continue;
        const UnlabeledSet& stream = p.stage_streams[stage - 1];
        const FilterResult fr =
            filter_novel(stream.features, server_.global.extractor, learned, config_.filter_threshold);
        for (std::size_t i : fr.novel) p.memory.push(stream.features[i], stream.hidden_labels[i]);
        for (std::size_t i : fr.known) p.known_screened.push_back(stream.features[i]);
        p.zero_norm_count += fr.zero_norm;
    }
}

NovelStageReport Federation::prepare_novel_stage(std::span<const ClassId> stage_classes) {
    if (!server_.theta_known) throw StateError("novel stage requires a completed known stage");
    server_.phase = Phase::NovelStage;
    const std::size_t stage = ++server_.novel_stage;
    NovelStageReport report;
    report.stage = stage;

    filter_stage_streams(stage);

    std::vector<Vector> pool;
    for (std::size_t id : novel_roster()) {
        const auto& p = participants_[id];
        report.memory_total += p.memory.size();
        for (ClassId y : p.memory.hidden_labels()) {
            if (std::find(stage_classes.begin(), stage_classes.end(), y) != stage_classes.end()) {
                ++report.memory_novel_truth;
            }
        }
        PrototypeUpload upload{id, stage, {}};
        if (!p.memory.empty()) {
            std::vector<Vector> reps;
            for (const auto& x : p.memory.features()) reps.push_back(forward_features(server_.global.extractor, x));
            RngStream krng = root_.derive("kmeans").derive(stage).derive(id);
            upload.vectors = local_prototypes(reps, server_.known_count, krng);
        }
        transcript_.record(upload, stage);
        pool.insert(pool.end(), upload.vectors.begin(), upload.vectors.end());
    }
    report.pool_size = pool.size();

    if (pool.empty()) {
        report.status = StageStatus::EmptyStage;
        spdlog::warn("novel stage {}: no participant holds novel data", stage);
        return report;
    }

    RngStream ppm_rng = root_.derive("ppm").derive(stage);
    ppm_rng.shuffle(std::span<Vector>(pool));
    if (pool.size() == 1) {
        report.estimated_count = 1;
        server_.global_prototypes = pool;
    } else {
        PpmResult ppm = ppm_estimate(pool, config_.ppm_steps, config_.ppm_min_size, ppm_rng);
        report.estimated_count = ppm.estimated_count;
        report.per_step_counts = std::move(ppm.per_step_counts);
        server_.global_prototypes = std::move(ppm.global_prototypes);
    }
    server_.estimated_count = report.estimated_count;

    std::vector<Vector> rows = server_.global_prototypes;
    if (!config_.init_from_prototypes) {
        RngStream init = root_.derive("init").derive("novel-head").derive(stage);
        const double sd = 1.0 / std::sqrt(static_cast<double>(server_.global.classifier.dim()));
        for (auto& row : rows) {
            for (double& v : row) v = sd * init.normal();
        }
    }
    server_.global.classifier = extend_classifier(server_.global.classifier, rows);
    spdlog::info("novel stage {}: pool={} estimated={} memory={}", stage, pool.size(), report.estimated_count,
                 report.memory_total);
    return report;
}

NovelStageReport Federation::run_novel_stage(std::span<const ClassId> stage_classes) {
    NovelStageReport report = prepare_novel_stage(stage_classes);
    if (report.status == StageStatus::EmptyStage) return report;
    const std::size_t stage = report.stage;

    const auto roster = novel_roster();
    const std::size_t per_round = std::min(config_.clients_per_round, roster.size());
    NovelTrainOptions opts;
    opts.base = LocalTrainOptions{config_.local_epochs, config_.lr, config_.batch_size, config_.loss};
    opts.loss_kind = config_.novel_loss;
    opts.bce_topk = config_.bce_topk;
    opts.use_ema = config_.use_ema;
    opts.ema_beta = config_.ema_beta;

    for (std::size_t r = 0; r < config_.novel_rounds; ++r) {
        RngStream sel = root_.derive("client-selection").derive(stage).derive(r);
        RoundPlan plan = select_clients(roster, per_round, sel);
        std::vector<GradientSet> deltas;
        for (std::size_t id : plan.clients) {
            const auto& p = participants_[id];
            RngStream shuffle = root_.derive("shuffle").derive(stage).derive(r).derive(id);
            Dataset pseudo;
            if (config_.mixture && !p.known_screened.empty()) {
                pseudo = pseudo_label_known(p.known_screened, server_.global, server_.known_count);
            }
            const auto memory = p.memory.features();
            DeltaUpload up{id, server_.round,
                           local_train_novel(memory, server_.global, *server_.theta_known, opts, shuffle, pseudo)};
            transcript_.record(up, stage);
            deltas.push_back(std::move(up.delta));
        }
        apply_delta(server_.global, fedavg_aggregate(deltas));
        require_finite(server_.global, stage, r);
        ++server_.round;
        transcript_.record(ModelBroadcast{server_.round, server_.global}, stage);
        spdlog::debug("novel stage {} round {}/{}", stage, r + 1, config_.novel_rounds);
    }
    return report;
}

}  // namespace fedcn
