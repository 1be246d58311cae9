#include "fedcn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fedcn/eval.hpp"

namespace fedcn {

using nlohmann::json;

// ---- config parsing ---------------------------------------------------------

namespace {

void read_value(const json& j, const std::string& path, bool& out) {
    if (!j.is_boolean()) throw ConfigError(path, "expected a boolean");
    out = j.get<bool>();
}

void read_value(const json& j, const std::string& path, double& out) {
    if (!j.is_number()) throw ConfigError(path, "expected a number");
    out = j.get<double>();
    if (!std::isfinite(out)) throw ConfigError(path, "must be finite");
}

void read_value(const json& j, const std::string& path, std::size_t& out) {
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<long long>() < 0)) {
        throw ConfigError(path, "expected a nonnegative integer");
    }
    out = j.get<std::size_t>();
}

void read_value(const json& j, const std::string& path, int& out) {
    if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
    const long long v = j.get<long long>();
    if (v < 0 || v > std::numeric_limits<int>::max()) throw ConfigError(path, "class id out of range");
    out = static_cast<int>(v);
}

void read_value(const json& j, const std::string& path, std::string& out) {
    if (!j.is_string()) throw ConfigError(path, "expected a string");
    out = j.get<std::string>();
}

template <typename T>
void read_value(const json& j, const std::string& path, std::vector<T>& out) {
    if (!j.is_array()) throw ConfigError(path, "expected an array");
    out.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
        T v{};
        read_value(j[i], path + "[" + std::to_string(i) + "]", v);
        out.push_back(std::move(v));
    }
}

// Reads the keys of one JSON object, then rejects whatever was not consumed.
class Block {
public:
    Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& at(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        if (has(key)) read_value(j_.at(key), child(key), out);
    }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(child(key), "unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

const char* novel_loss_name(NovelLoss l) { return l == NovelLoss::Swl ? "swl" : "bce"; }

}  // namespace

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    Block root(j, "");

    if (root.has("dataset")) {
        Block b(root.at("dataset"), "dataset");
        b.get("kind", c.dataset.kind);
        b.get("class_count", c.dataset.class_count);
        b.get("dim", c.dataset.dim);
        b.get("stddev", c.dataset.stddev);
        b.get("separation", c.dataset.separation);
        b.get("layout", c.dataset.layout);
        b.get("samples_per_class", c.dataset.samples_per_class);
        b.get("path", c.dataset.path);
        b.get("test_fraction", c.dataset.test_fraction);
        b.finish();
    }
    if (root.has("schedule")) {
        Block b(root.at("schedule"), "schedule");
        b.get("known_classes", c.schedule.known_classes);
        b.get("novel_stages", c.schedule.novel_stages);
        b.get("known_in_stream", c.schedule.known_in_stream);
        b.finish();
    }
    if (root.has("federation")) {
        auto& f = c.federation;
        Block b(root.at("federation"), "federation");
        b.get("participants", f.participants);
        b.get("clients_per_round", f.clients_per_round);
        b.get("known_rounds", f.known_rounds);
        b.get("novel_rounds", f.novel_rounds);
        b.get("local_epochs", f.local_epochs);
        b.get("lr", f.lr);
        b.get("batch_size", f.batch_size);
        b.get("filter_threshold", f.filter_threshold);
        b.get("ema_beta", f.ema_beta);
        b.get("alpha", f.alpha);
        b.get("memory_capacity", f.memory_capacity);
        b.get("novel_roster", c.novel_roster);
        b.finish();
    }
    if (root.has("model")) {
        Block b(root.at("model"), "model");
        b.get("hidden", c.hidden);
        b.get("representation_dim", c.representation_dim);
        b.finish();
    }
    if (root.has("loss")) {
        Block b(root.at("loss"), "loss");
        b.get("tau", c.federation.loss.tau);
        b.get("eta", c.federation.loss.eta);
        b.finish();
    }
    if (root.has("ppm")) {
        Block b(root.at("ppm"), "ppm");
        b.get("steps", c.federation.ppm_steps);
        b.get("min_size", c.federation.ppm_min_size);
        b.finish();
    }
    root.get("seeds", c.seeds);
    root.get("output_dir", c.output_dir);
    if (root.has("modes")) {
        Block b(root.at("modes"), "modes");
        b.get("mixture", c.modes.mixture);
        b.get("no_pcl", c.modes.no_pcl);
        b.get("no_init", c.modes.no_init);
        b.get("no_ema", c.modes.no_ema);
        if (b.has("novel_loss")) {
            std::string name;
            read_value(b.at("novel_loss"), "modes.novel_loss", name);
            if (name == "swl") {
                c.modes.novel_loss = NovelLoss::Swl;
            } else if (name == "bce") {
                c.modes.novel_loss = NovelLoss::PairwiseBce;
            } else {
                throw ConfigError("modes.novel_loss", "expected \"swl\" or \"bce\", got \"" + name + "\"");
            }
        }
        b.get("bce_topk", c.modes.bce_topk);
        b.get("transcript", c.modes.transcript);
        b.finish();
    }
    root.finish();
    c.validate();
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    const auto& f = c.federation;
    json j;
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"class_count", c.dataset.class_count},
                    {"dim", c.dataset.dim},
                    {"stddev", c.dataset.stddev},
                    {"separation", c.dataset.separation},
                    {"layout", c.dataset.layout},
                    {"samples_per_class", c.dataset.samples_per_class},
                    {"path", c.dataset.path},
                    {"test_fraction", c.dataset.test_fraction}};
    j["schedule"] = {{"known_classes", c.schedule.known_classes},
                     {"novel_stages", c.schedule.novel_stages},
                     {"known_in_stream", c.schedule.known_in_stream}};
    j["federation"] = {{"participants", f.participants},
                       {"clients_per_round", f.clients_per_round},
                       {"known_rounds", f.known_rounds},
                       {"novel_rounds", f.novel_rounds},
                       {"local_epochs", f.local_epochs},
                       {"lr", f.lr},
                       {"batch_size", f.batch_size},
                       {"filter_threshold", f.filter_threshold},
                       {"ema_beta", f.ema_beta},
                       {"alpha", f.alpha},
                       {"memory_capacity", f.memory_capacity},
                       {"novel_roster", c.novel_roster}};
    j["model"] = {{"hidden", c.hidden}, {"representation_dim", c.representation_dim}};
    j["loss"] = {{"tau", f.loss.tau}, {"eta", f.loss.eta}};
    j["ppm"] = {{"steps", f.ppm_steps}, {"min_size", f.ppm_min_size}};
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir;
    j["modes"] = {{"mixture", c.modes.mixture},
                  {"no_pcl", c.modes.no_pcl},
                  {"no_init", c.modes.no_init},
                  {"no_ema", c.modes.no_ema},
                  {"novel_loss", novel_loss_name(c.modes.novel_loss)},
                  {"bce_topk", c.modes.bce_topk},
                  {"transcript", c.modes.transcript}};
    return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open config");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void ExperimentConfig::validate() const {
    const auto& d = dataset;
    if (d.kind == "mixture") {
        if (d.class_count < 1) throw ConfigError("dataset.class_count", "must be >= 1");
        if (d.dim < 1) throw ConfigError("dataset.dim", "must be >= 1");
        if (!(d.stddev > 0.0)) throw ConfigError("dataset.stddev", "must be > 0");
        if (!(d.separation > 0.0)) throw ConfigError("dataset.separation", "must be > 0");
        if (d.samples_per_class < 1) throw ConfigError("dataset.samples_per_class", "must be >= 1");
        if (d.layout == "orthogonal") {
            if (d.dim < d.class_count) throw ConfigError("dataset.dim", "orthogonal layout needs dim >= class_count");
        } else if (d.layout != "random") {
            throw ConfigError("dataset.layout", "expected \"random\" or \"orthogonal\", got \"" + d.layout + "\"");
        }
    } else if (d.kind == "csv") {
        if (d.path.empty()) throw ConfigError("dataset.path", "required when kind is \"csv\"");
    } else {
        throw ConfigError("dataset.kind", "expected \"mixture\" or \"csv\", got \"" + d.kind + "\"");
    }
    if (!(d.test_fraction >= 0.0 && d.test_fraction < 1.0)) {
        throw ConfigError("dataset.test_fraction", "must be in [0, 1)");
    }

    if (schedule.known_classes.empty()) throw ConfigError("schedule.known_classes", "must not be empty");
    try {
        StageSchedule{schedule.known_classes, schedule.novel_stages}.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError("schedule", e.what());
    }
    for (std::size_t s = 0; s < schedule.novel_stages.size(); ++s) {
        if (schedule.novel_stages[s].empty()) {
            throw ConfigError("schedule.novel_stages[" + std::to_string(s) + "]", "must not be empty");
        }
    }
    if (d.kind == "mixture") {
        auto check = [&](const std::vector<ClassId>& ids, const std::string& path) {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (static_cast<std::size_t>(ids[i]) >= d.class_count) {
                    throw ConfigError(path + "[" + std::to_string(i) + "]", "class id beyond dataset.class_count");
                }
            }
        };
        check(schedule.known_classes, "schedule.known_classes");
        for (std::size_t s = 0; s < schedule.novel_stages.size(); ++s) {
            check(schedule.novel_stages[s], "schedule.novel_stages[" + std::to_string(s) + "]");
        }
    }
    if (!(schedule.known_in_stream >= 0.0 && schedule.known_in_stream <= 1.0)) {
        throw ConfigError("schedule.known_in_stream", "must be in [0, 1]");
    }

    const auto& f = federation;
    if (f.participants < 1) throw ConfigError("federation.participants", "must be >= 1");
    if (f.clients_per_round < 1 || f.clients_per_round > f.participants) {
        throw ConfigError("federation.clients_per_round", "must be in [1, participants]");
    }
    if (f.local_epochs < 1) throw ConfigError("federation.local_epochs", "must be >= 1");
    if (!(f.lr > 0.0)) throw ConfigError("federation.lr", "must be > 0");
    if (f.batch_size < 1) throw ConfigError("federation.batch_size", "must be >= 1");
    if (!(f.filter_threshold > -1.0 && f.filter_threshold <= 1.0)) {
        throw ConfigError("federation.filter_threshold", "must be in (-1, 1]");
    }
    if (!(f.ema_beta >= 0.0 && f.ema_beta <= 1.0)) throw ConfigError("federation.ema_beta", "must be in [0, 1]");
    if (!(f.alpha > 0.0)) throw ConfigError("federation.alpha", "must be > 0");
    if (f.memory_capacity < 1) throw ConfigError("federation.memory_capacity", "must be >= 1");
    {
        std::set<std::size_t> seen;
        for (std::size_t i = 0; i < novel_roster.size(); ++i) {
            const std::string path = "federation.novel_roster[" + std::to_string(i) + "]";
            if (novel_roster[i] >= f.participants) throw ConfigError(path, "participant id out of range");
            if (!seen.insert(novel_roster[i]).second) throw ConfigError(path, "duplicate participant id");
        }
    }
    if (!(f.loss.tau > 0.0)) throw ConfigError("loss.tau", "must be > 0");
    if (!(f.loss.eta >= 0.0)) throw ConfigError("loss.eta", "must be >= 0");
    if (f.ppm_steps < 1) throw ConfigError("ppm.steps", "must be >= 1");
    if (f.ppm_min_size < 1) throw ConfigError("ppm.min_size", "must be >= 1");

    for (std::size_t i = 0; i < hidden.size(); ++i) {
        if (hidden[i] < 1) throw ConfigError("model.hidden[" + std::to_string(i) + "]", "must be >= 1");
    }
    if (representation_dim < 1) throw ConfigError("model.representation_dim", "must be >= 1");
    if (seeds.empty()) throw ConfigError("seeds", "must not be empty");
    if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
    if (modes.bce_topk < 1 || modes.bce_topk > representation_dim) {
        throw ConfigError("modes.bce_topk", "must be in [1, model.representation_dim]");
    }
}

FederationConfig ExperimentConfig::effective_federation() const {
    FederationConfig f = federation;
    if (modes.no_pcl) f.loss.eta = 0.0;
    f.init_from_prototypes = !modes.no_init;
    f.use_ema = !modes.no_ema;
    f.novel_loss = modes.novel_loss;
    f.bce_topk = modes.bce_topk;
    f.mixture = modes.mixture;
    return f;
}

// ---- data preparation -------------------------------------------------------

namespace {

Dataset load_or_generate(const ExperimentConfig& config, const RngStream& root) {
    const auto& d = config.dataset;
    if (d.kind == "csv") {
        Dataset data = load_embedding_csv(d.path);
        if (!data.labeled) throw ConfigError("dataset.path", "embedding file has no label column");
        return data;
    }
    RngStream means_rng = root.derive("data").derive("means");
    RngStream sample_rng = root.derive("data").derive("samples");
    GaussianMixtureSpec spec;
    spec.class_count = d.class_count;
    spec.dim = d.dim;
    spec.means = d.layout == "orthogonal" ? orthogonal_means(d.class_count, d.dim, d.separation * d.stddev)
                                          : separated_means(d.class_count, d.dim, d.separation * d.stddev, means_rng);
    spec.stddev.assign(d.class_count, d.stddev);
    spec.samples_per_class = d.samples_per_class;
    return generate_gaussian_mixture(spec, sample_rng);
}

std::size_t index_of(std::span<const ClassId> ids, ClassId id) {
    return static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
}

}  // namespace

PreparedRun prepare_run(const ExperimentConfig& config, std::uint64_t seed) {
    config.validate();
    const RngStream root(seed);
    const Dataset data = load_or_generate(config, root);
    for (ClassId id : config.schedule.known_classes) {
        if (static_cast<std::size_t>(id) >= data.class_count()) {
            throw ConfigError("schedule.known_classes", "class " + std::to_string(id) + " not in dataset");
        }
    }

    PreparedRun run;
    run.known_classes = config.schedule.known_classes;
    run.split = split_stages(data, StageSchedule{config.schedule.known_classes, config.schedule.novel_stages},
                             config.dataset.test_fraction);

    const auto& fed = config.federation;
    const std::size_t K = fed.participants;

    // Known stage: labels become classifier rows, then the Dirichlet split.
    Dataset known_rows = run.split.known_train;
    for (auto& s : known_rows.samples) s.label = static_cast<ClassId>(index_of(run.known_classes, s.label));
    RngStream part_rng = root.derive("partition").derive(std::uint64_t{0});
    Partition known_part = dirichlet_partition(known_rows, PartitionSpec{K, fed.alpha, {}}, part_rng);

    run.participants.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        run.participants[k].id = k;
        run.participants[k].local_labeled = std::move(known_part.participants[k]);
        run.participants[k].local_labeled.dim = data.dim;
    }

    for (std::size_t s = 0; s < config.schedule.novel_stages.size(); ++s) {
        const auto& classes = config.schedule.novel_stages[s];
        const UnlabeledSet& pool = run.split.novel_train[s];
        std::vector<UnlabeledSet> streams(K, UnlabeledSet{data.dim, {}, {}});
        if (!pool.empty()) {
            Dataset as_rows;
            as_rows.dim = pool.dim;
            for (std::size_t i = 0; i < pool.size(); ++i) {
                as_rows.samples.push_back({pool.features[i], static_cast<ClassId>(index_of(classes, pool.hidden_labels[i]))});
            }
            RngStream novel_rng = root.derive("partition").derive(s + 1);
            const Partition part = dirichlet_partition(as_rows, PartitionSpec{K, fed.alpha, {}}, novel_rng);
            for (std::size_t i = 0; i < pool.size(); ++i) {
                streams[part.owner[i]].features.push_back(pool.features[i]);
                streams[part.owner[i]].hidden_labels.push_back(pool.hidden_labels[i]);
            }
        }
        for (std::size_t k = 0; k < K; ++k) {
            RngStream stream_rng = root.derive("stream").derive(s + 1).derive(k);
            const auto& labeled = run.participants[k].local_labeled.samples;
            std::vector<std::size_t> order(labeled.size());
            std::iota(order.begin(), order.end(), 0);
            stream_rng.shuffle(std::span<std::size_t>(order));
            const auto replay = static_cast<std::size_t>(
                std::floor(config.schedule.known_in_stream * static_cast<double>(labeled.size())));
            for (std::size_t i = 0; i < replay; ++i) {
                const auto& sample = labeled[order[i]];
                streams[k].features.push_back(sample.features);
                streams[k].hidden_labels.push_back(run.known_classes[static_cast<std::size_t>(sample.label)]);
            }
            std::vector<std::size_t> mix(streams[k].size());
            std::iota(mix.begin(), mix.end(), 0);
            stream_rng.shuffle(std::span<std::size_t>(mix));
            UnlabeledSet shuffled{data.dim, {}, {}};
            for (std::size_t i : mix) {
                shuffled.features.push_back(streams[k].features[i]);
                shuffled.hidden_labels.push_back(streams[k].hidden_labels[i]);
            }
            run.participants[k].stage_streams.push_back(std::move(shuffled));
        }
    }

    ModelShape shape;
    shape.input_dim = data.dim;
    shape.hidden = config.hidden;
    shape.representation_dim = config.representation_dim;
    shape.class_count = run.known_classes.size();
    RngStream init_rng = root.derive("init");
    run.initial = make_model(shape, init_rng);
    return run;
}

Federation make_federation(const ExperimentConfig& config, std::uint64_t seed, PreparedRun prepared) {
    Federation fed(config.effective_federation(), std::move(prepared.initial), std::move(prepared.participants),
                   prepared.known_classes.size(), RngStream(seed));
    if (!config.novel_roster.empty()) fed.set_novel_roster(config.novel_roster);
    return fed;
}

// ---- evaluation -------------------------------------------------------------

namespace {

struct HeadBinding {
    std::size_t stage = 0;  // 1-based novel stage
    std::size_t head = 0;   // classifier head index
};

StageMetrics snapshot(const Model& model, const StageSplit& split, std::span<const ClassId> known_classes,
                      std::span<const HeadBinding> heads, std::optional<double> known_after_l) {
    StageMetrics m;
    const Tally known = known_accuracy(model, split.known_test, known_classes);
    m.known_acc = known.fraction();
    m.known_n = known.total;
    std::size_t novel_correct = 0;
    for (const auto& h : heads) {
        const Tally t = novel_head_accuracy(model, split.novel_test[h.stage - 1], h.head);
        novel_correct += t.correct;
        m.novel_n += t.total;
    }
    if (m.novel_n > 0) m.novel_acc = static_cast<double>(novel_correct) / static_cast<double>(m.novel_n);
    if (m.known_n + m.novel_n > 0) {
        m.overall_acc = static_cast<double>(known.correct + novel_correct) / static_cast<double>(m.known_n + m.novel_n);
    }
    if (known_after_l && m.known_acc) m.forgetting = forgetting(*known_after_l, *m.known_acc);
    return m;
}

}  // namespace

std::vector<StageMetrics> evaluate_model(const Model& model, const ExperimentConfig& config, const StageSplit& split,
                                         std::optional<double> known_acc_after_known_stage) {
    std::vector<StageMetrics> out;
    std::vector<HeadBinding> heads;
    out.push_back(snapshot(model, split, config.schedule.known_classes, heads, known_acc_after_known_stage));
    const std::size_t head_count = model.classifier.head_sizes.size();
    for (std::size_t h = 1; h < head_count && h <= split.novel_test.size(); ++h) {
        heads.push_back({h, h});
        StageMetrics m = snapshot(model, split, config.schedule.known_classes, heads, known_acc_after_known_stage);
        m.stage = h;
        m.estimated_count = model.classifier.head_sizes[h];
        m.true_count = config.schedule.novel_stages[h - 1].size();
        m.count_error = static_cast<long long>(m.estimated_count) - static_cast<long long>(m.true_count);
        m.stage_novel_acc = novel_head_accuracy(model, split.novel_test[h - 1], h).fraction();
        out.push_back(std::move(m));
    }
    return out;
}

// ---- running ----------------------------------------------------------------

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    PreparedRun prepared = prepare_run(config, seed);
    const StageSplit split = prepared.split;
    const std::vector<ClassId> known_classes = prepared.known_classes;
    Federation fed = make_federation(config, seed, std::move(prepared));

    SeedRun out;
    out.record.seed = seed;
    std::vector<HeadBinding> heads;
    std::size_t stage = 0;
    try {
        spdlog::info("seed {}: known stage ({} rounds)", seed, config.federation.known_rounds);
        fed.run_known_stage();
        StageMetrics known = snapshot(fed.server().global, split, known_classes, heads, std::nullopt);
        const std::optional<double> known_after_l = known.known_acc;
        known.forgetting = known_after_l ? std::optional<double>(0.0) : std::nullopt;
        out.record.stages.push_back(known);

        for (stage = 1; stage <= config.schedule.novel_stages.size(); ++stage) {
            const auto& classes = config.schedule.novel_stages[stage - 1];
            const NovelStageReport rep = fed.run_novel_stage(classes);
            if (rep.status == StageStatus::Completed) {
                heads.push_back({stage, fed.server().global.classifier.head_sizes.size() - 1});
            }
            StageMetrics m = snapshot(fed.server().global, split, known_classes, heads, known_after_l);
            m.stage = stage;
            m.status = rep.status == StageStatus::Completed ? "completed" : "empty";
            m.estimated_count = rep.estimated_count;
            m.true_count = classes.size();
            m.count_error = static_cast<long long>(rep.estimated_count) - static_cast<long long>(classes.size());
            if (rep.status == StageStatus::Completed) {
                m.stage_novel_acc =
                    novel_head_accuracy(fed.server().global, split.novel_test[stage - 1], heads.back().head).fraction();
            }
            m.memory_total = rep.memory_total;
            m.memory_novel = rep.memory_novel_truth;
            m.per_step_counts = rep.per_step_counts;
            spdlog::info("seed {} stage {}: est={} true={} known={:.4f} novel={:.4f}", seed, stage,
                         m.estimated_count, m.true_count, m.known_acc.value_or(-1.0), m.novel_acc.value_or(-1.0));
            out.record.stages.push_back(std::move(m));
        }
    } catch (const std::exception& e) {
        throw std::runtime_error("seed " + std::to_string(seed) + ", stage " + std::to_string(stage) + ": " +
                                 e.what());
    }

    const Transcript& t = fed.transcript();
    out.record.prototype_uploads = t.count("PrototypeUpload");
    out.record.delta_uploads = t.count("DeltaUpload");
    out.record.broadcasts = t.count("ModelBroadcast");
    if (config.modes.transcript) out.transcript = t.to_log();
    out.final_model = fed.server().global;
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

RunReport run_experiment(const ExperimentConfig& config) {
    config.validate();
    RunReport report;
    report.config = config_to_json(config);
    for (std::uint64_t seed : config.seeds) {
        SeedRun run = run_seed(config, seed);
        report.seeds.push_back(std::move(run.record));
        report.final_models.push_back(std::move(run.final_model));
        report.wall_clock_seconds.push_back(run.seconds);
        report.transcripts.push_back(std::move(run.transcript));
    }
    report.aggregate = aggregate_seeds(report.seeds);
    return report;
}

std::vector<AggregateRow> aggregate_seeds(const std::vector<SeedRecord>& seeds) {
    using Getter = std::optional<double> (*)(const StageMetrics&);
    static const std::vector<std::pair<const char*, Getter>> metrics = {
        {"known_acc", [](const StageMetrics& m) { return m.known_acc; }},
        {"novel_acc", [](const StageMetrics& m) { return m.novel_acc; }},
        {"overall_acc", [](const StageMetrics& m) { return m.overall_acc; }},
        {"forgetting", [](const StageMetrics& m) { return m.forgetting; }},
        {"estimated_count",
         [](const StageMetrics& m) {
             return m.stage == 0 ? std::nullopt : std::optional<double>(static_cast<double>(m.estimated_count));
         }},
        {"count_error",
         [](const StageMetrics& m) {
             return m.stage == 0 ? std::nullopt : std::optional<double>(static_cast<double>(m.count_error));
         }},
    };
    std::size_t stage_count = 0;
    for (const auto& s : seeds) stage_count = std::max(stage_count, s.stages.size());

    std::vector<AggregateRow> rows;
    for (std::size_t st = 0; st < stage_count; ++st) {
        for (const auto& [name, get] : metrics) {
            std::vector<double> values;
            for (const auto& s : seeds) {
                if (st >= s.stages.size()) continue;
                if (auto v = get(s.stages[st])) values.push_back(*v);
            }
            if (values.empty()) continue;
            AggregateRow row;
            row.stage = st;
            row.metric = name;
            row.n = values.size();
            for (double v : values) row.mean += v;
            row.mean /= static_cast<double>(values.size());
            for (double v : values) row.variance += (v - row.mean) * (v - row.mean);
            row.variance /= static_cast<double>(values.size());
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

// ---- output -----------------------------------------------------------------

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json stage_to_json(const StageMetrics& m) {
    json steps = json::array();
    for (const auto& [eps, count] : m.per_step_counts) steps.push_back({eps, count});
    return {{"stage", m.stage},
            {"status", m.status},
            {"known_acc", opt(m.known_acc)},
            {"novel_acc", opt(m.novel_acc)},
            {"overall_acc", opt(m.overall_acc)},
            {"forgetting", opt(m.forgetting)},
            {"known_n", m.known_n},
            {"novel_n", m.novel_n},
            {"estimated_count", m.estimated_count},
            {"true_count", m.true_count},
            {"count_error", m.count_error},
            {"stage_novel_acc", opt(m.stage_novel_acc)},
            {"memory_total", m.memory_total},
            {"memory_novel", m.memory_novel},
            {"per_step_counts", steps}};
}

std::string csv_cell(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os.precision(17);
    os << *v;
    return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace

json report_to_json(const RunReport& report) {
    json seeds = json::array();
    for (const auto& s : report.seeds) {
        json stages = json::array();
        for (const auto& m : s.stages) stages.push_back(stage_to_json(m));
        seeds.push_back({{"seed", s.seed},
                         {"stages", stages},
                         {"messages",
                          {{"prototype_uploads", s.prototype_uploads},
                           {"delta_uploads", s.delta_uploads},
                           {"broadcasts", s.broadcasts}}}});
    }
    json aggregate = json::array();
    for (const auto& r : report.aggregate) {
        aggregate.push_back(
            {{"stage", r.stage}, {"metric", r.metric}, {"mean", r.mean}, {"variance", r.variance}, {"n", r.n}});
    }
    return {{"config", report.config.is_null() ? json::object() : report.config},
            {"seeds", seeds},
            {"aggregate", aggregate}};
}

std::string summary_csv(const RunReport& report) {
    std::ostringstream os;
    os << "seed,stage,known_acc,novel_acc,overall_acc,forgetting,estimated_count,true_count\n";
    for (const auto& s : report.seeds) {
        for (const auto& m : s.stages) {
            os << s.seed << ',' << m.stage << ',' << csv_cell(m.known_acc) << ',' << csv_cell(m.novel_acc) << ','
               << csv_cell(m.overall_acc) << ',' << csv_cell(m.forgetting) << ',' << m.estimated_count << ','
               << m.true_count << '\n';
        }
    }
    return os.str();
}

void emit_metrics(const RunReport& report, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError(out_dir.string(), "cannot create directory: " + ec.message());

    write_file(out_dir / "metrics.json", report_to_json(report).dump(2) + "\n");
    write_file(out_dir / "summary.csv", summary_csv(report));
    write_file(out_dir / "timing.json", json{{"wall_clock_seconds", report.wall_clock_seconds}}.dump(2) + "\n");

    bool any_transcript = false;
    std::string log;
    for (std::size_t i = 0; i < report.transcripts.size() && i < report.seeds.size(); ++i) {
        if (report.transcripts[i].empty()) continue;
        any_transcript = true;
        log += "# seed " + std::to_string(report.seeds[i].seed) + "\n" + report.transcripts[i];
    }
    if (any_transcript) write_file(out_dir / "transcript.log", log);

    for (std::size_t i = 0; i < report.final_models.size() && i < report.seeds.size(); ++i) {
        save_checkpoint(report.final_models[i], out_dir / ("model_seed" + std::to_string(report.seeds[i].seed) + ".ckpt"));
    }
}

}  // namespace fedcn
