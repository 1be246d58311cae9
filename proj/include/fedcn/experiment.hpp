#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedcn/dataset.hpp"
#include "fedcn/errors.hpp"
#include "fedcn/federation.hpp"
#include "fedcn/model.hpp"

namespace fedcn {

/// Config validation failure; `path()` names the offending field, e.g. "federation.lr".
class ConfigError : public InvalidArgument {
public:
    ConfigError(const std::string& path, const std::string& what)
        : InvalidArgument(path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

struct DatasetConfig {
    std::string kind = "mixture";  // "mixture" | "csv"
    // mixture
    std::size_t class_count = 14;
    std::size_t dim = 32;
    double stddev = 1.0;
    double separation = 10.0;  // closest pair of means, in units of stddev
    std::string layout = "random";  // "random" | "orthogonal" mean placement
    std::size_t samples_per_class = 300;
    // csv
    std::string path;

    double test_fraction = kDefaultTestFraction;

    bool operator==(const DatasetConfig&) const = default;
};

struct ScheduleConfig {
    std::vector<ClassId> known_classes;
    std::vector<std::vector<ClassId>> novel_stages;
    // Share of each participant's known training samples that reappears, unlabeled,
    // in every novel-stage stream next to the new data.
    double known_in_stream = 0.2;

    bool operator==(const ScheduleConfig&) const = default;
};

struct ModesConfig {
    bool mixture = false;
    bool no_pcl = false;
    bool no_init = false;
    bool no_ema = false;
    NovelLoss novel_loss = NovelLoss::Swl;
    std::size_t bce_topk = kDefaultRankTopK;
    bool transcript = false;

    bool operator==(const ModesConfig&) const = default;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ScheduleConfig schedule;
    // Federation fields; the loss/ppm/mode switches inside are filled from their own blocks.
    FederationConfig federation;
    std::vector<std::size_t> novel_roster;  // empty = every participant
    std::vector<std::size_t> hidden = {64, 32};
    std::size_t representation_dim = 16;
    std::vector<std::uint64_t> seeds = {2023, 2024, 2025};
    std::string output_dir = "out";
    ModesConfig modes;

    /// Throws ConfigError naming the first invalid field.
    void validate() const;
    /// Federation settings with the loss, ppm and ablation switches applied.
    FederationConfig effective_federation() const;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Unknown keys and type mismatches raise ConfigError with the field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

// ---- results ----------------------------------------------------------------

/// Metrics after one stage; stage 0 is the known stage.
struct StageMetrics {
    std::size_t stage = 0;
    std::string status = "completed";  // "completed" | "empty"
    std::optional<double> known_acc;
    std::optional<double> novel_acc;    // over every novel stage learned so far
    std::optional<double> overall_acc;
    std::optional<double> forgetting;   // relative to the end of the known stage
    std::size_t known_n = 0;
    std::size_t novel_n = 0;
    std::size_t estimated_count = 0;
    std::size_t true_count = 0;
    long long count_error = 0;          // estimated - true
    std::optional<double> stage_novel_acc;  // this stage's head on this stage's test split
    std::size_t memory_total = 0;
    std::size_t memory_novel = 0;       // memory samples whose hidden label is a stage class
    std::vector<std::pair<double, std::size_t>> per_step_counts;
};

struct SeedRecord {
    std::uint64_t seed = 0;
    std::vector<StageMetrics> stages;
    std::size_t prototype_uploads = 0;
    std::size_t delta_uploads = 0;
    std::size_t broadcasts = 0;
};

struct AggregateRow {
    std::size_t stage = 0;
    std::string metric;
    double mean = 0.0;
    double variance = 0.0;  // population variance over seeds
    std::size_t n = 0;      // seeds where the metric is defined
};

struct RunReport {
    nlohmann::json config;
    std::vector<SeedRecord> seeds;
    std::vector<AggregateRow> aggregate;
    std::vector<Model> final_models;          // per seed, written as checkpoints
    std::vector<double> wall_clock_seconds;  // per seed; kept out of metrics.json
    std::vector<std::string> transcripts;    // per seed, when enabled
};

/// Everything produced by one seeded run.
struct SeedRun {
    SeedRecord record;
    Model final_model;
    std::string transcript;
    double seconds = 0.0;
};

/// Data, split and per-participant streams for one seed, before any training.
struct PreparedRun {
    StageSplit split;
    std::vector<ClassId> known_classes;
    std::vector<ParticipantState> participants;
    Model initial;
};

PreparedRun prepare_run(const ExperimentConfig& config, std::uint64_t seed);

/// Builds the federation for a prepared run (root RNG stream derived from `seed`).
Federation make_federation(const ExperimentConfig& config, std::uint64_t seed, PreparedRun prepared);

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed);

RunReport run_experiment(const ExperimentConfig& config);

/// Mean and population variance per (stage, metric) across seeds.
std::vector<AggregateRow> aggregate_seeds(const std::vector<SeedRecord>& seeds);

nlohmann::json report_to_json(const RunReport& report);
std::string summary_csv(const RunReport& report);

/// Writes metrics.json, summary.csv, timing.json and transcript.log (when enabled).
void emit_metrics(const RunReport& report, const std::filesystem::path& out_dir);

/// Known accuracy plus per-head novel accuracy for a trained model on the seed's test splits.
std::vector<StageMetrics> evaluate_model(const Model& model, const ExperimentConfig& config, const StageSplit& split,
                                         std::optional<double> known_acc_after_known_stage);

}  // namespace fedcn
