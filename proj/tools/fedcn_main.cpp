// Command-line front end: run / estimate / eval.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "fedcn/eval.hpp"
#include "fedcn/experiment.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

void configure_logging() {
    spdlog::set_level(spdlog::level::warn);
    if (const char* level = std::getenv("FEDCN_LOG_LEVEL")) {
        const auto parsed = spdlog::level::from_str(level);
        // from_str maps unknown names to "off"; only honour it when asked for.
        if (parsed != spdlog::level::off || std::string(level) == "off") spdlog::set_level(parsed);
    }
    spdlog::set_default_logger(spdlog::default_logger());
}

std::string fmt_opt(const std::optional<double>& v) {
    if (!v) return "n/a";
    return fmt::format("{:.4f}", *v);
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
    const fedcn::ExperimentConfig config = fedcn::load_config(config_path);
    const fedcn::RunReport report = fedcn::run_experiment(config);
    const std::string dir = out_dir.empty() ? config.output_dir : out_dir;
    fedcn::emit_metrics(report, dir);
    for (const auto& s : report.seeds) {
        for (const auto& m : s.stages) {
            std::cout << fmt::format("seed {} stage {}: known {} novel {} all {} forgetting {} est {}/{}\n", s.seed,
                                     m.stage, fmt_opt(m.known_acc), fmt_opt(m.novel_acc), fmt_opt(m.overall_acc),
                                     fmt_opt(m.forgetting), m.estimated_count, m.true_count);
        }
    }
    std::cout << "wrote " << dir << "/metrics.json\n";
    return 0;
}

int cmd_estimate(const std::string& config_path, const std::string& checkpoint) {
    const fedcn::ExperimentConfig config = fedcn::load_config(config_path);
    for (std::uint64_t seed : config.seeds) {
        fedcn::Federation fed = fedcn::make_federation(config, seed, fedcn::prepare_run(config, seed));
        if (checkpoint.empty()) {
            fed.run_known_stage();
        } else {
            fedcn::Model model = fedcn::load_checkpoint(checkpoint);
            if (model.classifier.head_sizes.size() != 1 ||
                model.classifier.class_count() != config.schedule.known_classes.size()) {
                throw fedcn::ConfigError("--checkpoint", "expected a known-stage model with one head of " +
                                                             std::to_string(config.schedule.known_classes.size()) +
                                                             " classes");
            }
            fed.server().global = model;
            fed.server().theta_known.emplace("theta_known", model);
        }
        for (std::size_t s = 0; s < config.schedule.novel_stages.size(); ++s) {
            const auto& classes = config.schedule.novel_stages[s];
            const fedcn::NovelStageReport rep = fed.prepare_novel_stage(classes);
            std::cout << fmt::format("seed {} stage {}: estimated {} (true {}), pool {} prototypes{}\n", seed, s + 1,
                                     rep.estimated_count, classes.size(), rep.pool_size,
                                     rep.status == fedcn::StageStatus::EmptyStage ? ", empty stage" : "");
        }
    }
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, std::optional<std::uint64_t> seed) {
    const fedcn::ExperimentConfig config = fedcn::load_config(config_path);
    const std::uint64_t use_seed = seed.value_or(config.seeds.front());
    const fedcn::Model model = fedcn::load_checkpoint(checkpoint);
    const fedcn::PreparedRun prepared = fedcn::prepare_run(config, use_seed);
    if (model.extractor.input_dim() != prepared.initial.extractor.input_dim()) {
        throw fedcn::ConfigError("--checkpoint", "model input dimension does not match the dataset");
    }
    const auto metrics = fedcn::evaluate_model(model, config, prepared.split, std::nullopt);
    for (const auto& m : metrics) {
        std::cout << fmt::format("stage {}: known {} novel {} all {}", m.stage, fmt_opt(m.known_acc),
                                 fmt_opt(m.novel_acc), fmt_opt(m.overall_acc));
        if (m.stage > 0) {
            std::cout << fmt::format(" head {} rows (true {}), head accuracy {}", m.estimated_count, m.true_count,
                                     fmt_opt(m.stage_novel_acc));
        }
        std::cout << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();
    CLI::App app{"Federated continual novel-class learning simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint;
    std::optional<std::uint64_t> seed;

    auto* run = app.add_subcommand("run", "Run every seed of an experiment and write metrics");
    run->add_option("--config", config_path, "Experiment JSON")->required();
    run->add_option("--out", out_dir, "Output directory (defaults to output_dir in the config)");

    auto* estimate = app.add_subcommand("estimate", "Estimate the novel class count of each stage");
    estimate->add_option("--config", config_path, "Experiment JSON")->required();
    estimate->add_option("--checkpoint", checkpoint, "Known-stage model to use instead of training one");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the config's test splits");
    eval->add_option("--config", config_path, "Experiment JSON")->required();
    eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    eval->add_option("--seed", seed, "Seed that regenerates the data (defaults to the first config seed)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) return cmd_run(config_path, out_dir);
        if (*estimate) return cmd_estimate(config_path, checkpoint);
        return cmd_eval(config_path, checkpoint, seed);
    } catch (const fedcn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
