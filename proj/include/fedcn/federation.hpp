#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedcn/clustering.hpp"
#include "fedcn/dataset.hpp"
#include "fedcn/losses.hpp"
#include "fedcn/model.hpp"
#include "fedcn/rng.hpp"

namespace fedcn {

enum class NovelLoss { Swl, PairwiseBce };

struct FederationConfig {
    std::size_t participants = 10;
    std::size_t clients_per_round = 5;
    std::size_t known_rounds = 30;
    std::size_t novel_rounds = 30;
    std::size_t local_epochs = 10;
    double lr = 0.05;
    std::size_t batch_size = 256;
    double filter_threshold = 0.5;
    double ema_beta = 0.99;
    double alpha = 0.1;
    std::size_t memory_capacity = 512;
    LossConfig loss;
    std::size_t ppm_steps = kPpmSteps;
    std::size_t ppm_min_size = kPpmMinSize;

    // Pipeline switches. Defaults are the full method.
    NovelLoss novel_loss = NovelLoss::Swl;
    std::size_t bce_topk = kDefaultRankTopK;
    bool init_from_prototypes = true;
    bool use_ema = true;
    bool mixture = false;

    void validate() const;
    bool operator==(const FederationConfig&) const = default;
};

// ---- messages ---------------------------------------------------------------

struct PrototypeUpload {
    std::size_t participant = 0;
    std::size_t stage = 0;
    std::vector<Vector> vectors;
};

struct DeltaUpload {
    std::size_t participant = 0;
    std::size_t round = 0;
    GradientSet delta;
};

struct ModelBroadcast {
    std::size_t round = 0;
    Model params;
};

using Message = std::variant<PrototypeUpload, DeltaUpload, ModelBroadcast>;

/// One line of the audit transcript: what was sent, by whom, and a payload fingerprint.
struct MessageRecord {
    std::string kind;
    std::size_t participant = 0;  // 0 for server broadcasts
    std::size_t stage = 0;
    std::size_t round = 0;
    std::size_t payload_values = 0;
    std::uint64_t checksum = 0;
};

/// FNV-1a over the bit patterns of every double in the message payload.
std::uint64_t payload_checksum(const Message& message);
std::size_t payload_values(const Message& message);

class Transcript {
public:
    void record(const Message& message, std::size_t stage);

    const std::vector<MessageRecord>& records() const noexcept { return records_; }
    std::size_t count(const std::string& kind) const;
    /// Number of PrototypeUpload records from `participant` during `stage`.
    std::size_t prototype_uploads(std::size_t participant, std::size_t stage) const;
    std::string to_log() const;

private:
    std::vector<MessageRecord> records_;
};

// ---- participant / server state ---------------------------------------------

/// Bounded FIFO buffer of samples that passed the novel filter.
class DataMemory {
public:
    explicit DataMemory(std::size_t capacity = 512) : capacity_(capacity) {}

    void push(Vector features, ClassId hidden_label);
    void clear();

    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    std::size_t capacity() const noexcept { return capacity_; }
    std::vector<Vector> features() const;
    std::vector<ClassId> hidden_labels() const;

private:
    std::size_t capacity_;
    std::deque<std::pair<Vector, ClassId>> items_;
};

struct ParticipantState {
    std::size_t id = 0;
    Dataset local_labeled;                     // labels are classifier rows
    std::vector<UnlabeledSet> stage_streams;   // incoming unlabeled data per novel stage
    DataMemory memory;
    std::vector<Vector> known_screened;        // samples the filter routed to "known"
    std::size_t zero_norm_count = 0;
};

enum class Phase { Init, KnownStage, NovelStage };

struct ServerState {
    Model global;
    std::size_t round = 0;  // global rounds completed across all stages
    Phase phase = Phase::Init;
    std::size_t novel_stage = 0;  // 1-based once a novel stage has begun
    std::size_t known_count = 0;
    std::optional<ModelSnapshot> theta_known;
    std::vector<Vector> global_prototypes;
    std::size_t estimated_count = 0;
};

// ---- operations -------------------------------------------------------------

struct FilterResult {
    std::vector<std::size_t> novel;   // indices into the input, order preserved
    std::vector<std::size_t> known;
    std::size_t zero_norm = 0;        // also counted in `known`
};

/// Novel iff max_c cos(f(x), p_c) < r. Zero-norm representations go to `known`.
FilterResult filter_novel(std::span<const Vector> samples, const FeatureExtractor& extractor,
                          std::span<const Vector> prototypes, double threshold);

struct RoundPlan {
    std::vector<std::size_t> clients;  // ascending
    std::size_t local_epochs = 0;
    double lr = 0.0;
};

/// Uniform sample without replacement, returned in ascending id order.
RoundPlan select_clients(std::span<const std::size_t> active_ids, std::size_t count, RngStream& rng);

struct LocalTrainOptions {
    std::size_t epochs = 10;
    double lr = 0.05;
    std::size_t batch_size = 256;
    LossConfig loss;
};

/// Clone, run minibatch SGD on CE + eta * PCL, return (local - global).
GradientSet local_train_known(const Dataset& labeled, const Model& global, std::size_t known_count,
                              const LocalTrainOptions& options, RngStream& rng);

struct NovelTrainOptions {
    LocalTrainOptions base;
    NovelLoss loss_kind = NovelLoss::Swl;
    std::size_t bce_topk = kDefaultRankTopK;
    bool use_ema = true;
    double ema_beta = 0.99;
};

/// Minibatch SGD on the novel loss over the memory samples, training the newest
/// classifier head; earlier rows stay frozen. EMA toward `theta_known` is applied to
/// the extractor after local training. Returns (local - global).
/// `pseudo_labeled`, when nonempty, adds a CE term over those samples (mixture mode).
GradientSet local_train_novel(std::span<const Vector> memory, const Model& global, const ModelSnapshot& theta_known,
                              const NovelTrainOptions& options, RngStream& rng,
                              const Dataset& pseudo_labeled = {});

/// Unweighted mean, summed in the given order.
GradientSet fedavg_aggregate(std::span<const GradientSet> deltas);

/// beta * theta_known + (1 - beta) * theta_local, elementwise over extractor parameters.
FeatureExtractor ema_update(const FeatureExtractor& theta_known, const FeatureExtractor& theta_local, double beta);

/// Labels each sample with argmax over the known-class logits.
Dataset pseudo_label_known(std::span<const Vector> samples, const Model& model, std::size_t known_count);

// ---- pipelines --------------------------------------------------------------

enum class StageStatus { Completed, EmptyStage };

struct NovelStageReport {
    StageStatus status = StageStatus::Completed;
    std::size_t stage = 0;
    std::size_t estimated_count = 0;
    std::vector<std::pair<double, std::size_t>> per_step_counts;
    std::size_t pool_size = 0;
    std::size_t memory_total = 0;
    std::size_t memory_novel_truth = 0;  // memory samples whose hidden label is a stage class
};

/// Server plus participants for one seeded run.
class Federation {
public:
    Federation(FederationConfig config, Model initial, std::vector<ParticipantState> participants,
               std::size_t known_count, RngStream root);

    const FederationConfig& config() const noexcept { return config_; }
    const ServerState& server() const noexcept { return server_; }
    ServerState& server() noexcept { return server_; }
    const std::vector<ParticipantState>& participants() const noexcept { return participants_; }
    const Transcript& transcript() const noexcept { return transcript_; }

    /// Participant ids active in novel stages; defaults to every participant.
    void set_novel_roster(std::vector<std::size_t> ids) { novel_roster_ = std::move(ids); }

    void run_known_stage();

    /// Filtering, local prototypes, PPM, classifier extension and training rounds.
    /// `stage_classes` is used only to report how much of the memory is truly novel.
    NovelStageReport run_novel_stage(std::span<const ClassId> stage_classes = {});

    /// The first three steps of a novel stage without training (estimation only).
    NovelStageReport prepare_novel_stage(std::span<const ClassId> stage_classes = {});

private:
    void filter_stage_streams(std::size_t stage);
    std::vector<std::size_t> novel_roster() const;

    FederationConfig config_;
    ServerState server_;
    std::vector<ParticipantState> participants_;
    std::vector<std::size_t> novel_roster_;
    RngStream root_;
    Transcript transcript_;
};

}  // namespace fedcn
