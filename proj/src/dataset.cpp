#include "fedcn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>

namespace fedcn {

std::size_t Dataset::class_count() const {
    if (!labeled) return 0;
    ClassId top = -1;
    for (const auto& s : samples) top = std::max(top, s.label);
    return static_cast<std::size_t>(top + 1);
}

std::vector<std::size_t> Dataset::class_histogram() const {
    std::vector<std::size_t> hist(class_count(), 0);
    for (const auto& s : samples) {
        if (s.label >= 0) ++hist[static_cast<std::size_t>(s.label)];
    }
    return hist;
}

void GaussianMixtureSpec::validate() const {
    if (class_count == 0) throw InvalidArgument("mixture: class_count must be positive");
    if (dim == 0) throw InvalidArgument("mixture: dim must be positive");
    if (means.size() != class_count) throw InvalidArgument("mixture: need one mean per class");
    if (stddev.size() != class_count) throw InvalidArgument("mixture: need one stddev per class");
    for (const auto& m : means) {
        if (m.size() != dim) throw InvalidArgument("mixture: mean dimension mismatch");
    }
    for (double s : stddev) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("mixture: stddev must be >= 0");
    }
}

double GaussianMixtureSpec::min_mean_separation() const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < means.size(); ++i) {
        for (std::size_t j = i + 1; j < means.size(); ++j) {
            best = std::min(best, euclidean_distance(means[i], means[j]));
        }
    }
    return best;
}

std::vector<Vector> separated_means(std::size_t class_count, std::size_t dim, double separation,
                                    RngStream& rng) {
    if (class_count == 0 || dim == 0) throw InvalidArgument("separated_means: empty shape");
    std::vector<Vector> means(class_count, Vector(dim));
    for (auto& m : means) {
        for (double& v : m) v = rng.normal();
    }
    if (class_count == 1) return means;
    double closest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < class_count; ++i) {
        for (std::size_t j = i + 1; j < class_count; ++j) {
            closest = std::min(closest, euclidean_distance(means[i], means[j]));
        }
    }
    const double scale = separation / closest;
    for (auto& m : means) {
        for (double& v : m) v *= scale;
    }
    return means;
}

std::vector<Vector> orthogonal_means(std::size_t class_count, std::size_t dim, double separation) {
    if (class_count == 0 || dim == 0) throw InvalidArgument("orthogonal_means: empty shape");
    if (dim < class_count) throw InvalidArgument("orthogonal_means: dim must be >= class_count");
    if (!(separation > 0.0)) throw InvalidArgument("orthogonal_means: separation must be > 0");
    std::vector<Vector> means(class_count, Vector(dim, 0.0));
    for (std::size_t c = 0; c < class_count; ++c) means[c][c] = separation / std::sqrt(2.0);
    return means;
}

Dataset generate_gaussian_mixture(const GaussianMixtureSpec& spec, RngStream& rng) {
    spec.validate();
    Dataset out;
    out.dim = spec.dim;
    out.samples.reserve(spec.class_count * spec.samples_per_class);
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        for (std::size_t n = 0; n < spec.samples_per_class; ++n) {
            LabeledSample s;
            s.label = static_cast<ClassId>(c);
            s.features = spec.means[c];
            for (double& v : s.features) v += spec.stddev[c] * rng.normal();
            out.samples.push_back(std::move(s));
        }
    }
    return out;
}

void PartitionSpec::validate(std::size_t class_count) const {
    if (participant_count < 1) throw InvalidArgument("partition: participant_count must be >= 1");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("partition: alpha must be > 0");
    if (!prior.empty()) {
        if (prior.size() != class_count) throw InvalidArgument("partition: prior length != class count");
        double total = 0.0;
        for (double p : prior) {
            if (!(p >= 0.0)) throw InvalidArgument("partition: prior entries must be >= 0");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("partition: prior must sum to 1");
    }
}

Partition dirichlet_partition(const Dataset& data, const PartitionSpec& spec, RngStream& rng) {
    if (data.empty()) throw InvalidArgument("dirichlet_partition: empty dataset");
    if (!data.labeled) throw InvalidArgument("dirichlet_partition: dataset has no labels");
    const std::size_t classes = std::max(data.class_count(), spec.prior.size());
    spec.validate(classes);
    const std::size_t k_count = spec.participant_count;

    Vector prior = spec.prior;
    if (prior.empty()) prior.assign(classes, 1.0 / static_cast<double>(classes));

    // q_k ~ Dir(alpha * prior), drawn as normalized Gamma variates in log space so
    // extreme alphas cannot underflow a whole row to zero.
    Partition out;
    out.proportions = Matrix(k_count, classes);
    RngStream q_rng = rng.derive("dirichlet");
    for (std::size_t k = 0; k < k_count; ++k) {
        Vector logs(classes, -std::numeric_limits<double>::infinity());
        for (std::size_t c = 0; c < classes; ++c) {
            if (prior[c] > 0.0) logs[c] = q_rng.log_gamma_variate(spec.alpha * prior[c]);
        }
        const double lse = log_sum_exp(logs);
        for (std::size_t c = 0; c < classes; ++c) out.proportions(k, c) = std::exp(logs[c] - lse);
    }

    out.participants.resize(k_count);
    for (auto& p : out.participants) {
        p.dim = data.dim;
        p.labeled = true;
    }
    out.owner.resize(data.size());
    RngStream assign_rng = rng.derive("assign");
    Vector column(k_count);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto c = static_cast<std::size_t>(data.samples[i].label);
        for (std::size_t k = 0; k < k_count; ++k) column[k] = out.proportions(k, c);
        const std::size_t k = assign_rng.categorical(column);
        out.owner[i] = k;
        out.participants[k].samples.push_back(data.samples[i]);
    }
    return out;
}

void StageSchedule::validate() const {
    std::set<ClassId> seen;
    auto take = [&](const std::vector<ClassId>& list, const char* where) {
        for (ClassId c : list) {
            if (c < 0) throw InvalidArgument(std::string("schedule: negative class id in ") + where);
            if (!seen.insert(c).second) {
                throw InvalidArgument("schedule: class " + std::to_string(c) + " appears twice (" + where + ")");
            }
        }
    };
    take(known_classes, "known_classes");
    for (const auto& stage : novel_stages) take(stage, "novel_stages");
}

StageSplit split_stages(const Dataset& data, const StageSchedule& schedule, double test_fraction) {
    schedule.validate();
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw InvalidArgument("split_stages: test_fraction must be in [0, 1)");
    }
    if (!data.labeled) throw InvalidArgument("split_stages: dataset has no labels");

    // Route: -1 = known, s >= 0 = novel stage s.
    std::unordered_map<ClassId, int> route;
    for (ClassId c : schedule.known_classes) route[c] = -1;
    for (std::size_t s = 0; s < schedule.novel_stages.size(); ++s) {
        for (ClassId c : schedule.novel_stages[s]) route[c] = static_cast<int>(s);
    }

    const auto hist = data.class_histogram();
    for (const auto& [c, _] : route) {
        if (static_cast<std::size_t>(c) >= hist.size() || hist[static_cast<std::size_t>(c)] == 0) {
            throw InvalidArgument("split_stages: scheduled class " + std::to_string(c) + " has no samples");
        }
    }

    StageSplit out;
    out.known_train.dim = out.known_test.dim = data.dim;
    out.novel_train.resize(schedule.novel_stages.size());
    out.novel_test.resize(schedule.novel_stages.size());
    for (auto& u : out.novel_train) u.dim = data.dim;
    for (auto& t : out.novel_test) t.dim = data.dim;

    std::vector<std::size_t> seen(hist.size(), 0);
    for (const auto& sample : data.samples) {
        const auto it = route.find(sample.label);
        if (it == route.end()) continue;
        const auto c = static_cast<std::size_t>(sample.label);
        const auto held_out = static_cast<std::size_t>(std::floor(static_cast<double>(hist[c]) * test_fraction));
        const bool is_test = seen[c]++ >= hist[c] - held_out;
        const int stage = it->second;
        if (stage < 0) {
            (is_test ? out.known_test : out.known_train).samples.push_back(sample);
        } else if (is_test) {
            out.novel_test[static_cast<std::size_t>(stage)].samples.push_back(sample);
        } else {
            auto& u = out.novel_train[static_cast<std::size_t>(stage)];
            u.features.push_back(sample.features);
            u.hidden_labels.push_back(sample.label);
        }
    }
    return out;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

Dataset load_embedding_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open embedding file");
    const std::string source = path.string();

    std::string line;
    if (!std::getline(in, line)) throw ParseError(source, 1, "missing header");
    const auto header = split_commas(line);
    Dataset out;
    out.labeled = !header.empty() && trim(header.back()) == "label";
    const std::size_t dim = header.size() - (out.labeled ? 1 : 0);
    for (std::size_t i = 0; i < dim; ++i) {
        if (trim(header[i]) != "f" + std::to_string(i)) {
            throw ParseError(source, 1, "expected header column f" + std::to_string(i));
        }
    }
    out.dim = dim;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != header.size()) {
            throw ParseError(source, line_no,
                             "expected " + std::to_string(header.size()) + " cells, got " +
                                 std::to_string(cells.size()));
        }
        LabeledSample sample;
        sample.features.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            const auto cell = trim(cells[i]);
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), sample.features[i]);
            if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(sample.features[i])) {
                throw ParseError(source, line_no, "non-numeric cell '" + std::string(cell) + "'");
            }
        }
        if (out.labeled) {
            const auto cell = trim(cells.back());
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), sample.label);
            if (ec != std::errc() || ptr != cell.data() + cell.size() || sample.label < 0) {
                throw ParseError(source, line_no, "label must be a nonnegative integer");
            }
        }
        out.samples.push_back(std::move(sample));
    }
    return out;
}

}  // namespace fedcn
