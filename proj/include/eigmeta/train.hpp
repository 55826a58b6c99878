#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eigmeta/data.hpp"
#include "eigmeta/model.hpp"
#include "eigmeta/objective.hpp"

namespace eigmeta::train {

struct TrainConfig {
    // One update consumes one episode; this is the update budget.
    std::size_t max_updates = 1000;
    double learning_rate = 1e-3;
    double dropout = 0.1;
    std::size_t validation_interval = 50;
    std::size_t validation_episodes = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    data::EpisodeSizes sizes;
    model::Mode mode = model::Mode::Eigen;
    std::size_t hidden = 256;
    std::size_t embed_dim = 256;
    std::size_t projected_dim = 32;
    double ridge_scale = 1e-6;
    std::size_t center_episodes = 100;
    double max_skip_fraction = 0.01;

    void validate() const;
    model::NormalOnlyConfig normal_only() const { return {projected_dim, ridge_scale}; }

    nlohmann::json to_json() const;
    // Applies every key of `j`; unknown keys raise a Config error.
    void apply_json(const nlohmann::json& j);
    static bool is_key(const std::string& key);
};

struct Checkpoint {
    static constexpr int kVersion = 1;

    int version = kVersion;
    model::ModelParams params;
    TrainConfig config;
    std::string rng_state;
    double best_validation_auc = std::numeric_limits<double>::quiet_NaN();
    std::size_t best_update = 0;
    std::size_t updates = 0;
    std::size_t skipped_episodes = 0;
};

// Container layout: 8-byte magic "EIGMETA\0", little-endian uint64 manifest
// length, JSON manifest (version, config, names, shapes, offsets), then the
// contiguous little-endian float64 payload.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct CurveRow {
    std::size_t update = 0;
    double loss = std::numeric_limits<double>::quiet_NaN();  // NaN for skipped episodes
    std::optional<double> validation_auc;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<CurveRow> curve;
    // Best validation AUC at each moment a new best checkpoint was kept.
    std::vector<double> best_history;
    std::size_t skipped_episodes = 0;
};

TrainResult train(const data::TaskBundle& bundle, const TrainConfig& cfg);

struct EpisodeAuc {
    std::size_t task = 0;
    std::size_t episode = 0;
    double auc = std::numeric_limits<double>::quiet_NaN();  // NaN when skipped
};

struct EvalResult {
    std::vector<EpisodeAuc> episodes;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stddev = std::numeric_limits<double>::quiet_NaN();
    std::size_t skipped = 0;
};

using Scorer = std::function<EpisodeScore(const data::Episode&)>;

// Episode e uses task task_indices[e % T] and the stream
// stream_seed(seed, task, e / T); results do not depend on thread count.
EvalResult evaluate_with(const Scorer& scorer, const data::TaskBundle& bundle,
                         std::span<const std::size_t> task_indices, const data::EpisodeSizes& sizes,
                         std::size_t n_episodes, std::uint64_t seed,
                         TieMode ties = TieMode::Strict);

EvalResult evaluate(const model::ModelParams& params, const TrainConfig& cfg,
                    const data::TaskBundle& bundle, std::span<const std::size_t> task_indices,
                    std::size_t n_episodes, std::uint64_t seed, TieMode ties = TieMode::Strict);

EvalResult evaluate(const Checkpoint& checkpoint, const data::TaskBundle& bundle,
                    std::span<const std::size_t> task_indices, std::size_t n_episodes,
                    std::uint64_t seed, TieMode ties = TieMode::Strict);

// Worker count from EIGMETA_THREADS (default: hardware concurrency).
std::size_t worker_count();

}  // namespace eigmeta::train
