#include "eigmeta/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "eigmeta/adam.hpp"
#include "eigmeta/errors.hpp"

namespace eigmeta::train {

using nlohmann::json;

namespace {

const char* const kConfigKeys[] = {
    "max_updates",   "learning_rate",   "dropout",       "validation_interval",
    "validation_episodes", "patience",  "seed",          "normal_support",
    "anomaly_support", "normal_query",  "anomaly_query", "mode",
    "hidden",        "embed_dim",       "projected_dim", "ridge_scale",
    "center_episodes", "max_skip_fraction",
};

template <typename T>
T get_number(const json& j, const std::string& key) {
    if (!j.is_number()) throw Error(ErrorKind::Config, "'" + key + "' must be a number");
    if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_integer() || (j.is_number_integer() && j.get<long long>() < 0)) {
            throw Error(ErrorKind::Config, "'" + key + "' must be a non-negative integer");
        }
    }
    return j.get<T>();
}

// Independent sub-streams derived from the run seed.
enum Stream : std::uint64_t { kInit = 1, kCenter = 2, kTrain = 3, kValidation = 4 };

}  // namespace

bool TrainConfig::is_key(const std::string& key) {
    return std::find(std::begin(kConfigKeys), std::end(kConfigKeys), key) != std::end(kConfigKeys);
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, msg); };
    if (max_updates == 0) fail("max_updates must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (validation_interval == 0) fail("validation_interval must be positive");
    if (validation_episodes == 0) fail("validation_episodes must be positive");
    if (patience == 0) fail("patience must be positive");
    if (sizes.normal_support == 0) fail("normal_support must be positive");
    if (sizes.normal_query == 0 || sizes.anomaly_query == 0) fail("query counts must be positive");
    if (hidden == 0 || embed_dim == 0) fail("hidden and embed_dim must be positive");
    if (projected_dim == 0 || projected_dim > embed_dim) fail("projected_dim must lie in [1, embed_dim]");
    if (!(ridge_scale > 0.0)) fail("ridge_scale must be positive");
    if (center_episodes == 0) fail("center_episodes must be positive");
    if (!(max_skip_fraction >= 0.0 && max_skip_fraction <= 1.0)) fail("max_skip_fraction must lie in [0, 1]");
    switch (mode) {
        case model::Mode::NormalOnly:
            if (sizes.anomaly_support != 0) fail("normal-only mode requires anomaly_support = 0");
            break;
        case model::Mode::SingleAnomaly:
            if (sizes.anomaly_support != 1) fail("single-anomaly mode requires anomaly_support = 1");
            break;
        case model::Mode::Eigen:
        case model::Mode::WoNN:
            if (sizes.anomaly_support == 0) fail("eigen modes require anomaly_support >= 1");
            break;
        case model::Mode::WoProj:
            break;
    }
}

json TrainConfig::to_json() const {
    return json{{"max_updates", max_updates},
                {"learning_rate", learning_rate},
                {"dropout", dropout},
                {"validation_interval", validation_interval},
                {"validation_episodes", validation_episodes},
                {"patience", patience},
                {"seed", seed},
                {"normal_support", sizes.normal_support},
                {"anomaly_support", sizes.anomaly_support},
                {"normal_query", sizes.normal_query},
                {"anomaly_query", sizes.anomaly_query},
                {"mode", model::to_string(mode)},
                {"hidden", hidden},
                {"embed_dim", embed_dim},
                {"projected_dim", projected_dim},
                {"ridge_scale", ridge_scale},
                {"center_episodes", center_episodes},
                {"max_skip_fraction", max_skip_fraction}};
}

void TrainConfig::apply_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorKind::Config, "configuration must be a table");
    for (const auto& [key, value] : j.items()) {
        if (key == "max_updates") max_updates = get_number<std::size_t>(value, key);
        else if (key == "learning_rate") learning_rate = get_number<double>(value, key);
        else if (key == "dropout") dropout = get_number<double>(value, key);
        else if (key == "validation_interval") validation_interval = get_number<std::size_t>(value, key);
        else if (key == "validation_episodes") validation_episodes = get_number<std::size_t>(value, key);
        else if (key == "patience") patience = get_number<std::size_t>(value, key);
        else if (key == "seed") seed = get_number<std::uint64_t>(value, key);
        else if (key == "normal_support") sizes.normal_support = get_number<std::size_t>(value, key);
        else if (key == "anomaly_support") sizes.anomaly_support = get_number<std::size_t>(value, key);
        else if (key == "normal_query") sizes.normal_query = get_number<std::size_t>(value, key);
        else if (key == "anomaly_query") sizes.anomaly_query = get_number<std::size_t>(value, key);
        else if (key == "mode") {
            if (!value.is_string()) throw Error(ErrorKind::Config, "'mode' must be a string");
            mode = model::parse_mode(value.get<std::string>());
        }
        else if (key == "hidden") hidden = get_number<std::size_t>(value, key);
        else if (key == "embed_dim") embed_dim = get_number<std::size_t>(value, key);
        else if (key == "projected_dim") projected_dim = get_number<std::size_t>(value, key);
        else if (key == "ridge_scale") ridge_scale = get_number<double>(value, key);
        else if (key == "center_episodes") center_episodes = get_number<std::size_t>(value, key);
        else if (key == "max_skip_fraction") max_skip_fraction = get_number<double>(value, key);
        else throw Error(ErrorKind::Config, "unknown configuration key '" + key + "'");
    }
}

std::size_t worker_count() {
    if (const char* env = std::getenv("EIGMETA_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return static_cast<std::size_t>(n);
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(n, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

EvalResult evaluate_with(const Scorer& scorer, const data::TaskBundle& bundle,
                         std::span<const std::size_t> task_indices, const data::EpisodeSizes& sizes,
                         std::size_t n_episodes, std::uint64_t seed, TieMode ties) {
    if (task_indices.empty()) throw Error(ErrorKind::InsufficientInstances, "no tasks to evaluate");
    EvalResult result;
    result.episodes.resize(n_episodes);
    std::vector<char> skipped(n_episodes, 0);
    const std::size_t n_tasks = task_indices.size();
    parallel_for(n_episodes, [&](std::size_t e) {
        const std::size_t task = task_indices[e % n_tasks];
        const std::size_t index = e / n_tasks;
        std::mt19937_64 rng(data::stream_seed(seed, task, index));
        const data::Episode ep = data::sample_episode(bundle.tasks[task], sizes, rng, task);
        EpisodeAuc& out = result.episodes[e];
        out.task = task;
        out.episode = index;
        try {
            out.auc = empirical_auc(scorer(ep), ties);
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::DegenerateAnomaly) throw;
            skipped[e] = 1;
        }
    });

    double sum = 0.0, sq = 0.0;
    std::size_t counted = 0;
    for (std::size_t e = 0; e < n_episodes; ++e) {
        if (skipped[e]) {
            ++result.skipped;
            continue;
        }
        sum += result.episodes[e].auc;
        ++counted;
    }
    if (counted > 0) {
        result.mean = sum / static_cast<double>(counted);
        for (std::size_t e = 0; e < n_episodes; ++e) {
            if (skipped[e]) continue;
            const double d = result.episodes[e].auc - result.mean;
            sq += d * d;
        }
        result.stddev = std::sqrt(sq / static_cast<double>(counted));
    }
    return result;
}

EvalResult evaluate(const model::ModelParams& params, const TrainConfig& cfg,
                    const data::TaskBundle& bundle, std::span<const std::size_t> task_indices,
                    std::size_t n_episodes, std::uint64_t seed, TieMode ties) {
    const model::NormalOnlyConfig normal_only = cfg.normal_only();
    const model::Mode mode = cfg.mode;
    return evaluate_with(
        [&](const data::Episode& ep) { return model::score_episode(ep, params, mode, normal_only); },
        bundle, task_indices, cfg.sizes, n_episodes, seed, ties);
}

EvalResult evaluate(const Checkpoint& checkpoint, const data::TaskBundle& bundle,
                    std::span<const std::size_t> task_indices, std::size_t n_episodes,
                    std::uint64_t seed, TieMode ties) {
    return evaluate(checkpoint.params, checkpoint.config, bundle, task_indices, n_episodes, seed,
                    ties);
}

TrainResult train(const data::TaskBundle& bundle, const TrainConfig& cfg) {
    cfg.validate();
    const auto train_idx = bundle.indices(data::Split::Train);
    const auto valid_idx = bundle.indices(data::Split::Validation);
    if (train_idx.empty()) throw Error(ErrorKind::InsufficientInstances, "bundle has no training tasks");
    if (valid_idx.empty()) throw Error(ErrorKind::InsufficientInstances, "bundle has no validation tasks");

    model::Architecture arch{bundle.tasks[train_idx.front()].dim(), cfg.hidden, cfg.embed_dim,
                             cfg.projected_dim};
    std::mt19937_64 init_rng(data::stream_seed(cfg.seed, kInit, 0));
    model::ModelParams params = model::ModelParams::initialize(arch, init_rng);

    std::vector<const data::LabeledDataset*> train_tasks;
    for (std::size_t i : train_idx) train_tasks.push_back(&bundle.tasks[i]);
    std::mt19937_64 center_rng(data::stream_seed(cfg.seed, kCenter, 0));
    model::fix_center(train_tasks, params, cfg.center_episodes, cfg.sizes, center_rng, cfg.mode);

    const std::uint64_t validation_seed = data::stream_seed(cfg.seed, kValidation, 0);
    auto validate = [&](const model::ModelParams& p) {
        return evaluate(p, cfg, bundle, valid_idx, cfg.validation_episodes, validation_seed).mean;
    };

    ad::AdamState adam;
    adam.config.learning_rate = cfg.learning_rate;
    const model::NormalOnlyConfig normal_only = cfg.normal_only();

    TrainResult result;
    Checkpoint& best = result.checkpoint;
    best.config = cfg;
    best.params = params;
    best.best_validation_auc = -std::numeric_limits<double>::infinity();

    std::mt19937_64 rng(data::stream_seed(cfg.seed, kTrain, 0));
    std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);
    std::size_t stale = 0;
    std::size_t update = 0;
    for (update = 1; update <= cfg.max_updates; ++update) {
        const std::size_t task = train_idx[pick(rng)];
        const data::Episode ep = data::sample_episode(bundle.tasks[task], cfg.sizes, rng, task);

        CurveRow row;
        row.update = update;
        try {
            ad::Tape tape;
            model::ModelGraph graph(tape, params, {cfg.dropout, true, &rng});
            const model::EpisodeVars scores = graph.episode(ep, cfg.mode, normal_only);
            ad::Var loss = ad::episode_loss(scores.anomaly_scores, scores.normal_scores);
            tape.backward(loss);
            row.loss = loss.scalar();
            if (!std::isfinite(row.loss)) throw Error(ErrorKind::NumericalFailure, "non-finite loss");
            const std::vector<Matrix> grads = graph.gradients();
            const auto trainable = params.trainable();
            ad::adam_step(trainable, grads, adam);
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::DegenerateAnomaly) throw;
            ++result.skipped_episodes;
        }

        const bool last = update == cfg.max_updates;
        if (update % cfg.validation_interval == 0 || last) {
            const double auc = validate(params);
            row.validation_auc = auc;
            if (auc > best.best_validation_auc) {
                best.params = params;
                best.best_validation_auc = auc;
                best.best_update = update;
                result.best_history.push_back(auc);
                stale = 0;
            } else {
                ++stale;
            }
        }
        result.curve.push_back(row);
        if (stale >= cfg.patience) break;
    }
    best.updates = std::min(update, cfg.max_updates);
    best.skipped_episodes = result.skipped_episodes;
    std::ostringstream state;
    state << rng;
    best.rng_state = state.str();

    const double attempted = static_cast<double>(best.updates);
    if (static_cast<double>(result.skipped_episodes) > cfg.max_skip_fraction * attempted) {
        throw Error(ErrorKind::NumericalFailure,
                    std::to_string(result.skipped_episodes) + " of " + std::to_string(best.updates) +
                        " training episodes were skipped as degenerate");
    }
    return result;
}

}  // namespace eigmeta::train
