#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "eigmeta/matrix.hpp"

namespace eigmeta::data {

// One task's labeled instances. labels[i] is 1 for an anomaly, 0 otherwise.
struct LabeledDataset {
    std::string name;
    std::vector<std::string> columns;  // attribute names, label column excluded
    Matrix attributes;                 // N x M
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return attributes.cols(); }
    std::size_t count(int label) const noexcept;
    // Rows whose label equals `label`, in file order.
    Matrix rows_with_label(int label) const;
};

struct SupportSet {
    Matrix normals;    // N_N x M
    Matrix anomalies;  // N_A x M (zero rows selects the normal-only path)

    std::size_t dim() const noexcept { return normals.cols(); }
};

struct Episode {
    SupportSet support;
    Matrix query_anomalies;  // N_A^Q x M
    Matrix query_normals;    // N_N^Q x M
    std::size_t task = 0;
};

struct EpisodeSizes {
    std::size_t normal_support = 5;
    std::size_t anomaly_support = 1;
    std::size_t normal_query = 25;
    std::size_t anomaly_query = 5;
};

enum class Split { Train, Validation, Target };

const char* to_string(Split split) noexcept;
Split parse_split(std::string_view text);

struct TaskBundle {
    std::vector<LabeledDataset> tasks;
    std::vector<Split> splits;  // parallel to tasks
    std::uint64_t seed = 0;

    std::vector<std::size_t> indices(Split split) const;
};

// Reads a numeric CSV with a header row. Lines starting with '#' are
// comments. With `normalize`, every attribute column is standardised with
// its population mean and standard deviation; zero-variance columns are
// dropped and reported through `warnings`.
LabeledDataset load_csv(const std::filesystem::path& path, const std::string& label_column,
                        bool normalize, std::vector<std::string>* warnings = nullptr);

// Writes attributes plus a trailing `label` column. Each comment line is
// emitted as "# <line>" before the header. Values use shortest round-trip
// formatting so reloading is exact.
void write_csv(const std::filesystem::path& path, const LabeledDataset& dataset,
               const std::vector<std::string>& comments = {});

// M x M matrix with i.i.d. Uniform[-1, 1] entries.
Matrix random_task_matrix(std::size_t dim, std::mt19937_64& rng);

// Task with attributes x R^T and unchanged labels.
LabeledDataset transform_task(const LabeledDataset& base, const Matrix& transform,
                              std::string name);

// Builds train/validation/target tasks by multiplying the base attributes
// with an independent random matrix per task. Task t draws its matrix from
// stream_seed(seed, t, 0).
TaskBundle synthesize_tasks(const LabeledDataset& base, std::size_t n_train,
                            std::size_t n_valid, std::size_t n_target, std::uint64_t seed);

// Uniform sampling without replacement; support and query never share an
// instance.
Episode sample_episode(const LabeledDataset& task, const EpisodeSizes& sizes,
                       std::mt19937_64& rng, std::size_t task_id = 0);

// Independent stream seed for (run, task, episode).
std::uint64_t stream_seed(std::uint64_t run_seed, std::uint64_t task, std::uint64_t episode) noexcept;

// Manifest: JSON listing {name, file, split} per task, file paths relative
// to the manifest's directory.
void write_manifest(const std::filesystem::path& dir, const TaskBundle& bundle,
                    const std::string& manifest_name, const std::string& config_json);
TaskBundle load_manifest(const std::filesystem::path& manifest);

// Two-dimensional benchmark family: normals ~ N(0, I), anomalies on a ring of
// the given radius (with small radial jitter); every task applies its own
// random rotation and per-axis scaling.
struct RingFamilyOptions {
    std::size_t normals_per_task = 200;
    std::size_t anomalies_per_task = 40;
    double ring_radius = 4.0;
    double ring_jitter = 0.1;
    double min_scale = 0.5;
    double max_scale = 2.0;
};
TaskBundle ring_family(std::size_t n_train, std::size_t n_valid, std::size_t n_target,
                       std::uint64_t seed, const RingFamilyOptions& options = {});

}  // namespace eigmeta::data
