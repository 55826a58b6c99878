#pragma once

// The meta anomaly model: a permutation-invariant set encoder (f, g), a
// task-conditioned embedding phi, a fixed center and the task-specific
// projection adapted from the support set.

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eigmeta/autodiff.hpp"
#include "eigmeta/data.hpp"
#include "eigmeta/matrix.hpp"
#include "eigmeta/objective.hpp"

namespace eigmeta::model {

enum class Mode {
    Eigen,          // generalized eigenproblem projection
    SingleAnomaly,  // closed form for one support anomaly
    NormalOnly,     // least-squares projection onto a K-dim center (no support anomalies)
    WoNN,           // eigen projection of raw attributes, no networks
    WoProj,         // distance to the center in embedding space, no projection
};

const char* to_string(Mode mode) noexcept;
Mode parse_mode(std::string_view text);

struct Architecture {
    std::size_t input_dim = 0;        // M
    std::size_t hidden = 256;         // width of f, g, phi hidden layers and of r
    std::size_t embed_dim = 256;      // J
    std::size_t projected_dim = 32;   // K, normal-only mode
};

struct DenseLayer {
    Matrix weight;  // in x out
    Matrix bias;    // 1 x out, empty when the layer has no bias
};

struct Mlp {
    std::vector<DenseLayer> layers;
};

struct NormalOnlyConfig {
    std::size_t projected_dim = 32;
    // ridge = ridge_scale * trace(Phi^T Phi) / J
    double ridge_scale = 1e-6;
};

struct ModelParams {
    Architecture arch;
    Mlp f;     // [x, y] -> hidden -> hidden
    Mlp g;     // hidden -> hidden -> hidden
    Mlp phi;   // [x, r] -> hidden -> hidden -> J, no biases
    Matrix log_eta{1, 1, 0.0};
    Matrix center;            // 1 x J, fixed after fix_center
    Matrix projected_center;  // 1 x K, normal-only center
    Matrix raw_center;        // 1 x M, WoNN center

    // Glorot-uniform weights, zero biases, eta = 1, zero centers.
    static ModelParams initialize(const Architecture& arch, std::mt19937_64& rng);

    double eta() const;

    // Trainable arrays in a fixed order; the centers are excluded.
    std::vector<Matrix*> trainable();
    std::vector<const Matrix*> trainable() const;
    std::vector<std::string> trainable_names() const;

    // Every array (trainable and fixed) with a stable name.
    std::vector<std::pair<std::string, const Matrix*>> named_arrays() const;
    std::vector<std::pair<std::string, Matrix*>> named_arrays();
};

struct DropoutContext {
    double rate = 0.0;
    bool training = false;
    std::mt19937_64* rng = nullptr;
};

struct ScatterVars {
    ad::Var anomaly;  // S_A
    ad::Var normal;   // S_N (includes eta * I)
};

struct ProjectionVars {
    ad::Var w;       // J x 1 (or J x K in normal-only mode)
    ad::Var lambda;  // top generalized eigenvalue; unset outside eigen modes
    bool has_lambda = false;
};

struct EpisodeVars {
    ad::Var anomaly_scores;  // N_A^Q x 1
    ad::Var normal_scores;   // N_N^Q x 1
};

// Binds a ModelParams snapshot onto a tape as leaves and builds forward
// graphs. Gradients of trainable arrays are read back with gradients().
class ModelGraph {
public:
    ModelGraph(ad::Tape& tape, const ModelParams& params, DropoutContext dropout = {});

    ad::Tape& tape() { return *tape_; }

    // r = g(mean f([x, y])) as a 1 x hidden row; y is 0 for normals and 1 for
    // anomalies. Anomalies are skipped when `include_anomalies` is false.
    ad::Var task_representation(const data::SupportSet& support, bool include_anomalies = true);

    // phi([x, r]) for every row of x.
    ad::Var embed(const Matrix& x, ad::Var r);

    // Rows minus the mode's center (J-dim center, or raw center for WoNN).
    ad::Var centered(ad::Var z, Mode mode);

    ScatterVars scatter(ad::Var centered_normals, ad::Var centered_anomalies);

    ProjectionVars project_eigen(const ScatterVars& scatter);
    ProjectionVars project_single(ad::Var scatter_normal, ad::Var centered_anomaly);
    ProjectionVars project_normal_only(ad::Var normal_embeddings, const NormalOnlyConfig& cfg);

    // Scores for the rows of `z` (raw embeddings, not centered).
    ad::Var score(ad::Var z, const ProjectionVars& projection, Mode mode);

    // Full episode: adapt on the support set, score both query groups.
    EpisodeVars episode(const data::Episode& episode, Mode mode, const NormalOnlyConfig& cfg = {});

    ad::Var eta() const { return eta_; }
    const std::vector<ad::Var>& trainable_vars() const { return trainable_; }
    std::vector<Matrix> gradients() const;

private:
    ad::Var run_mlp(const std::vector<std::pair<ad::Var, ad::Var>>& layers, ad::Var x,
                    bool has_bias);

    ad::Tape* tape_;
    const ModelParams* params_;
    DropoutContext dropout_;
    std::vector<std::pair<ad::Var, ad::Var>> f_, g_, phi_;
    ad::Var log_eta_, eta_, center_, projected_center_, raw_center_;
    std::vector<ad::Var> trainable_;
};

// --- value-level API (inference: dropout off, no gradients kept) ---------

struct AdaptationResult {
    Mode mode = Mode::Eigen;
    std::vector<double> w;   // unit projection (eigen / single-anomaly / WoNN)
    Matrix projection;       // J x K (normal-only)
    double lambda = 0.0;     // top generalized eigenvalue (eigen / WoNN)
    std::vector<double> r;   // task representation
};

std::vector<double> encode_task(const data::SupportSet& support, const ModelParams& params);

// phi([x, r]) for each row of x.
Matrix embed(const Matrix& x, std::span<const double> r, const ModelParams& params);

// (S_A, S_N) for the support set under task representation r.
std::pair<Matrix, Matrix> scatter_matrices(const data::SupportSet& support,
                                           std::span<const double> r, const ModelParams& params);

AdaptationResult adapt(const data::SupportSet& support, const ModelParams& params,
                       Mode mode = Mode::Eigen);
AdaptationResult adapt_single(const data::SupportSet& support, const ModelParams& params);
AdaptationResult adapt_normal_only(const data::SupportSet& support, const ModelParams& params,
                                   const NormalOnlyConfig& cfg = {});
// WoProj carries only r.
AdaptationResult adapt_without_projection(const data::SupportSet& support, const ModelParams& params);

std::vector<double> anomaly_score(const Matrix& x, const ModelParams& params,
                                  const AdaptationResult& adaptation);

// Adapts on the support set and scores both query groups.
EpisodeScore score_episode(const data::Episode& episode, const ModelParams& params, Mode mode,
                           const NormalOnlyConfig& cfg = {});

// Sets the fixed centers from `n_episodes` episodes sampled from the given
// tasks with the current (initial) parameters: the J-dim center is the mean
// normal embedding, guarded away from the origin; the K-dim center takes its
// first K coordinates; the raw center is the mean normal attribute vector.
// WoNN only computes the raw center.
Matrix fix_center(std::span<const data::LabeledDataset* const> tasks, ModelParams& params,
                  std::size_t n_episodes, const data::EpisodeSizes& sizes, std::mt19937_64& rng,
                  Mode mode = Mode::Eigen);

inline constexpr double kCenterGuard = 0.1;

// If ||c|| < kCenterGuard, every coordinate with |c_i| < kCenterGuard moves to
// +-kCenterGuard (sign of c_i, + for zero).
void guard_center(std::span<double> c) noexcept;

}  // namespace eigmeta::model
