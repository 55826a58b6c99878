#pragma once

#include <vector>

#include "eigmeta/autodiff.hpp"

namespace eigmeta {

struct EpisodeScore {
    std::vector<double> anomaly_scores;
    std::vector<double> normal_scores;
};

enum class TieMode {
    Strict,  // a tie counts as a miss
    Half,    // a tie counts 1/2; evaluation-only, for comparison with other tools
};

// Fraction of (anomaly, normal) pairs with anomaly score > normal score.
double empirical_auc(const EpisodeScore& scores, TieMode ties = TieMode::Strict);

// Mean over pairs of sigmoid(a - n).
double smoothed_auc(const EpisodeScore& scores);

double episode_loss(const EpisodeScore& scores);

// Numerically symmetric logistic: sigmoid(x) + sigmoid(-x) == 1 per pair.
double sigmoid(double x) noexcept;

namespace ad {

// Differentiable smoothed AUC over n_a x 1 and n_n x 1 score columns.
Var smoothed_auc(Var anomaly_scores, Var normal_scores);
Var episode_loss(Var anomaly_scores, Var normal_scores);

}  // namespace ad

}  // namespace eigmeta
