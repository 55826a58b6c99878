#include "eigmeta/objective.hpp"

#include <cmath>

#include "eigmeta/errors.hpp"

namespace eigmeta {

namespace {

void require_both_classes(std::size_t n_anomaly, std::size_t n_normal) {
    if (n_anomaly == 0) throw Error(ErrorKind::EmptyClass, "no anomaly scores");
    if (n_normal == 0) throw Error(ErrorKind::EmptyClass, "no normal scores");
}

}  // namespace

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    return 1.0 - 1.0 / (1.0 + std::exp(x));
}

double empirical_auc(const EpisodeScore& scores, TieMode ties) {
    require_both_classes(scores.anomaly_scores.size(), scores.normal_scores.size());
    const double tie_credit = ties == TieMode::Half ? 0.5 : 0.0;
    double hits = 0.0;
    for (double a : scores.anomaly_scores) {
        for (double n : scores.normal_scores) {
            if (a > n) {
                hits += 1.0;
            } else if (a == n) {
                hits += tie_credit;
            }
        }
    }
    return hits / (static_cast<double>(scores.anomaly_scores.size()) *
                   static_cast<double>(scores.normal_scores.size()));
}

double smoothed_auc(const EpisodeScore& scores) {
    require_both_classes(scores.anomaly_scores.size(), scores.normal_scores.size());
    double total = 0.0;
    for (double a : scores.anomaly_scores)
        for (double n : scores.normal_scores) total += sigmoid(a - n);
    return total / (static_cast<double>(scores.anomaly_scores.size()) *
                    static_cast<double>(scores.normal_scores.size()));
}

double episode_loss(const EpisodeScore& scores) { return -smoothed_auc(scores); }

namespace ad {

Var smoothed_auc(Var anomaly_scores, Var normal_scores) {
    const Matrix& a = anomaly_scores.value();
    const Matrix& n = normal_scores.value();
    require_both_classes(a.size(), n.size());
    const double pairs = static_cast<double>(a.size()) * static_cast<double>(n.size());
    double total = 0.0;
    for (double av : a.values())
        for (double nv : n.values()) total += eigmeta::sigmoid(av - nv);

    const Var parents[] = {anomaly_scores, normal_scores};
    return anomaly_scores.tape->push(
        Matrix(1, 1, total / pairs), parents,
        [ia = anomaly_scores.id, in = normal_scores.id, pairs](Tape& t, std::size_t self) {
            const double g = t.grad(self)[0] / pairs;
            const Matrix& a = t.value(ia);
            const Matrix& n = t.value(in);
            Matrix ga(a.rows(), a.cols());
            Matrix gn(n.rows(), n.cols());
            for (std::size_t i = 0; i < a.size(); ++i) {
                for (std::size_t j = 0; j < n.size(); ++j) {
                    const double s = eigmeta::sigmoid(a[i] - n[j]);
                    const double d = g * s * (1.0 - s);
                    ga[i] += d;
                    gn[j] -= d;
                }
            }
            t.accumulate(ia, ga);
            t.accumulate(in, gn);
        });
}

Var episode_loss(Var anomaly_scores, Var normal_scores) {
    return scale(smoothed_auc(anomaly_scores, normal_scores), -1.0);
}

}  // namespace ad

}  // namespace eigmeta
