#include "eigmeta/adam.hpp"

#include <cmath>

#include "eigmeta/errors.hpp"

namespace eigmeta::ad {

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state) {
    if (params.size() != grads.size()) {
        throw Error(ErrorKind::ShapeMismatch, "adam_step: parameter and gradient counts differ");
    }
    if (state.first_moment.empty()) {
        for (const Matrix* p : params) {
            state.first_moment.emplace_back(p->rows(), p->cols());
            state.second_moment.emplace_back(p->rows(), p->cols());
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw Error(ErrorKind::ShapeMismatch, "adam_step: state does not match parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.first_moment[i])) {
            throw Error(ErrorKind::ShapeMismatch,
                        "adam_step: shape mismatch at parameter " + std::to_string(i));
        }
    }

    const AdamConfig& cfg = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);

    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        Matrix& m = state.first_moment[i];
        Matrix& v = state.second_moment[i];
        const Matrix& g = grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            p[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

}  // namespace eigmeta::ad
