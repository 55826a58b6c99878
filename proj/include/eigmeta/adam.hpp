#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "eigmeta/matrix.hpp"

namespace eigmeta::ad {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::size_t step = 0;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
};

// One bias-corrected Adam update. Moment buffers are created on the first
// call; afterwards their shapes must keep matching the parameters.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state);

}  // namespace eigmeta::ad
