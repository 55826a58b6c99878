#pragma once

// Finite-difference checks of every analytic derivative rule, from the
// linear-algebra adjoints up to the full episode loss.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace eigmeta::gradcheck {

enum class Fault {
    None,
    EigenVjp,  // perturbs the eigen adjoint before comparison (negative control)
};

struct Options {
    std::uint64_t seed = 0;
    std::size_t size = 6;        // matrix order and embedding dimension J
    std::size_t instances = 20;  // random instances per check
    double step = 1e-5;          // central-difference step
    Fault fault = Fault::None;
};

inline constexpr double kTolerance = 1e-4;
inline constexpr double kDegenerateTolerance = 1e-3;
// Denominator floor of the relative error, so that vanishing gradients
// compare on an absolute scale.
inline constexpr double kRelativeFloor = 1e-5;

struct CheckResult {
    std::string name;
    std::size_t instances = 0;
    std::size_t comparisons = 0;
    double max_rel_error = 0.0;
    double tolerance = kTolerance;
    std::size_t clamped_gaps = 0;
    // Probes discarded because a rectifier changed state inside the stencil.
    std::size_t kink_skips = 0;
    bool passed() const { return max_rel_error <= tolerance; }
};

struct Report {
    std::vector<CheckResult> checks;
    double max_rel_error() const;
    bool passed() const;
};

double relative_error(double analytic, double numeric) noexcept;

Report run(const Options& options);

}  // namespace eigmeta::gradcheck
