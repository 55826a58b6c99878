#pragma once

// Dense symmetric linear algebra with reverse-mode derivative rules.
//
// Every forward routine here has a matching vjp_* adjoint. Symmetric inputs
// produce symmetric adjoints, i.e. the returned matrix G satisfies
// df = <G, dA> for every symmetric perturbation dA.

#include <cstddef>
#include <span>
#include <vector>

#include "eigmeta/matrix.hpp"

namespace eigmeta::linalg {

inline constexpr double kJacobiTolerance = 1e-12;
inline constexpr int kJacobiMaxSweeps = 100;
inline constexpr double kPivotTolerance = 1e-12;
inline constexpr double kTriangularTolerance = 1e-14;
inline constexpr double kGapFloor = 1e-8;

struct EigPair {
    double value = 0.0;
    std::vector<double> vector;
};

// Full symmetric eigendecomposition; values ascending, vectors stored as the
// columns of `vectors`.
struct Eigensystem {
    std::vector<double> values;
    Matrix vectors;

    std::size_t size() const noexcept { return values.size(); }
    EigPair pair(std::size_t k) const;
    std::vector<EigPair> pairs() const;
};

// Flips v so that its largest-magnitude entry is positive (first such entry
// on ties). Returns the applied sign.
double fix_sign(std::span<double> v) noexcept;

// Lower Cholesky factor of a symmetric positive-definite matrix. Only the
// lower triangle of `a` is read.
Matrix cholesky(const Matrix& a);

// Solves L X = B, or L^T X = B when `transposed`.
Matrix tri_solve(const Matrix& lower, const Matrix& b, bool transposed = false);

// Cyclic Jacobi eigensolver. The input is symmetrised before iterating.
Eigensystem sym_eig(const Matrix& a);

// Top generalized eigenpair of S_A w = lambda S_N w via Cholesky reduction.
// The returned vector has unit Euclidean norm and the fix_sign convention.
EigPair gen_eig_max(const Matrix& scatter_a, const Matrix& scatter_n);

// w^T A w / w^T B w.
double rayleigh_quotient(const Matrix& a, const Matrix& b, std::span<const double> w);

struct EigVjp {
    Matrix adjoint;
    // Number of eigenvalue gaps that were clamped to the floor while a
    // non-zero cotangent flowed through them.
    std::size_t clamped_gaps = 0;
};

// Adjoint of sym_eig. `value_cotangent` has one entry per eigenvalue (empty
// means zero); `vector_cotangent` is n x n with column k the cotangent of
// eigenvector k (empty means zero).
//
// Gaps lambda_k - lambda_j smaller than kGapFloor * spread are clamped to
// that floor, keeping their sign; spread is the largest |eigenvalue| (1 for
// the zero matrix).
EigVjp vjp_sym_eig(const Eigensystem& eig, std::span<const double> value_cotangent,
                   const Matrix& vector_cotangent);

// Adjoint of cholesky: symmetric A-bar given L and L-bar (lower part used).
Matrix vjp_cholesky(const Matrix& lower, const Matrix& lower_cotangent);

struct TriSolveVjp {
    Matrix lower;  // adjoint w.r.t. L (lower triangular)
    Matrix rhs;    // adjoint w.r.t. B
};

// Adjoint of tri_solve given its solution X and cotangent X-bar.
TriSolveVjp vjp_tri_solve(const Matrix& lower, const Matrix& solution,
                          const Matrix& solution_cotangent, bool transposed = false);

}  // namespace eigmeta::linalg
