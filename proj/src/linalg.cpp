#include "eigmeta/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "eigmeta/errors.hpp"

namespace eigmeta::linalg {

namespace {

void require_square(const Matrix& a, const char* what) {
    if (!a.is_square()) {
        throw Error(ErrorKind::ShapeMismatch, std::string(what) + " needs a square matrix");
    }
}

double off_diagonal_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

}  // namespace

EigPair Eigensystem::pair(std::size_t k) const {
    return EigPair{values.at(k), vectors.col_vector(k)};
}

std::vector<EigPair> Eigensystem::pairs() const {
    std::vector<EigPair> out;
    out.reserve(size());
    for (std::size_t k = 0; k < size(); ++k) out.push_back(pair(k));
    return out;
}

double fix_sign(std::span<double> v) noexcept {
    double largest = 0.0;
    for (double x : v) largest = std::max(largest, std::abs(x));
    if (largest == 0.0) return 1.0;
    const double cutoff = largest * (1.0 - 1e-10);
    for (double x : v) {
        if (std::abs(x) >= cutoff) {
            if (x > 0.0) return 1.0;
            for (double& y : v) y = -y;
            return -1.0;
        }
    }
    return 1.0;
}

Matrix cholesky(const Matrix& a) {
    require_square(a, "cholesky");
    const std::size_t n = a.rows();
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, a(i, i));
    const double tol = kPivotTolerance * max_diag;

    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double pivot = a(j, j);
        for (std::size_t k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
        if (!(pivot > tol) || max_diag <= 0.0) {
            throw Error(ErrorKind::NotPositiveDefinite,
                        "pivot " + std::to_string(j) + " = " + std::to_string(pivot));
        }
        const double ljj = std::sqrt(pivot);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = a(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
            l(i, j) = v / ljj;
        }
    }
    return l;
}

Matrix tri_solve(const Matrix& lower, const Matrix& b, bool transposed) {
    require_square(lower, "tri_solve");
    const std::size_t n = lower.rows();
    if (b.rows() != n) throw Error(ErrorKind::ShapeMismatch, "tri_solve right-hand side rows");

    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(lower(i, i)));
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(lower(i, i)) < kTriangularTolerance * max_diag || max_diag == 0.0) {
            throw Error(ErrorKind::SingularTriangular, "diagonal entry " + std::to_string(i));
        }
    }

    Matrix x = b;
    const std::size_t m = b.cols();
    if (!transposed) {
        for (std::size_t i = 0; i < n; ++i) {
            double* xi = &x(i, 0);
            for (std::size_t k = 0; k < i; ++k) {
                const double lik = lower(i, k);
                if (lik == 0.0) continue;
                const double* xk = &x(k, 0);
                for (std::size_t c = 0; c < m; ++c) xi[c] -= lik * xk[c];
            }
            const double inv = 1.0 / lower(i, i);
            for (std::size_t c = 0; c < m; ++c) xi[c] *= inv;
        }
    } else {
        for (std::size_t ii = n; ii-- > 0;) {
            double* xi = &x(ii, 0);
            for (std::size_t k = ii + 1; k < n; ++k) {
                const double lki = lower(k, ii);
                if (lki == 0.0) continue;
                const double* xk = &x(k, 0);
                for (std::size_t c = 0; c < m; ++c) xi[c] -= lki * xk[c];
            }
            const double inv = 1.0 / lower(ii, ii);
            for (std::size_t c = 0; c < m; ++c) xi[c] *= inv;
        }
    }
    return x;
}

Eigensystem sym_eig(const Matrix& input) {
    require_square(input, "sym_eig");
    const std::size_t n = input.rows();
    Matrix a = symmetrize(input);
    Matrix vt = Matrix::identity(n);  // row k holds eigenvector k
    const double scale = frobenius_norm(a);
    // Rotations on entries this small cannot affect convergence: even all of
    // them together stay a tenth below the stopping threshold.
    const double negligible = 0.1 * kJacobiTolerance * scale / static_cast<double>(std::max<std::size_t>(n, 1));

    bool converged = false;
    for (int sweep = 0; sweep <= kJacobiMaxSweeps; ++sweep) {
        if (off_diagonal_norm(a) <= kJacobiTolerance * scale) {
            converged = true;
            break;
        }
        if (sweep == kJacobiMaxSweeps) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= negligible) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t;
                if (std::abs(theta) > 1e150) {
                    t = 0.5 / theta;
                } else {
                    t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                    if (theta < 0.0) t = -t;
                }
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                // Rows p and q are contiguous; symmetry mirrors them into the columns.
                double* rp = &a(p, 0);
                double* rq = &a(q, 0);
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = rp[k], akq = rq[k];
                    rp[k] = c * akp - s * akq;
                    rq[k] = s * akp + c * akq;
                    a(k, p) = rp[k];
                    a(k, q) = rq[k];
                }
                rp[p] -= t * apq;
                rq[q] += t * apq;
                rp[q] = 0.0;
                rq[p] = 0.0;
                double* vp = &vt(p, 0);
                double* vq = &vt(q, 0);
                for (std::size_t k = 0; k < n; ++k) {
                    const double x = vp[k], y = vq[k];
                    vp[k] = c * x - s * y;
                    vq[k] = s * x + c * y;
                }
            }
        }
    }
    if (!converged) {
        throw Error(ErrorKind::NoConvergence,
                    "Jacobi did not converge in " + std::to_string(kJacobiMaxSweeps) + " sweeps");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

    Eigensystem out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.values[k] = a(src, src);
        for (std::size_t i = 0; i < n; ++i) col[i] = vt(src, i);
        const double norm = norm2(col);
        for (double& x : col) x /= norm;
        fix_sign(col);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = col[i];
    }
    return out;
}

EigPair gen_eig_max(const Matrix& scatter_a, const Matrix& scatter_n) {
    require_square(scatter_a, "gen_eig_max");
    if (!scatter_a.same_shape(scatter_n)) {
        throw Error(ErrorKind::ShapeMismatch, "gen_eig_max scatter shapes differ");
    }
    const Matrix l = cholesky(scatter_n);
    const Matrix half = tri_solve(l, scatter_a);                 // L^-1 S_A
    const Matrix reduced = tri_solve(l, transpose(half));        // L^-1 S_A L^-T
    const Eigensystem eig = sym_eig(reduced);
    const std::size_t top = eig.size() - 1;

    Matrix u(eig.size(), 1);
    for (std::size_t i = 0; i < eig.size(); ++i) u(i, 0) = eig.vectors(i, top);
    Matrix w = tri_solve(l, u, /*transposed=*/true);
    const double norm = frobenius_norm(w);
    w *= 1.0 / norm;
    EigPair out{eig.values[top], std::vector<double>(w.values().begin(), w.values().end())};
    fix_sign(out.vector);
    return out;
}

double rayleigh_quotient(const Matrix& a, const Matrix& b, std::span<const double> w) {
    const Matrix col = Matrix::column(w);
    const Matrix aw = matmul(a, col);
    const Matrix bw = matmul(b, col);
    return dot(w, aw.values()) / dot(w, bw.values());
}

EigVjp vjp_sym_eig(const Eigensystem& eig, std::span<const double> value_cotangent,
                   const Matrix& vector_cotangent) {
    const std::size_t n = eig.size();
    const Matrix& v = eig.vectors;
    EigVjp out;

    // Inner matrix K in the eigenbasis; A-bar = V K V^T.
    Matrix inner(n, n);
    if (!value_cotangent.empty()) {
        if (value_cotangent.size() != n) {
            throw Error(ErrorKind::ShapeMismatch, "eigenvalue cotangent length");
        }
        for (std::size_t k = 0; k < n; ++k) inner(k, k) = value_cotangent[k];
    }
    if (!vector_cotangent.empty()) {
        if (vector_cotangent.rows() != n || vector_cotangent.cols() != n) {
            throw Error(ErrorKind::ShapeMismatch, "eigenvector cotangent shape");
        }
        const auto [lo, hi] = std::minmax_element(eig.values.begin(), eig.values.end());
        double spread = std::max(std::abs(*lo), std::abs(*hi));
        if (spread <= 0.0) spread = 1.0;
        const double floor = kGapFloor * spread;

        const Matrix projected = matmul_tn(v, vector_cotangent);  // V^T V-bar
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t j = 0; j < n; ++j) {
                if (j == k) continue;
                const double coupling = projected(j, k);
                if (coupling == 0.0) continue;
                double gap = eig.values[k] - eig.values[j];
                if (std::abs(gap) < floor) {
                    // Values are sorted, so index order gives the sign even for exact ties.
                    gap = k > j ? floor : -floor;
                    ++out.clamped_gaps;
                }
                inner(j, k) += coupling / gap;
            }
        }
    }
    // A-bar = sum over non-zero columns k of K of (V K e_k) v_k^T.
    Matrix adjoint(n, n);
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k) {
        bool any = false;
        for (std::size_t j = 0; j < n && !any; ++j) any = inner(j, k) != 0.0;
        if (!any) continue;
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double kjk = inner(j, k);
            if (kjk == 0.0) continue;
            for (std::size_t i = 0; i < n; ++i) w[i] += v(i, j) * kjk;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double* row = &adjoint(i, 0);
            for (std::size_t c = 0; c < n; ++c) row[c] += w[i] * v(c, k);
        }
    }
    out.adjoint = symmetrize(adjoint);
    return out;
}

Matrix vjp_cholesky(const Matrix& lower, const Matrix& lower_cotangent) {
    require_square(lower, "vjp_cholesky");
    if (!lower.same_shape(lower_cotangent)) {
        throw Error(ErrorKind::ShapeMismatch, "vjp_cholesky cotangent shape");
    }
    const std::size_t n = lower.rows();
    Matrix phi = matmul_tn(lower, lower_triangle(lower_cotangent));  // L^T L-bar
    for (std::size_t i = 0; i < n; ++i) {
        phi(i, i) *= 0.5;
        for (std::size_t j = i + 1; j < n; ++j) phi(i, j) = 0.0;
    }
    const Matrix left = tri_solve(lower, phi, /*transposed=*/true);          // L^-T P
    const Matrix full = tri_solve(lower, transpose(left), /*transposed=*/true);  // (L^-T P L^-1)^T
    return symmetrize(full);
}

TriSolveVjp vjp_tri_solve(const Matrix& lower, const Matrix& solution,
                          const Matrix& solution_cotangent, bool transposed) {
    if (!solution.same_shape(solution_cotangent)) {
        throw Error(ErrorKind::ShapeMismatch, "vjp_tri_solve cotangent shape");
    }
    TriSolveVjp out;
    if (!transposed) {
        // X = L^-1 B:  B-bar = L^-T X-bar,  L-bar = -tril(B-bar X^T)
        out.rhs = tri_solve(lower, solution_cotangent, true);
        out.lower = lower_triangle(matmul_nt(out.rhs, solution)) * -1.0;
    } else {
        // X = L^-T B:  B-bar = L^-1 X-bar,  L-bar = -tril(X B-bar^T)
        out.rhs = tri_solve(lower, solution_cotangent, false);
        out.lower = lower_triangle(matmul_nt(solution, out.rhs)) * -1.0;
    }
    return out;
}

}  // namespace eigmeta::linalg
