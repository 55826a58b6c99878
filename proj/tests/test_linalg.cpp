#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "eigmeta/errors.hpp"
#include "eigmeta/linalg.hpp"
#include "helpers.hpp"

using eigmeta::ErrorKind;
using eigmeta::Matrix;
namespace la = eigmeta::linalg;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const eigmeta::Error& e) {
        return e.kind();
    }
    FAIL("expected an eigmeta::Error");
    return ErrorKind::Config;
}

double inner(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double central(const std::function<double(double)>& f, double h = 1e-6) {
    return (f(h) - f(-h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("cholesky of the identity is the identity") {
    CHECK(la::cholesky(Matrix::identity(3)) == Matrix::identity(3));
}

TEST_CASE("cholesky of a 2x2 matches the hand factor") {
    const Matrix l = la::cholesky(Matrix{{4, 2}, {2, 3}});
    CHECK(l(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(l(0, 1) == 0.0);
    CHECK(l(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(l(1, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("cholesky rejects an indefinite matrix") {
    CHECK(kind_of([] { la::cholesky(Matrix{{1, 2}, {2, 1}}); }) == ErrorKind::NotPositiveDefinite);
}

TEST_CASE("cholesky reconstructs random SPD matrices") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = testing::random_spd(7, rng);
        const Matrix l = la::cholesky(a);
        CHECK(testing::max_abs_diff(eigmeta::matmul_nt(l, l), a) < 1e-10);
    }
}

TEST_CASE("tri_solve examples") {
    std::mt19937_64 rng(3);
    const Matrix b = testing::gaussian_matrix(3, 2, rng);
    CHECK(la::tri_solve(Matrix::identity(3), b) == b);

    const Matrix l{{2, 0}, {1, 1}};
    const Matrix x = la::tri_solve(l, Matrix{{2}, {3}});
    CHECK(x(0, 0) == doctest::Approx(1.0));
    CHECK(x(1, 0) == doctest::Approx(2.0));

    // L^T x = (2, 3): x2 = 3, 2 x1 + x2 = 2.
    const Matrix xt = la::tri_solve(l, Matrix{{2}, {3}}, /*transposed=*/true);
    CHECK(xt(0, 0) == doctest::Approx(-0.5));
    CHECK(xt(1, 0) == doctest::Approx(3.0));

    CHECK(kind_of([] { la::tri_solve(Matrix{{0, 0}, {1, 1}}, Matrix{{1}, {1}}); }) ==
          ErrorKind::SingularTriangular);
}

TEST_CASE("sym_eig on the swap matrix") {
    const la::Eigensystem eig = la::sym_eig(Matrix{{0, 1}, {1, 0}});
    const double s = 1.0 / std::sqrt(2.0);
    CHECK(eig.values[0] == doctest::Approx(-1.0));
    CHECK(eig.values[1] == doctest::Approx(1.0));
    CHECK(eig.vectors(0, 0) == doctest::Approx(s));
    CHECK(eig.vectors(1, 0) == doctest::Approx(-s));
    CHECK(eig.vectors(0, 1) == doctest::Approx(s));
    CHECK(eig.vectors(1, 1) == doctest::Approx(s));
}

TEST_CASE("sym_eig on a diagonal matrix returns sorted standard basis vectors") {
    const la::Eigensystem eig = la::sym_eig(Matrix{{3, 0, 0}, {0, 1, 0}, {0, 0, 2}});
    CHECK(eig.values == std::vector<double>{1, 2, 3});
    CHECK(eig.vectors == Matrix{{0, 0, 1}, {1, 0, 0}, {0, 1, 0}});
}

TEST_CASE("sym_eig reconstructs random symmetric matrices") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix a = testing::random_symmetric(6, rng);
        const la::Eigensystem eig = la::sym_eig(a);
        const Matrix lv = eigmeta::matmul(eig.vectors, Matrix::diagonal(eig.values));
        CHECK(testing::max_abs_diff(eigmeta::matmul_nt(lv, eig.vectors), a) < 1e-11);
        CHECK(testing::max_abs_diff(eigmeta::matmul_tn(eig.vectors, eig.vectors), Matrix::identity(6)) <
              1e-12);
        for (std::size_t k = 1; k < 6; ++k) CHECK(eig.values[k - 1] <= eig.values[k]);
    }
}

TEST_CASE("sym_eig is bit-reproducible") {
    std::mt19937_64 rng(8);
    const Matrix a = testing::random_symmetric(9, rng);
    const la::Eigensystem x = la::sym_eig(a), y = la::sym_eig(a);
    CHECK(x.values == y.values);
    CHECK(x.vectors == y.vectors);
}

TEST_CASE("gen_eig_max diagonal and isotropic cases") {
    const la::EigPair p = la::gen_eig_max(Matrix{{2, 0}, {0, 1}}, Matrix::identity(2));
    CHECK(p.value == doctest::Approx(2.0));
    CHECK(p.vector[0] == doctest::Approx(1.0));
    CHECK(std::abs(p.vector[1]) < 1e-12);

    const double alpha = 3.0, beta = 1.5;
    const Matrix sa = Matrix::identity(4) * alpha, sn = Matrix::identity(4) * beta;
    const la::EigPair q = la::gen_eig_max(sa, sn);
    CHECK(q.value == doctest::Approx(alpha / beta));
    CHECK(eigmeta::norm2(q.vector) == doctest::Approx(1.0));
    const Matrix w = Matrix::column(q.vector);
    const Matrix residual = eigmeta::matmul(sa, w) - eigmeta::matmul(sn, w) * q.value;
    CHECK(eigmeta::max_abs(residual) < 1e-12);
}

TEST_CASE("gen_eig_max beats random directions") {
    std::mt19937_64 rng(21);
    const Matrix sa = testing::random_psd(5, 3, rng);
    const Matrix sn = testing::random_spd(5, rng);
    const la::EigPair top = la::gen_eig_max(sa, sn);
    const double best = la::rayleigh_quotient(sa, sn, top.vector);
    CHECK(best == doctest::Approx(top.value).epsilon(1e-10));
    double worst_gap = 1.0;
    for (int i = 0; i < 100000; ++i) {
        const auto u = testing::random_unit(5, rng);
        worst_gap = std::min(worst_gap, best - la::rayleigh_quotient(sa, sn, u));
    }
    CHECK(worst_gap > -1e-9);
}

TEST_CASE("vjp_sym_eig frozen value on the swap matrix") {
    // Cotangent e1 on the top eigenvector (1,1)/sqrt2 of [[0,1],[1,0]];
    // the adjoint is diag(1,-1) / (4 sqrt2).
    const Matrix a{{0, 1}, {1, 0}};
    const la::Eigensystem eig = la::sym_eig(a);
    Matrix g(2, 2);
    g(0, 1) = 1.0;
    const la::EigVjp vjp = la::vjp_sym_eig(eig, {}, g);
    const double expected = 1.0 / (4.0 * std::sqrt(2.0));
    CHECK(vjp.adjoint(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(vjp.adjoint(1, 1) == doctest::Approx(-expected).epsilon(1e-12));
    CHECK(std::abs(vjp.adjoint(0, 1)) < 1e-15);
    CHECK(vjp.clamped_gaps == 0);

    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix d = testing::random_symmetric(2, rng);
        const double fd = central([&](double h) {
            return la::sym_eig(a + d * h).vectors(0, 1);
        });
        CHECK(inner(vjp.adjoint, d) == doctest::Approx(fd).epsilon(1e-7));
    }
}

TEST_CASE("vjp_sym_eig of zero cotangents is zero") {
    std::mt19937_64 rng(4);
    const la::Eigensystem eig = la::sym_eig(testing::random_symmetric(4, rng));
    const la::EigVjp vjp = la::vjp_sym_eig(eig, std::vector<double>(4, 0.0), Matrix(4, 4));
    CHECK(vjp.adjoint == Matrix(4, 4));
}

TEST_CASE("vjp_sym_eig clamps exactly repeated eigenvalues") {
    const la::Eigensystem eig = la::sym_eig(Matrix::identity(3));
    Matrix g(3, 3, 1.0);
    const la::EigVjp vjp = la::vjp_sym_eig(eig, {}, g);
    CHECK(vjp.clamped_gaps > 0);
    CHECK(eigmeta::all_finite(vjp.adjoint));
    CHECK(eigmeta::asymmetry(vjp.adjoint) == 0.0);
}

TEST_CASE("vjp_cholesky zero and finite-difference checks") {
    CHECK(la::vjp_cholesky(Matrix::identity(3), Matrix(3, 3)) == Matrix(3, 3));

    std::mt19937_64 rng(9);
    for (std::size_t n : {2u, 4u}) {
        for (int trial = 0; trial < 5; ++trial) {
            const Matrix a = n == 2 ? Matrix::identity(2) : testing::random_spd(n, rng);
            const Matrix l = la::cholesky(a);
            const Matrix g = eigmeta::lower_triangle(testing::gaussian_matrix(n, n, rng));
            const Matrix adj = la::vjp_cholesky(l, g);
            const Matrix d = testing::random_symmetric(n, rng);
            const double fd = central([&](double h) { return inner(g, la::cholesky(a + d * h)); });
            CHECK(inner(adj, d) == doctest::Approx(fd).epsilon(1e-7));
        }
    }
}

TEST_CASE("vjp_tri_solve finite-difference checks") {
    std::mt19937_64 rng(13);
    for (bool transposed : {false, true}) {
        for (int trial = 0; trial < 5; ++trial) {
            Matrix l = eigmeta::lower_triangle(testing::gaussian_matrix(4, 4, rng));
            for (std::size_t i = 0; i < 4; ++i) l(i, i) = 1.5 + std::abs(l(i, i));
            const Matrix b = testing::gaussian_matrix(4, 3, rng);
            const Matrix g = testing::gaussian_matrix(4, 3, rng);
            const Matrix x = la::tri_solve(l, b, transposed);
            const la::TriSolveVjp vjp = la::vjp_tri_solve(l, x, g, transposed);

            const Matrix dl = eigmeta::lower_triangle(testing::gaussian_matrix(4, 4, rng));
            const double fd_l = central([&](double h) { return inner(g, la::tri_solve(l + dl * h, b, transposed)); });
            CHECK(inner(vjp.lower, dl) == doctest::Approx(fd_l).epsilon(1e-7));

            const Matrix db = testing::gaussian_matrix(4, 3, rng);
            const double fd_b = central([&](double h) { return inner(g, la::tri_solve(l, b + db * h, transposed)); });
            CHECK(inner(vjp.rhs, db) == doctest::Approx(fd_b).epsilon(1e-7));
        }
    }
}
