#include "eigmeta/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "eigmeta/autodiff.hpp"
#include "eigmeta/data.hpp"
#include "eigmeta/linalg.hpp"
#include "eigmeta/matrix.hpp"
#include "eigmeta/model.hpp"
#include "eigmeta/objective.hpp"

namespace eigmeta::gradcheck {

namespace {

constexpr std::size_t kDirections = 3;
constexpr std::size_t kEndToEndParameters = 5;

using Rng = std::mt19937_64;

Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (double& x : m.values()) x = dist(rng);
    return m;
}

Matrix random_symmetric(std::size_t n, Rng& rng) { return symmetrize(gaussian(n, n, rng)); }

Matrix random_spd(std::size_t n, Rng& rng) {
    const Matrix x = gaussian(n, n, rng);
    return matmul_nt(x, x) + static_cast<double>(n) * Matrix::identity(n);
}

Matrix random_lower(std::size_t n, Rng& rng) {
    std::uniform_real_distribution<double> diag(1.0, 2.0);
    Matrix l = lower_triangle(gaussian(n, n, rng));
    for (std::size_t i = 0; i < n; ++i) l(i, i) = diag(rng);
    return l;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
    return linalg::sym_eig(random_symmetric(n, rng)).vectors;
}

// Q diag(values) Q^T for a random orthogonal Q.
Matrix with_spectrum(std::span<const double> values, Rng& rng) {
    const std::size_t n = values.size();
    const Matrix q = random_orthogonal(n, rng);
    Matrix d(n, n);
    for (std::size_t k = 0; k < n; ++k) d(k, k) = values[k];
    return symmetrize(matmul_nt(matmul(q, d), q));
}

// Ascending values with consecutive gaps of at least kMinGap.
std::vector<double> separated_values(std::size_t n, Rng& rng) {
    constexpr double kMinGap = 0.2;
    std::uniform_real_distribution<double> extra(0.0, 1.0);
    std::vector<double> v(n);
    double x = 0.0;
    for (double& e : v) e = (x += kMinGap + extra(rng));
    return v;
}

double inner(const Matrix& a, const Matrix& b) { return dot(a.values(), b.values()); }

void record(CheckResult& r, double analytic, double numeric) {
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
    ++r.comparisons;
}

// Central difference of f along direction d at x.
double directional_fd(const std::function<double(const Matrix&)>& f, const Matrix& x,
                      const Matrix& d, double h) {
    return (f(x + h * d) - f(x - h * d)) / (2.0 * h);
}

// Eigenvector columns of `v` with signs matched to `reference`, so the
// difference quotient never straddles a sign-convention flip.
Matrix aligned(Matrix v, const Matrix& reference) {
    for (std::size_t k = 0; k < v.cols(); ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < v.rows(); ++i) d += v(i, k) * reference(i, k);
        if (d < 0.0)
            for (std::size_t i = 0; i < v.rows(); ++i) v(i, k) = -v(i, k);
    }
    return v;
}

double fault_factor(const Options& o) { return o.fault == Fault::EigenVjp ? 1.01 : 1.0; }

CheckResult check_cholesky(const Options& o, Rng& rng) {
    CheckResult r{.name = "cholesky"};
    for (std::size_t i = 0; i < o.instances; ++i, ++r.instances) {
        const std::size_t n = o.size;
        const Matrix a = random_spd(n, rng);
        const Matrix cot = lower_triangle(gaussian(n, n, rng));
        const Matrix adj = linalg::vjp_cholesky(linalg::cholesky(a), cot);
        auto f = [&](const Matrix& x) { return inner(cot, linalg::cholesky(x)); };
        for (std::size_t d = 0; d < kDirections; ++d) {
            const Matrix dir = random_symmetric(n, rng);
            record(r, inner(adj, dir), directional_fd(f, a, dir, o.step));
        }
    }
    return r;
}

CheckResult check_tri_solve(const Options& o, Rng& rng, bool transposed) {
    CheckResult r{.name = transposed ? "tri_solve_transposed" : "tri_solve"};
    for (std::size_t i = 0; i < o.instances; ++i, ++r.instances) {
        const std::size_t n = o.size;
        const Matrix l = random_lower(n, rng);
        const Matrix b = gaussian(n, 2, rng);
        const Matrix cot = gaussian(n, 2, rng);
        const Matrix x = linalg::tri_solve(l, b, transposed);
        const auto vjp = linalg::vjp_tri_solve(l, x, cot, transposed);
        auto f_l = [&](const Matrix& lv) { return inner(cot, linalg::tri_solve(lv, b, transposed)); };
        auto f_b = [&](const Matrix& bv) { return inner(cot, linalg::tri_solve(l, bv, transposed)); };
        for (std::size_t d = 0; d < kDirections; ++d) {
            const Matrix dl = lower_triangle(gaussian(n, n, rng));
            const Matrix db = gaussian(n, 2, rng);
            record(r, inner(vjp.lower, dl), directional_fd(f_l, l, dl, o.step));
            record(r, inner(vjp.rhs, db), directional_fd(f_b, b, db, o.step));
        }
    }
    return r;
}

CheckResult check_sym_eig(const Options& o, Rng& rng) {
    CheckResult r{.name = "sym_eig"};
    for (std::size_t i = 0; i < o.instances; ++i, ++r.instances) {
        const std::size_t n = o.size;
        std::vector<double> spectrum = separated_values(n, rng);
        for (double& e : spectrum) e -= spectrum[n / 2];
        const Matrix a = with_spectrum(spectrum, rng);
        const Matrix vec_cot = gaussian(n, n, rng);
        const Matrix val_cot = gaussian(1, n, rng);
        const auto eig = linalg::sym_eig(a);
        const auto vjp = linalg::vjp_sym_eig(eig, val_cot.values(), vec_cot);
        r.clamped_gaps += vjp.clamped_gaps;
        const Matrix adj = fault_factor(o) * vjp.adjoint;
        auto f = [&](const Matrix& x) {
            const auto e = linalg::sym_eig(x);
            return dot(val_cot.values(), e.values) + inner(vec_cot, aligned(e.vectors, eig.vectors));
        };
        for (std::size_t d = 0; d < kDirections; ++d) {
            const Matrix dir = random_symmetric(n, rng);
            record(r, inner(adj, dir), directional_fd(f, a, dir, o.step));
        }
    }
    return r;
}

// Loss lambda * alpha + <beta, w> through the differentiable reduction.
CheckResult check_gen_eig(const Options& o, Rng& rng) {
    CheckResult r{.name = "gen_eig_max"};
    for (std::size_t i = 0; i < o.instances; ++i, ++r.instances) {
        const std::size_t n = o.size;
        // S_A = L M L^T with a PSD reduced matrix M of rank n/2 and separated
        // nonzero eigenvalues.
        const Matrix sn = random_spd(n, rng);
        std::vector<double> spectrum(n, 0.0);
        const std::vector<double> top = separated_values(std::max<std::size_t>(1, n / 2), rng);
        std::copy(top.begin(), top.end(), spectrum.end() - static_cast<std::ptrdiff_t>(top.size()));
        const Matrix lower = linalg::cholesky(sn);
        const Matrix sa = symmetrize(matmul_nt(matmul(lower, with_spectrum(spectrum, rng)), lower));
        const double alpha = std::normal_distribution<double>(0.0, 1.0)(rng);
        const Matrix beta = gaussian(n, 1, rng);

        ad::Tape tape;
        ad::Var va = tape.leaf(sa), vn = tape.leaf(sn);
        ad::TopEigen eig = ad::gen_eig_top(va, vn);
        ad::Var loss = ad::add(ad::scale(eig.value, alpha),
                               ad::sum(ad::hadamard(eig.vector, tape.constant(beta))));
        tape.backward(loss);
        r.clamped_gaps += tape.clamped_gaps();
        const Matrix ga = va.grad(), gn = vn.grad();

        const Matrix base = eig.vector.value();
        auto f = [&](const Matrix& a, const Matrix& b) {
            const auto top = linalg::gen_eig_max(a, b);
            return alpha * top.value + inner(beta, aligned(Matrix::column(top.vector), base));
        };
        for (std::size_t d = 0; d < kDirections; ++d) {
            const Matrix da = random_symmetric(n, rng);
            const Matrix dn = random_symmetric(n, rng);
            record(r, inner(ga, da),
                   directional_fd([&](const Matrix& x) { return f(x, sn); }, sa, da, o.step));
            record(r, inner(gn, dn),
                   directional_fd([&](const Matrix& x) { return f(sa, x); }, sn, dn, o.step));
        }
    }
    return r;
}

// Repeated eigenvalues with a cotangent that is smooth in the repeated
// cluster: equal value weights and V-bar = B V on the cluster columns, so the
// loss depends on the cluster only through its trace and projector.
CheckResult check_degenerate(const Options& o, Rng& rng) {
    CheckResult r{.name = "degenerate_spectrum", .tolerance = kDegenerateTolerance};
    for (std::size_t i = 0; i < o.instances; ++i, ++r.instances) {
        const std::size_t n = i % 2 == 0 ? 2 : 3;
        const std::size_t cluster = 2;
        std::vector<double> spectrum(n, 1.0);
        if (n > cluster) spectrum[n - 1] = 3.0;
        const Matrix a = with_spectrum(spectrum, rng);
        const Matrix b = random_symmetric(n, rng);
        const double c = std::normal_distribution<double>(0.0, 1.0)(rng);
        const Matrix tail = gaussian(n, 1, rng);

        auto cotangents = [&](const linalg::Eigensystem& e) {
            std::vector<double> vals(n, c);
            Matrix vecs = matmul(b, e.vectors);
            if (n > cluster) {
                vals[n - 1] = 2.0 * c;
                for (std::size_t row = 0; row < n; ++row) vecs(row, n - 1) = tail[row];
            }
            return std::pair{vals, vecs};
        };
        auto f = [&](const Matrix& x) {
            const auto e = linalg::sym_eig(x);
            double out = 0.0;
            for (std::size_t k = 0; k < cluster; ++k) {
                const auto v = e.vectors.col_vector(k);
                out += c * e.values[k] + dot(v, matmul(b, Matrix::column(v)).values());
            }
            if (n > cluster) {
                out += 2.0 * c * e.values[n - 1] + dot(tail.values(), e.vectors.col_vector(n - 1));
            }
            return out;
        };
        const auto eig = linalg::sym_eig(a);
        const auto [vals, vecs] = cotangents(eig);
        // The cluster part of V-bar enters the loss as v^T B v, whose cotangent is 2 B v.
        Matrix scaled = vecs;
        for (std::size_t row = 0; row < n; ++row)
            for (std::size_t k = 0; k < cluster; ++k) scaled(row, k) *= 2.0;
        const auto vjp = linalg::vjp_sym_eig(eig, vals, scaled);
        r.clamped_gaps += vjp.clamped_gaps;
        const Matrix adj = fault_factor(o) * vjp.adjoint;
        for (std::size_t d = 0; d < kDirections; ++d) {
            const Matrix dir = random_symmetric(n, rng);
            record(r, inner(adj, dir), directional_fd(f, a, dir, o.step));
        }
    }
    return r;
}

struct LossProbe {
    double loss = 0.0;
    std::vector<bool> pattern;
};

LossProbe probe_loss(const model::ModelParams& params, const data::Episode& ep, model::Mode mode,
                     const model::NormalOnlyConfig& cfg) {
    ad::Tape tape;
    model::ModelGraph graph(tape, params);
    const auto scores = graph.episode(ep, mode, cfg);
    const double loss = ad::episode_loss(scores.anomaly_scores, scores.normal_scores).scalar();
    return {loss, tape.activation_pattern()};
}

// Gaussian task whose input dimension exceeds the support size, so that the
// support embeddings are locally of full rank.
data::LabeledDataset gaussian_task(Rng& rng) {
    constexpr std::size_t kDim = 5, kNormals = 60, kAnomalies = 15;
    data::LabeledDataset task;
    task.name = "gradcheck";
    task.attributes = gaussian(kNormals + kAnomalies, kDim, rng);
    task.labels.assign(kNormals + kAnomalies, 0);
    for (std::size_t i = kNormals; i < kNormals + kAnomalies; ++i) {
        task.labels[i] = 1;
        for (std::size_t j = 0; j < kDim; ++j) task.attributes(i, j) *= 3.0;
    }
    for (std::size_t j = 0; j < kDim; ++j) task.columns.push_back("x" + std::to_string(j));
    return task;
}

CheckResult check_episode(const Options& o, Rng& rng, model::Mode mode) {
    constexpr std::size_t kMaxDraws = 100;
    CheckResult r{.name = std::string("episode_loss[") + model::to_string(mode) + "]"};
    data::EpisodeSizes sizes;
    if (mode == model::Mode::NormalOnly) sizes.anomaly_support = 0;
    if (mode == model::Mode::Eigen) sizes.anomaly_support = 1;
    // The adjoints do not depend on the ridge; a larger one keeps the
    // difference quotient out of the near-singular regime.
    const model::NormalOnlyConfig cfg{std::min<std::size_t>(2, o.size), 1e-2};
    for (std::size_t i = 0; i < o.instances; ++i, ++r.instances) {
        const data::LabeledDataset task = gaussian_task(rng);
        const model::Architecture arch{task.dim(), 8, o.size, cfg.projected_dim};
        model::ModelParams params = model::ModelParams::initialize(arch, rng);
        const data::LabeledDataset* tasks[] = {&task};
        model::fix_center(tasks, params, 4, sizes, rng, mode);
        const data::Episode ep = data::sample_episode(task, sizes, rng);

        ad::Tape tape;
        model::ModelGraph graph(tape, params);
        const auto scores = graph.episode(ep, mode, cfg);
        tape.backward(ad::episode_loss(scores.anomaly_scores, scores.normal_scores));
        r.clamped_gaps += tape.clamped_gaps();
        const std::vector<Matrix> grads = graph.gradients();
        const std::vector<bool> base = tape.activation_pattern();

        auto arrays = params.trainable();
        std::size_t total = 0;
        for (const Matrix* m : arrays) total += m->size();
        std::uniform_int_distribution<std::size_t> pick(0, total - 1);
        std::size_t compared = 0;
        for (std::size_t draw = 0; draw < kMaxDraws && compared < kEndToEndParameters; ++draw) {
            std::size_t flat = pick(rng), array = 0;
            while (flat >= arrays[array]->size()) flat -= arrays[array++]->size();
            double& theta = (*arrays[array])[flat];
            const double original = theta;
            theta = original + o.step;
            const LossProbe up = probe_loss(params, ep, mode, cfg);
            theta = original - o.step;
            const LossProbe down = probe_loss(params, ep, mode, cfg);
            theta = original;
            // A rectifier switching inside the stencil makes the difference meaningless.
            if (up.pattern != base || down.pattern != base) {
                ++r.kink_skips;
                continue;
            }
            record(r, grads[array][flat], (up.loss - down.loss) / (2.0 * o.step));
            ++compared;
        }
    }
    return r;
}
}  // namespace

double relative_error(double analytic, double numeric) noexcept {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
    return std::abs(analytic - numeric) / scale;
}

double Report::max_rel_error() const {
    double m = 0.0;
    for (const auto& c : checks) m = std::max(m, c.max_rel_error);
    return m;
}

bool Report::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed(); });
}

Report run(const Options& options) {
    Rng rng(options.seed);
    Report report;
    report.checks.push_back(check_cholesky(options, rng));
    report.checks.push_back(check_tri_solve(options, rng, false));
    report.checks.push_back(check_tri_solve(options, rng, true));
    report.checks.push_back(check_sym_eig(options, rng));
    report.checks.push_back(check_gen_eig(options, rng));
    report.checks.push_back(check_degenerate(options, rng));
    for (model::Mode mode : {model::Mode::Eigen, model::Mode::SingleAnomaly, model::Mode::NormalOnly,
                             model::Mode::WoProj}) {
        report.checks.push_back(check_episode(options, rng, mode));
    }
    return report;
}

}  // namespace eigmeta::gradcheck
