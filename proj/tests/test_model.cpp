#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "eigmeta/data.hpp"
#include "eigmeta/errors.hpp"
#include "eigmeta/linalg.hpp"
#include "eigmeta/model.hpp"
#include "helpers.hpp"

using eigmeta::ErrorKind;
using eigmeta::Matrix;
namespace ad = eigmeta::ad;
namespace data = eigmeta::data;
namespace model = eigmeta::model;

namespace {

model::ModelParams small_params(std::uint64_t seed, std::size_t input_dim = 2, std::size_t j = 6) {
    std::mt19937_64 rng(seed);
    return model::ModelParams::initialize({input_dim, 16, j, 2}, rng);
}

Matrix mlp_forward(const model::Mlp& net, Matrix h) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        h = eigmeta::matmul(h, net.layers[l].weight);
        if (!net.layers[l].bias.empty())
            for (std::size_t r = 0; r < h.rows(); ++r)
                for (std::size_t c = 0; c < h.cols(); ++c) h(r, c) += net.layers[l].bias[c];
        if (l + 1 < net.layers.size())
            for (double& v : h.values()) v = std::max(v, 0.0);
    }
    return h;
}

Matrix reversed_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(m.rows() - 1 - r, c);
    return out;
}

Matrix doubled_rows(const Matrix& m) {
    Matrix out(2 * m.rows(), m.cols());
    for (std::size_t r = 0; r < 2 * m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r % m.rows(), c);
    return out;
}

double max_diff(std::span<const double> a, std::span<const double> b) {
    double out = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) out = std::max(out, std::abs(a[i] - b[i]));
    return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    return eigmeta::dot(a, b) / (eigmeta::norm2(a) * eigmeta::norm2(b));
}

struct Fixture {
    data::TaskBundle bundle = data::ring_family(4, 0, 0, 3);
    model::ModelParams params = small_params(5);
    std::mt19937_64 rng{99};

    Fixture() {
        std::vector<const data::LabeledDataset*> tasks;
        for (const auto& t : bundle.tasks) tasks.push_back(&t);
        model::fix_center(tasks, params, 20, {}, rng);
    }

    data::Episode episode(const data::EpisodeSizes& sizes = {}) {
        std::uniform_int_distribution<std::size_t> pick(0, bundle.tasks.size() - 1);
        const std::size_t t = pick(rng);
        return data::sample_episode(bundle.tasks[t], sizes, rng, t);
    }
};

}  // namespace

TEST_CASE("encode_task is invariant to permutation and duplication") {
    Fixture fx;
    for (int trial = 0; trial < 20; ++trial) {
        const data::Episode ep = fx.episode({5, 3, 1, 1});
        const auto r = model::encode_task(ep.support, fx.params);
        data::SupportSet permuted{reversed_rows(ep.support.normals), reversed_rows(ep.support.anomalies)};
        data::SupportSet doubled{doubled_rows(ep.support.normals), doubled_rows(ep.support.anomalies)};
        CHECK(max_diff(r, model::encode_task(permuted, fx.params)) <= 1e-9);
        CHECK(max_diff(r, model::encode_task(doubled, fx.params)) <= 1e-9);
    }
}

TEST_CASE("encode_task of a singleton is g(f([x, y]))") {
    const auto params = small_params(6);
    data::SupportSet s{Matrix(0, 2), Matrix{{0.7, -1.3}}};
    const Matrix expected = mlp_forward(params.g, mlp_forward(params.f, Matrix{{0.7, -1.3, 1.0}}));
    CHECK(max_diff(model::encode_task(s, params), expected.values()) < 1e-13);
}

TEST_CASE("embed examples") {
    auto params = small_params(7);
    const Matrix x{{0.2, 0.4}, {-1.0, 2.0}};
    std::mt19937_64 rng(1);
    const Matrix r1 = testing::gaussian_matrix(1, 16, rng), r2 = testing::gaussian_matrix(1, 16, rng);
    CHECK(max_diff(model::embed(x, r1.values(), params).values(), model::embed(x, r2.values(), params).values()) >
          1e-6);
    for (double& w : params.phi.layers.back().weight.values()) w = 0.0;
    CHECK(model::embed(x, r1.values(), params) == Matrix(2, 6));
}

TEST_CASE("scatter examples") {
    const auto params = small_params(8, 2, 3);
    ad::Tape tape;
    model::ModelGraph graph(tape, params);
    const double eta = params.eta();
    const auto s = graph.scatter(tape.constant(Matrix(4, 3)), tape.constant(Matrix{{1, 0, 0}}));
    CHECK(s.normal.value() == Matrix::identity(3) * eta);
    CHECK(s.anomaly.value() == Matrix{{1, 0, 0}, {0, 0, 0}, {0, 0, 0}});
}

TEST_CASE("S_N stays above the ridge on random episodes") {
    Fixture fx;
    double worst = 1.0;
    for (int trial = 0; trial < 200; ++trial) {
        const data::Episode ep = fx.episode();
        const auto r = model::encode_task(ep.support, fx.params);
        const auto [sa, sn] = model::scatter_matrices(ep.support, r, fx.params);
        worst = std::min(worst, eigmeta::linalg::sym_eig(sn).values.front() - fx.params.eta());
    }
    CHECK(worst >= -1e-10);
}

TEST_CASE("WoNN recovers the anomaly axis") {
    auto params = small_params(9);
    params.raw_center = Matrix(1, 2);
    data::SupportSet s{Matrix{{0, 1}, {0, -1}, {0, 0.5}, {0, -0.5}}, Matrix{{2.5, 0}}};
    const auto a = model::adapt(s, params, model::Mode::WoNN);
    CHECK(std::abs(a.w[0]) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(a.w[1]) < 1e-12);
    CHECK(a.lambda == doctest::Approx(6.25 / params.eta()));
}

TEST_CASE("isotropic scatters give the trace ratio") {
    const auto params = small_params(10, 2, 4);
    ad::Tape tape;
    model::ModelGraph graph(tape, params);
    const Matrix sa = Matrix::identity(4) * 3.0, sn = Matrix::identity(4) * 1.5;
    const auto p = graph.project_eigen({tape.constant(sa), tape.constant(sn)});
    CHECK(p.lambda.scalar() == doctest::Approx(eigmeta::trace(sa) / eigmeta::trace(sn)));
}

TEST_CASE("eigen adaptation beats random directions") {
    Fixture fx;
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const data::Episode ep = fx.episode({5, 2, 1, 1});
        const auto a = model::adapt(ep.support, fx.params);
        const auto [sa, sn] = model::scatter_matrices(ep.support, a.r, fx.params);
        const double best = eigmeta::linalg::rayleigh_quotient(sa, sn, a.w);
        double worst_gap = 1.0;
        for (int i = 0; i < 20000; ++i) {
            const auto u = testing::random_unit(6, rng);
            worst_gap = std::min(worst_gap, best - eigmeta::linalg::rayleigh_quotient(sa, sn, u));
        }
        CHECK(worst_gap > -1e-9);
    }
}

TEST_CASE("single-anomaly closed form") {
    const auto params = small_params(11, 2, 3);
    ad::Tape tape;
    model::ModelGraph graph(tape, params);
    const Matrix d{{0.3, -1.2, 0.4}};
    const auto p = graph.project_single(tape.constant(Matrix::identity(3) * params.eta()), tape.constant(d));
    CHECK(std::abs(cosine(p.w.value().values(), d.values())) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK_THROWS_AS(graph.project_single(tape.constant(Matrix::identity(3)), tape.constant(Matrix(1, 3))),
                    eigmeta::Error);

    Fixture fx;
    for (int trial = 0; trial < 50; ++trial) {
        const data::Episode ep = fx.episode();
        const auto eig = model::adapt(ep.support, fx.params);
        const auto single = model::adapt_single(ep.support, fx.params);
        CHECK(std::abs(cosine(eig.w, single.w)) >= 1.0 - 1e-8);
    }
}

TEST_CASE("anomaly score arithmetic") {
    auto params = small_params(12, 2, 2);
    ad::Tape tape;
    model::ModelGraph graph(tape, params);
    model::ProjectionVars p{tape.constant(Matrix{{1}, {0}}), {}, false};
    CHECK(graph.score(tape.constant(Matrix{{3, 4}}), p, model::Mode::Eigen).scalar() == 9.0);

    const Matrix x{{0.5, -0.25}};
    const std::vector<double> r = model::encode_task({x, Matrix(0, 2)}, params);
    const Matrix z = model::embed(x, r, params);
    params.center = z;
    model::AdaptationResult a;
    a.r = r;
    a.w = {0.6, 0.8};
    CHECK(model::anomaly_score(x, params, a)[0] == 0.0);
}

TEST_CASE("rescaling the projection scales scores by t^2 and keeps the AUC") {
    Fixture fx;
    const data::Episode ep = fx.episode();
    model::AdaptationResult a = model::adapt(ep.support, fx.params);
    const auto qa = model::anomaly_score(ep.query_anomalies, fx.params, a);
    const auto qn = model::anomaly_score(ep.query_normals, fx.params, a);
    for (double& w : a.w) w *= 3.0;
    const auto qa3 = model::anomaly_score(ep.query_anomalies, fx.params, a);
    const auto qn3 = model::anomaly_score(ep.query_normals, fx.params, a);
    for (std::size_t i = 0; i < qa.size(); ++i) CHECK(qa3[i] == doctest::Approx(9.0 * qa[i]).epsilon(1e-12));
    CHECK(eigmeta::empirical_auc({qa, qn}) == eigmeta::empirical_auc({qa3, qn3}));
}

TEST_CASE("normal-only projection limits") {
    auto params = small_params(13, 2, 4);
    params.projected_center = Matrix{{0.7, -0.2}};
    ad::Tape tape;
    model::ModelGraph graph(tape, params);

    const auto exact = graph.project_normal_only(tape.constant(Matrix::identity(4)), {2, 1e-12});
    CHECK(testing::max_abs_diff(exact.w.value(), Matrix{{0.7, -0.2}, {0.7, -0.2}, {0.7, -0.2}, {0.7, -0.2}}) <
          1e-10);

    const auto heavy = graph.project_normal_only(tape.constant(Matrix::identity(4)), {2, 1e9});
    CHECK(eigmeta::max_abs(heavy.w.value()) < 1e-8);

    const Matrix same{{0.5, 1.0, -2.0, 0.1}, {0.5, 1.0, -2.0, 0.1}, {0.5, 1.0, -2.0, 0.1}};
    const auto p = graph.project_normal_only(tape.constant(same), {2, 1e-6});
    const Matrix mapped = eigmeta::matmul(Matrix{{0.5, 1.0, -2.0, 0.1}}, p.w.value());
    CHECK(testing::max_abs_diff(mapped, params.projected_center) < 1e-5);
}

TEST_CASE("ablation contracts") {
    Fixture fx;
    const data::Episode ep = fx.episode();

    ad::Tape tape;
    model::ModelGraph graph(tape, fx.params);
    const auto v = graph.episode(ep, model::Mode::WoProj);
    tape.backward(eigmeta::ad::episode_loss(v.anomaly_scores, v.normal_scores));
    CHECK(graph.eta().grad() == Matrix(1, 1));

    data::Episode corrupted = ep;
    for (double& x : corrupted.support.anomalies.values()) x = 1e6;
    const auto clean = model::score_episode(ep, fx.params, model::Mode::NormalOnly, {2, 1e-6});
    const auto dirty = model::score_episode(corrupted, fx.params, model::Mode::NormalOnly, {2, 1e-6});
    CHECK(clean.anomaly_scores == dirty.anomaly_scores);
    CHECK(clean.normal_scores == dirty.normal_scores);
}

TEST_CASE("fix_center examples") {
    data::LabeledDataset one;
    one.attributes = Matrix{{0.4, -0.9}};
    one.labels = {0};
    const data::LabeledDataset* tasks[] = {&one};
    const data::EpisodeSizes singleton{1, 0, 0, 0};
    std::mt19937_64 rng(1);

    auto params = small_params(14);
    const auto r = model::encode_task({one.attributes, Matrix(0, 2)}, params);
    Matrix expected = model::embed(one.attributes, r, params);
    model::guard_center(expected.values());
    CHECK(model::fix_center(tasks, params, 1, singleton, rng) == expected);

    for (double& w : params.phi.layers.back().weight.values()) w = 0.0;
    const Matrix guarded = model::fix_center(tasks, params, 1, singleton, rng);
    CHECK(guarded == Matrix(1, 6, model::kCenterGuard));
}

TEST_CASE("fix_center with many episodes approaches the population mean") {
    Fixture fx;
    std::vector<const data::LabeledDataset*> tasks;
    for (const auto& t : fx.bundle.tasks) tasks.push_back(&t);
    auto a = fx.params, b = fx.params;
    std::mt19937_64 rng_a(2), rng_b(3);
    const Matrix c100 = model::fix_center(tasks, a, 100, {}, rng_a);
    const Matrix c2000 = model::fix_center(tasks, b, 2000, {}, rng_b);
    CHECK(eigmeta::frobenius_norm(c100 - c2000) < 0.05 * eigmeta::frobenius_norm(c2000));
}
