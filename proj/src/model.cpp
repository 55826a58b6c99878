#include "eigmeta/model.hpp"

#include <algorithm>
#include <cmath>

#include "eigmeta/errors.hpp"
#include "eigmeta/linalg.hpp"

namespace eigmeta::model {

const char* to_string(Mode mode) noexcept {
    switch (mode) {
        case Mode::Eigen: return "eigen";
        case Mode::SingleAnomaly: return "single-anomaly";
        case Mode::NormalOnly: return "normal-only";
        case Mode::WoNN: return "wonn";
        case Mode::WoProj: return "woproj";
    }
    return "eigen";
}

Mode parse_mode(std::string_view text) {
    if (text == "eigen" || text == "full") return Mode::Eigen;
    if (text == "single-anomaly" || text == "single") return Mode::SingleAnomaly;
    if (text == "normal-only" || text == "woanomaly") return Mode::NormalOnly;
    if (text == "wonn") return Mode::WoNN;
    if (text == "woproj") return Mode::WoProj;
    throw Error(ErrorKind::Config, "unknown mode '" + std::string(text) + "'");
}

namespace {

DenseLayer glorot_layer(std::size_t in, std::size_t out, bool bias, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    DenseLayer layer;
    layer.weight = Matrix(in, out);
    for (double& v : layer.weight.values()) v = uniform(rng);
    if (bias) layer.bias = Matrix(1, out);
    return layer;
}

Mlp make_mlp(std::span<const std::size_t> widths, bool bias, std::mt19937_64& rng) {
    Mlp net;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        net.layers.push_back(glorot_layer(widths[i], widths[i + 1], bias, rng));
    return net;
}

template <typename Params, typename Out>
void collect_trainable(Params& p, Out& out) {
    for (auto* net : {&p.f, &p.g, &p.phi}) {
        for (auto& layer : net->layers) {
            out.push_back(&layer.weight);
            if (!layer.bias.empty()) out.push_back(&layer.bias);
        }
    }
    out.push_back(&p.log_eta);
}

Matrix with_label_column(const Matrix& x, double label) {
    Matrix out(x.rows(), x.cols() + 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j);
        out(i, x.cols()) = label;
    }
    return out;
}

Matrix stack_rows(std::initializer_list<const Matrix*> parts) {
    std::size_t rows = 0, cols = 0;
    for (const Matrix* m : parts) {
        rows += m->rows();
        if (m->cols() != 0) cols = m->cols();
    }
    Matrix out(rows, cols);
    std::size_t r = 0;
    for (const Matrix* m : parts) {
        if (m->rows() == 0) continue;
        if (m->cols() != cols) throw Error(ErrorKind::DimensionMismatch, "instance dimensions differ");
        std::copy(m->values().begin(), m->values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * cols));
        r += m->rows();
    }
    return out;
}

// Flips the projection so its largest-magnitude entry is positive.
ad::Var sign_fixed(ad::Var w) {
    std::vector<double> copy(w.value().values().begin(), w.value().values().end());
    return linalg::fix_sign(copy) < 0.0 ? ad::scale(w, -1.0) : w;
}

}  // namespace

ModelParams ModelParams::initialize(const Architecture& arch, std::mt19937_64& rng) {
    if (arch.input_dim == 0 || arch.hidden == 0 || arch.embed_dim == 0) {
        throw Error(ErrorKind::Config, "architecture sizes must be positive");
    }
    if (arch.projected_dim == 0 || arch.projected_dim > arch.embed_dim) {
        throw Error(ErrorKind::Config, "projected_dim must lie in [1, embed_dim]");
    }
    ModelParams p;
    p.arch = arch;
    const std::size_t m = arch.input_dim, h = arch.hidden, j = arch.embed_dim;
    const std::size_t f_widths[] = {m + 1, h, h};
    const std::size_t g_widths[] = {h, h, h};
    const std::size_t phi_widths[] = {m + h, h, h, j};
    p.f = make_mlp(f_widths, true, rng);
    p.g = make_mlp(g_widths, true, rng);
    p.phi = make_mlp(phi_widths, false, rng);
    p.log_eta = Matrix(1, 1, 0.0);
    p.center = Matrix(1, j);
    p.projected_center = Matrix(1, arch.projected_dim);
    p.raw_center = Matrix(1, m);
    return p;
}

double ModelParams::eta() const { return std::exp(log_eta[0]); }

std::vector<Matrix*> ModelParams::trainable() {
    std::vector<Matrix*> out;
    collect_trainable(*this, out);
    return out;
}

std::vector<const Matrix*> ModelParams::trainable() const {
    std::vector<const Matrix*> out;
    collect_trainable(*this, out);
    return out;
}

std::vector<std::string> ModelParams::trainable_names() const {
    std::vector<std::string> names;
    const std::pair<const char*, const Mlp*> nets[] = {{"f", &f}, {"g", &g}, {"phi", &phi}};
    for (const auto& [prefix, net] : nets) {
        for (std::size_t l = 0; l < net->layers.size(); ++l) {
            const std::string base = std::string(prefix) + "." + std::to_string(l);
            names.push_back(base + ".weight");
            if (!net->layers[l].bias.empty()) names.push_back(base + ".bias");
        }
    }
    names.push_back("log_eta");
    return names;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::named_arrays() const {
    std::vector<std::pair<std::string, const Matrix*>> out;
    const auto names = trainable_names();
    const auto arrays = trainable();
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], arrays[i]);
    out.emplace_back("center", &center);
    out.emplace_back("projected_center", &projected_center);
    out.emplace_back("raw_center", &raw_center);
    return out;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::named_arrays() {
    std::vector<std::pair<std::string, Matrix*>> out;
    const auto names = trainable_names();
    const auto arrays = trainable();
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], arrays[i]);
    out.emplace_back("center", &center);
    out.emplace_back("projected_center", &projected_center);
    out.emplace_back("raw_center", &raw_center);
    return out;
}

// --- ModelGraph ------------------------------------------------------------

ModelGraph::ModelGraph(ad::Tape& tape, const ModelParams& params, DropoutContext dropout)
    : tape_(&tape), params_(&params), dropout_(dropout) {
    auto bind = [&](const Mlp& net, std::vector<std::pair<ad::Var, ad::Var>>& out) {
        for (const auto& layer : net.layers) {
            ad::Var w = tape.leaf(layer.weight);
            trainable_.push_back(w);
            ad::Var b{};
            if (!layer.bias.empty()) {
                b = tape.leaf(layer.bias);
                trainable_.push_back(b);
            }
            out.emplace_back(w, b);
        }
    };
    bind(params.f, f_);
    bind(params.g, g_);
    bind(params.phi, phi_);
    log_eta_ = tape.leaf(params.log_eta);
    trainable_.push_back(log_eta_);
    eta_ = ad::exp(log_eta_);
    center_ = tape.constant(params.center);
    projected_center_ = tape.constant(params.projected_center);
    raw_center_ = tape.constant(params.raw_center);
}

ad::Var ModelGraph::run_mlp(const std::vector<std::pair<ad::Var, ad::Var>>& layers, ad::Var x,
                            bool has_bias) {
    ad::Var h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        h = ad::matmul(h, layers[l].first);
        if (has_bias) h = ad::add_row(h, layers[l].second);
        if (l + 1 < layers.size()) {
            h = ad::relu(h);
            if (dropout_.training && dropout_.rate > 0.0) {
                h = ad::dropout(h, dropout_.rate, true, *dropout_.rng);
            }
        }
    }
    return h;
}

ad::Var ModelGraph::task_representation(const data::SupportSet& support, bool include_anomalies) {
    const std::size_t m = params_->arch.input_dim;
    const bool use_anomalies = include_anomalies && support.anomalies.rows() > 0;
    if (support.normals.rows() == 0 && !use_anomalies) {
        throw Error(ErrorKind::EmptySupport, "support set has no instances");
    }
    if ((support.normals.rows() > 0 && support.normals.cols() != m) ||
        (use_anomalies && support.anomalies.cols() != m)) {
        throw Error(ErrorKind::DimensionMismatch, "support instances do not have " + std::to_string(m) + " attributes");
    }
    const Matrix normals = with_label_column(support.normals, 0.0);
    Matrix labeled = normals;
    if (use_anomalies) {
        const Matrix anomalies = with_label_column(support.anomalies, 1.0);
        labeled = stack_rows({&normals, &anomalies});
    }
    ad::Var encoded = run_mlp(f_, tape_->constant(std::move(labeled)), true);
    return run_mlp(g_, ad::mean_rows(encoded), true);
}

ad::Var ModelGraph::embed(const Matrix& x, ad::Var r) {
    if (x.cols() != params_->arch.input_dim) {
        throw Error(ErrorKind::DimensionMismatch, "instance has " + std::to_string(x.cols()) +
                                                      " attributes, model expects " +
                                                      std::to_string(params_->arch.input_dim));
    }
    if (r.rows() != 1 || r.cols() != params_->arch.hidden) {
        throw Error(ErrorKind::DimensionMismatch, "task representation has the wrong width");
    }
    ad::Var input = ad::concat_cols(tape_->constant(x), ad::repeat_rows(r, x.rows()));
    return run_mlp(phi_, input, false);
}

ad::Var ModelGraph::centered(ad::Var z, Mode mode) {
    return ad::sub_row(z, mode == Mode::WoNN ? raw_center_ : center_);
}

ScatterVars ModelGraph::scatter(ad::Var centered_normals, ad::Var centered_anomalies) {
    const std::size_t n_normal = centered_normals.rows();
    const std::size_t n_anomaly = centered_anomalies.rows();
    if (n_anomaly == 0) throw Error(ErrorKind::NoAnomalies, "scatter needs at least one support anomaly");
    if (n_normal == 0) throw Error(ErrorKind::NoNormalInstances, "scatter needs at least one support normal");
    ScatterVars s;
    s.anomaly = ad::scale(ad::matmul(ad::transpose(centered_anomalies), centered_anomalies),
                          1.0 / static_cast<double>(n_anomaly));
    s.normal = ad::add_scaled_identity(
        ad::scale(ad::matmul(ad::transpose(centered_normals), centered_normals),
                  1.0 / static_cast<double>(n_normal)),
        eta_);
    return s;
}

ProjectionVars ModelGraph::project_eigen(const ScatterVars& scatter) {
    if (!(eigmeta::trace(scatter.anomaly.value()) > 0.0)) {
        throw Error(ErrorKind::DegenerateAnomaly, "anomalous support embeddings coincide with the center");
    }
    ad::TopEigen top = ad::gen_eig_top(scatter.anomaly, scatter.normal);
    return ProjectionVars{top.vector, top.value, true};
}

ProjectionVars ModelGraph::project_single(ad::Var scatter_normal, ad::Var centered_anomaly) {
    if (centered_anomaly.rows() != 1) {
        throw Error(ErrorKind::NotSingleAnomaly,
                    "closed form needs exactly one support anomaly, got " + std::to_string(centered_anomaly.rows()));
    }
    const double offset = frobenius_norm(centered_anomaly.value());
    const double scale = std::max(frobenius_norm(center_.value()), 1.0);
    if (!(offset > 1e-12 * scale)) {
        throw Error(ErrorKind::DegenerateAnomaly, "anomalous support embedding coincides with the center");
    }
    ad::Var lower = ad::cholesky(scatter_normal);
    ad::Var half = ad::tri_solve(lower, ad::transpose(centered_anomaly));
    ad::Var w = ad::normalize(ad::tri_solve(lower, half, /*transposed=*/true));
    return ProjectionVars{sign_fixed(w), ad::Var{}, false};
}

ProjectionVars ModelGraph::project_normal_only(ad::Var normal_embeddings, const NormalOnlyConfig& cfg) {
    const std::size_t n = normal_embeddings.rows();
    const std::size_t j = normal_embeddings.cols();
    if (n == 0) throw Error(ErrorKind::NoNormalInstances, "normal-only adaptation needs support normals");
    if (cfg.projected_dim != projected_center_.cols()) {
        throw Error(ErrorKind::Config, "projected_dim does not match the model's projected center");
    }
    if (!(cfg.ridge_scale > 0.0)) throw Error(ErrorKind::Config, "ridge_scale must be positive");
    ad::Var targets = ad::repeat_rows(projected_center_, n);  // C, n x K
    const double ridge_factor = cfg.ridge_scale / static_cast<double>(j);

    ad::Var projection;
    if (n >= j) {
        // (Phi^T Phi + ridge I)^-1 Phi^T C
        ad::Var gram = ad::matmul(ad::transpose(normal_embeddings), normal_embeddings);
        ad::Var ridge = ad::scale(ad::trace(gram), ridge_factor);
        ad::Var lower = ad::cholesky(ad::add_scaled_identity(gram, ridge));
        ad::Var rhs = ad::matmul(ad::transpose(normal_embeddings), targets);
        projection = ad::tri_solve(lower, ad::tri_solve(lower, rhs), true);
    } else {
        // Same solution through the n x n kernel: Phi^T (Phi Phi^T + ridge I)^-1 C
        ad::Var kernel = ad::matmul(normal_embeddings, ad::transpose(normal_embeddings));
        ad::Var ridge = ad::scale(ad::trace(kernel), ridge_factor);
        ad::Var lower = ad::cholesky(ad::add_scaled_identity(kernel, ridge));
        ad::Var coeffs = ad::tri_solve(lower, ad::tri_solve(lower, targets), true);
        projection = ad::matmul(ad::transpose(normal_embeddings), coeffs);
    }
    return ProjectionVars{projection, ad::Var{}, false};
}

ad::Var ModelGraph::score(ad::Var z, const ProjectionVars& projection, Mode mode) {
    switch (mode) {
        case Mode::Eigen:
        case Mode::SingleAnomaly:
        case Mode::WoNN:
            return ad::square(ad::matmul(centered(z, mode), projection.w));
        case Mode::NormalOnly:
            return ad::row_sq_norm(ad::sub_row(ad::matmul(z, projection.w), projected_center_));
        case Mode::WoProj:
            return ad::row_sq_norm(centered(z, mode));
    }
    throw Error(ErrorKind::Config, "unhandled mode");
}

EpisodeVars ModelGraph::episode(const data::Episode& ep, Mode mode, const NormalOnlyConfig& cfg) {
    const data::SupportSet& s = ep.support;
    const std::size_t n_sn = s.normals.rows(), n_sa = s.anomalies.rows();
    const std::size_t n_qa = ep.query_anomalies.rows(), n_qn = ep.query_normals.rows();

    if (mode == Mode::WoNN) {
        if (s.normals.cols() != params_->arch.input_dim) {
            throw Error(ErrorKind::DimensionMismatch, "support instances have the wrong attribute count");
        }
        ScatterVars sc = scatter(centered(tape_->constant(s.normals), mode),
                                 centered(tape_->constant(s.anomalies), mode));
        ProjectionVars proj = project_eigen(sc);
        return EpisodeVars{score(tape_->constant(ep.query_anomalies), proj, mode),
                           score(tape_->constant(ep.query_normals), proj, mode)};
    }

    if (mode == Mode::NormalOnly) {
        ad::Var r = task_representation(s, /*include_anomalies=*/false);
        const Matrix all = stack_rows({&s.normals, &ep.query_anomalies, &ep.query_normals});
        ad::Var z = embed(all, r);
        ProjectionVars proj = project_normal_only(ad::slice_rows(z, 0, n_sn), cfg);
        return EpisodeVars{score(ad::slice_rows(z, n_sn, n_sn + n_qa), proj, mode),
                           score(ad::slice_rows(z, n_sn + n_qa, n_sn + n_qa + n_qn), proj, mode)};
    }

    ad::Var r = task_representation(s);
    if (mode == Mode::WoProj) {
        const Matrix queries = stack_rows({&ep.query_anomalies, &ep.query_normals});
        ad::Var z = embed(queries, r);
        ProjectionVars none{};
        return EpisodeVars{score(ad::slice_rows(z, 0, n_qa), none, mode),
                           score(ad::slice_rows(z, n_qa, n_qa + n_qn), none, mode)};
    }

    const Matrix all = stack_rows({&s.normals, &s.anomalies, &ep.query_anomalies, &ep.query_normals});
    ad::Var z = embed(all, r);
    ad::Var d_normal = centered(ad::slice_rows(z, 0, n_sn), mode);
    ad::Var d_anomaly = centered(ad::slice_rows(z, n_sn, n_sn + n_sa), mode);
    ProjectionVars proj;
    if (mode == Mode::SingleAnomaly) {
        if (n_sa != 1) {
            throw Error(ErrorKind::NotSingleAnomaly, "single-anomaly mode needs exactly one support anomaly");
        }
        proj = project_single(scatter(d_normal, d_anomaly).normal, d_anomaly);
    } else {
        proj = project_eigen(scatter(d_normal, d_anomaly));
    }
    const std::size_t q0 = n_sn + n_sa;
    return EpisodeVars{score(ad::slice_rows(z, q0, q0 + n_qa), proj, mode),
                       score(ad::slice_rows(z, q0 + n_qa, q0 + n_qa + n_qn), proj, mode)};
}

std::vector<Matrix> ModelGraph::gradients() const {
    std::vector<Matrix> out;
    out.reserve(trainable_.size());
    for (const ad::Var& v : trainable_) out.push_back(v.grad());
    return out;
}

// --- value-level API -------------------------------------------------------

namespace {

std::vector<double> to_vector(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

}  // namespace

std::vector<double> encode_task(const data::SupportSet& support, const ModelParams& params) {
    ad::Tape tape;
    ModelGraph graph(tape, params);
    return to_vector(graph.task_representation(support).value());
}

Matrix embed(const Matrix& x, std::span<const double> r, const ModelParams& params) {
    ad::Tape tape;
    ModelGraph graph(tape, params);
    return graph.embed(x, tape.constant(Matrix::row(r))).value();
}

std::pair<Matrix, Matrix> scatter_matrices(const data::SupportSet& support, std::span<const double> r,
                                           const ModelParams& params) {
    ad::Tape tape;
    ModelGraph graph(tape, params);
    ad::Var rv = tape.constant(Matrix::row(r));
    ad::Var dn = graph.centered(graph.embed(support.normals, rv), Mode::Eigen);
    ad::Var da = graph.centered(graph.embed(support.anomalies, rv), Mode::Eigen);
    ScatterVars s = graph.scatter(dn, da);
    return {s.anomaly.value(), s.normal.value()};
}

AdaptationResult adapt(const data::SupportSet& support, const ModelParams& params, Mode mode) {
    switch (mode) {
        case Mode::SingleAnomaly: return adapt_single(support, params);
        case Mode::NormalOnly: {
            NormalOnlyConfig cfg;
            cfg.projected_dim = params.projected_center.cols();
            return adapt_normal_only(support, params, cfg);
        }
        case Mode::WoProj: return adapt_without_projection(support, params);
        case Mode::Eigen:
        case Mode::WoNN: break;
    }
    ad::Tape tape;
    ModelGraph graph(tape, params);
    AdaptationResult out;
    out.mode = mode;
    ScatterVars s;
    if (mode == Mode::WoNN) {
        s = graph.scatter(graph.centered(tape.constant(support.normals), mode),
                          graph.centered(tape.constant(support.anomalies), mode));
    } else {
        ad::Var r = graph.task_representation(support);
        out.r = to_vector(r.value());
        s = graph.scatter(graph.centered(graph.embed(support.normals, r), mode),
                          graph.centered(graph.embed(support.anomalies, r), mode));
    }
    ProjectionVars p = graph.project_eigen(s);
    out.w = to_vector(p.w.value());
    out.lambda = p.lambda.scalar();
    return out;
}

AdaptationResult adapt_single(const data::SupportSet& support, const ModelParams& params) {
    if (support.anomalies.rows() != 1) {
        throw Error(ErrorKind::NotSingleAnomaly,
                    "support has " + std::to_string(support.anomalies.rows()) + " anomalies");
    }
    ad::Tape tape;
    ModelGraph graph(tape, params);
    ad::Var r = graph.task_representation(support);
    ad::Var dn = graph.centered(graph.embed(support.normals, r), Mode::SingleAnomaly);
    ad::Var da = graph.centered(graph.embed(support.anomalies, r), Mode::SingleAnomaly);
    ProjectionVars p = graph.project_single(graph.scatter(dn, da).normal, da);
    AdaptationResult out;
    out.mode = Mode::SingleAnomaly;
    out.r = to_vector(r.value());
    out.w = to_vector(p.w.value());
    return out;
}

AdaptationResult adapt_normal_only(const data::SupportSet& support, const ModelParams& params,
                                   const NormalOnlyConfig& cfg) {
    ad::Tape tape;
    ModelGraph graph(tape, params);
    ad::Var r = graph.task_representation(support, /*include_anomalies=*/false);
    ProjectionVars p = graph.project_normal_only(graph.embed(support.normals, r), cfg);
    AdaptationResult out;
    out.mode = Mode::NormalOnly;
    out.r = to_vector(r.value());
    out.projection = p.w.value();
    return out;
}

AdaptationResult adapt_without_projection(const data::SupportSet& support, const ModelParams& params) {
    ad::Tape tape;
    ModelGraph graph(tape, params);
    AdaptationResult out;
    out.mode = Mode::WoProj;
    out.r = to_vector(graph.task_representation(support).value());
    return out;
}

std::vector<double> anomaly_score(const Matrix& x, const ModelParams& params,
                                  const AdaptationResult& adaptation) {
    ad::Tape tape;
    ModelGraph graph(tape, params);
    const Mode mode = adaptation.mode;
    ad::Var z = mode == Mode::WoNN ? tape.constant(x)
                                   : graph.embed(x, tape.constant(Matrix::row(adaptation.r)));
    if (mode == Mode::WoNN && x.cols() != params.arch.input_dim) {
        throw Error(ErrorKind::DimensionMismatch, "instance attribute count");
    }
    ProjectionVars p;
    if (mode == Mode::NormalOnly) {
        p.w = tape.constant(adaptation.projection);
    } else if (mode != Mode::WoProj) {
        if (adaptation.w.size() != z.cols()) throw Error(ErrorKind::DimensionMismatch, "projection length");
        p.w = tape.constant(Matrix::column(adaptation.w));
    }
    return to_vector(graph.score(z, p, mode).value());
}

EpisodeScore score_episode(const data::Episode& episode, const ModelParams& params, Mode mode,
                           const NormalOnlyConfig& cfg) {
    ad::Tape tape;
    ModelGraph graph(tape, params);
    EpisodeVars v = graph.episode(episode, mode, cfg);
    return EpisodeScore{to_vector(v.anomaly_scores.value()), to_vector(v.normal_scores.value())};
}

void guard_center(std::span<double> c) noexcept {
    if (norm2(c) >= kCenterGuard) return;
    for (double& v : c) {
        if (std::abs(v) < kCenterGuard) v = v < 0.0 ? -kCenterGuard : kCenterGuard;
    }
}

Matrix fix_center(std::span<const data::LabeledDataset* const> tasks, ModelParams& params,
                  std::size_t n_episodes, const data::EpisodeSizes& sizes, std::mt19937_64& rng,
                  Mode mode) {
    if (tasks.empty() || n_episodes == 0) {
        throw Error(ErrorKind::NoNormalInstances, "fix_center needs at least one task and one episode");
    }
    const std::size_t m = params.arch.input_dim, j = params.arch.embed_dim;
    Matrix raw_sum(1, m), embed_sum(1, j);
    std::size_t count = 0;
    std::uniform_int_distribution<std::size_t> pick(0, tasks.size() - 1);
    for (std::size_t e = 0; e < n_episodes; ++e) {
        const std::size_t t = pick(rng);
        const data::Episode ep = data::sample_episode(*tasks[t], sizes, rng, t);
        const Matrix normals = stack_rows({&ep.support.normals, &ep.query_normals});
        if (normals.rows() == 0) continue;
        if (normals.cols() != m) throw Error(ErrorKind::DimensionMismatch, "task attribute count");
        for (std::size_t i = 0; i < normals.rows(); ++i)
            for (std::size_t k = 0; k < m; ++k) raw_sum[k] += normals(i, k);
        if (mode != Mode::WoNN) {
            ad::Tape tape;
            ModelGraph graph(tape, params);
            ad::Var r = graph.task_representation(ep.support, mode != Mode::NormalOnly);
            const Matrix z = graph.embed(normals, r).value();
            for (std::size_t i = 0; i < z.rows(); ++i)
                for (std::size_t k = 0; k < j; ++k) embed_sum[k] += z(i, k);
        }
        count += normals.rows();
    }
    if (count == 0) throw Error(ErrorKind::NoNormalInstances, "sampled episodes contain no normal instances");

    const double inv = 1.0 / static_cast<double>(count);
    params.raw_center = raw_sum * inv;
    if (mode == Mode::WoNN) return params.raw_center;

    params.center = embed_sum * inv;
    guard_center(params.center.values());
    const std::size_t k = params.projected_center.cols();
    for (std::size_t i = 0; i < k; ++i) params.projected_center[i] = params.center[i];
    guard_center(params.projected_center.values());
    return params.center;
}

}  // namespace eigmeta::model
