#include "eigmeta/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "eigmeta/errors.hpp"
#include "eigmeta/linalg.hpp"

namespace eigmeta::ad {

const Matrix& Var::value() const { return tape->value(id); }
const Matrix& Var::grad() const { return tape->grad(id); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.size() != 1) throw Error(ErrorKind::ShapeMismatch, "scalar() on a non-scalar node");
    return v[0];
}

Var Tape::leaf(Matrix value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, nullptr});
    return Var{this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) {
        if (p.tape != this) throw Error(ErrorKind::ShapeMismatch, "operands live on different tapes");
        needs = needs || nodes_[p.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Matrix{}, needs, needs ? std::move(backward) : nullptr});
    return Var{this, nodes_.size() - 1};
}

const Matrix& Tape::grad(std::size_t id) const {
    const Node& node = nodes_[id];
    if (!node.grad.empty() || node.value.empty()) return node.grad;
    zero_ = Matrix(node.value.rows(), node.value.cols());
    return zero_;
}

void Tape::accumulate(std::size_t id, const Matrix& delta) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.empty()) {
        node.grad = delta;
    } else {
        node.grad += delta;
    }
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw Error(ErrorKind::NonScalarLoss, "loss is not on this tape");
    if (nodes_[loss.id].value.size() != 1) {
        throw Error(ErrorKind::NonScalarLoss,
                    "loss has shape " + std::to_string(nodes_[loss.id].value.rows()) + "x" +
                        std::to_string(nodes_[loss.id].value.cols()));
    }
    for (Node& n : nodes_) n.grad = Matrix{};
    clamped_gaps_ = 0;
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Matrix(1, 1, 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (node.backward && !node.grad.empty()) node.backward(*this, id);
    }
}

void Tape::note_activations(const Matrix& input) {
    for (double v : input.values()) activation_pattern_.push_back(v > 0.0);
}

namespace {

Var unary(Var a, Matrix value, Tape::Backward fn) {
    const Var parents[] = {a};
    return a.tape->push(std::move(value), parents, std::move(fn));
}

Var binary(Var a, Var b, Matrix value, Tape::Backward fn) {
    const Var parents[] = {a, b};
    return a.tape->push(std::move(value), parents, std::move(fn));
}

void require_scalar(Var s, const char* what) {
    if (s.value().size() != 1) {
        throw Error(ErrorKind::ShapeMismatch, std::string(what) + " expects a 1x1 scalar");
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    return binary(a, b, eigmeta::matmul(a.value(), b.value()),
                  [a = a.id, b = b.id](Tape& t, std::size_t self) {
                      const Matrix& g = t.grad(self);
                      if (t.requires_grad(a)) t.accumulate(a, matmul_nt(g, t.value(b)));
                      if (t.requires_grad(b)) t.accumulate(b, matmul_tn(t.value(a), g));
                  });
}

Var transpose(Var a) {
    return unary(a, eigmeta::transpose(a.value()), [a = a.id](Tape& t, std::size_t self) {
        t.accumulate(a, eigmeta::transpose(t.grad(self)));
    });
}

Var add(Var a, Var b) {
    return binary(a, b, a.value() + b.value(), [a = a.id, b = b.id](Tape& t, std::size_t self) {
        t.accumulate(a, t.grad(self));
        t.accumulate(b, t.grad(self));
    });
}

Var sub(Var a, Var b) {
    return binary(a, b, a.value() - b.value(), [a = a.id, b = b.id](Tape& t, std::size_t self) {
        t.accumulate(a, t.grad(self));
        t.accumulate(b, t.grad(self) * -1.0);
    });
}

Var hadamard(Var a, Var b) {
    return binary(a, b, eigmeta::hadamard(a.value(), b.value()),
                  [a = a.id, b = b.id](Tape& t, std::size_t self) {
                      const Matrix& g = t.grad(self);
                      if (t.requires_grad(a)) t.accumulate(a, eigmeta::hadamard(g, t.value(b)));
                      if (t.requires_grad(b)) t.accumulate(b, eigmeta::hadamard(g, t.value(a)));
                  });
}

Var scale(Var a, double s) {
    return unary(a, a.value() * s,
                 [a = a.id, s](Tape& t, std::size_t self) { t.accumulate(a, t.grad(self) * s); });
}

Var add_row(Var a, Var row) {
    const Matrix& av = a.value();
    const Matrix& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw Error(ErrorKind::ShapeMismatch, "add_row expects a 1 x cols row");
    }
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv[j];
    return binary(a, row, std::move(out), [a = a.id, r = row.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        t.accumulate(a, g);
        if (t.requires_grad(r)) {
            Matrix gr(1, g.cols());
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
            t.accumulate(r, gr);
        }
    });
}

Var sub_row(Var a, Var row) { return add_row(a, scale(row, -1.0)); }

Var scalar_mul(Var a, Var s) {
    require_scalar(s, "scalar_mul");
    return binary(a, s, a.value() * s.scalar(), [a = a.id, s = s.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(a)) t.accumulate(a, g * t.value(s)[0]);
        if (t.requires_grad(s)) t.accumulate(s, Matrix(1, 1, dot(g.values(), t.value(a).values())));
    });
}

Var add_scaled_identity(Var a, Var s) {
    require_scalar(s, "add_scaled_identity");
    if (!a.value().is_square()) throw Error(ErrorKind::ShapeMismatch, "add_scaled_identity: square");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i) out(i, i) += s.scalar();
    return binary(a, s, std::move(out), [a = a.id, s = s.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        t.accumulate(a, g);
        if (t.requires_grad(s)) t.accumulate(s, Matrix(1, 1, eigmeta::trace(g)));
    });
}

Var relu(Var a) {
    a.tape->note_activations(a.value());
    Matrix out = a.value();
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return unary(a, std::move(out), [a = a.id](Tape& t, std::size_t self) {
        Matrix g = t.grad(self);
        const Matrix& x = t.value(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(x[i] > 0.0)) g[i] = 0.0;
        t.accumulate(a, g);
    });
}

Var sigmoid(Var a) {
    Matrix out = a.value();
    for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
    return unary(a, std::move(out), [a = a.id](Tape& t, std::size_t self) {
        Matrix g = t.grad(self);
        const Matrix& y = t.value(self);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
        t.accumulate(a, g);
    });
}

Var exp(Var a) {
    Matrix out = a.value();
    for (double& v : out.values()) v = std::exp(v);
    return unary(a, std::move(out), [a = a.id](Tape& t, std::size_t self) {
        t.accumulate(a, eigmeta::hadamard(t.grad(self), t.value(self)));
    });
}

Var square(Var a) {
    Matrix out = eigmeta::hadamard(a.value(), a.value());
    return unary(a, std::move(out), [a = a.id](Tape& t, std::size_t self) {
        t.accumulate(a, eigmeta::hadamard(t.grad(self), t.value(a)) * 2.0);
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return unary(a, Matrix(1, 1, s), [a = a.id](Tape& t, std::size_t self) {
        const Matrix& x = t.value(a);
        t.accumulate(a, Matrix(x.rows(), x.cols(), t.grad(self)[0]));
    });
}

Var trace(Var a) {
    if (!a.value().is_square()) throw Error(ErrorKind::ShapeMismatch, "trace: square");
    return unary(a, Matrix(1, 1, eigmeta::trace(a.value())), [a = a.id](Tape& t, std::size_t self) {
        const std::size_t n = t.value(a).rows();
        t.accumulate(a, Matrix::identity(n) * t.grad(self)[0]);
    });
}

Var mean_rows(Var a) {
    const Matrix& x = a.value();
    if (x.rows() == 0) throw Error(ErrorKind::ShapeMismatch, "mean_rows of an empty matrix");
    Matrix out(1, x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x(i, j);
    out *= 1.0 / static_cast<double>(x.rows());
    return unary(a, std::move(out), [a = a.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const std::size_t n = t.value(a).rows();
        Matrix ga(n, g.cols());
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = g[j] * inv;
        t.accumulate(a, ga);
    });
}

Var repeat_rows(Var row, std::size_t n) {
    const Matrix& r = row.value();
    if (r.rows() != 1) throw Error(ErrorKind::ShapeMismatch, "repeat_rows expects a row");
    Matrix out(n, r.cols());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < r.cols(); ++j) out(i, j) = r[j];
    return unary(row, std::move(out), [r = row.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix gr(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
        t.accumulate(r, gr);
    });
}

Var concat_cols(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows()) throw Error(ErrorKind::ShapeMismatch, "concat_cols row counts");
    Matrix out(av.rows(), av.cols() + bv.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j);
        for (std::size_t j = 0; j < bv.cols(); ++j) out(i, av.cols() + j) = bv(i, j);
    }
    return binary(a, b, std::move(out), [a = a.id, b = b.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const std::size_t ca = t.value(a).cols();
        const std::size_t cb = t.value(b).cols();
        if (t.requires_grad(a)) {
            Matrix ga(g.rows(), ca);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
            t.accumulate(a, ga);
        }
        if (t.requires_grad(b)) {
            Matrix gb(g.rows(), cb);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
            t.accumulate(b, gb);
        }
    });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const Matrix& x = a.value();
    if (begin > end || end > x.rows()) throw Error(ErrorKind::ShapeMismatch, "slice_rows range");
    Matrix out(end - begin, x.cols());
    for (std::size_t i = begin; i < end; ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i - begin, j) = x(i, j);
    return unary(a, std::move(out), [a = a.id, begin](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& x = t.value(a);
        Matrix ga(x.rows(), x.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) ga(begin + i, j) = g(i, j);
        t.accumulate(a, ga);
    });
}

Var row_sq_norm(Var a) {
    const Matrix& x = a.value();
    Matrix out(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = dot(x.row_span(i), x.row_span(i));
    return unary(a, std::move(out), [a = a.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& x = t.value(a);
        Matrix ga(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) ga(i, j) = 2.0 * g[i] * x(i, j);
        t.accumulate(a, ga);
    });
}

Var normalize(Var v) {
    const double norm = frobenius_norm(v.value());
    if (!(norm > 0.0)) throw Error(ErrorKind::NumericalFailure, "normalize of a zero vector");
    return unary(v, v.value() * (1.0 / norm), [v = v.id, norm](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& y = t.value(self);
        const double proj = dot(y.values(), g.values());
        Matrix gv = g;
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = (g[i] - y[i] * proj) / norm;
        t.accumulate(v, gv);
    });
}

Var dropout(Var x, double rate, bool training, std::mt19937_64& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw Error(ErrorKind::Config, "dropout rate must lie in [0, 1)");
    }
    if (!training || rate == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    const double kept_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<Matrix>(x.rows(), x.cols());
    for (double& m : mask->values()) m = keep(rng) ? kept_scale : 0.0;
    Matrix out = eigmeta::hadamard(x.value(), *mask);
    return unary(x, std::move(out), [x = x.id, mask](Tape& t, std::size_t self) {
        t.accumulate(x, eigmeta::hadamard(t.grad(self), *mask));
    });
}

Var cholesky(Var a) {
    return unary(a, linalg::cholesky(a.value()), [a = a.id](Tape& t, std::size_t self) {
        t.accumulate(a, linalg::vjp_cholesky(t.value(self), t.grad(self)));
    });
}

Var tri_solve(Var lower, Var b, bool transposed) {
    return binary(lower, b, linalg::tri_solve(lower.value(), b.value(), transposed),
                  [l = lower.id, b = b.id, transposed](Tape& t, std::size_t self) {
                      auto adj = linalg::vjp_tri_solve(t.value(l), t.value(self), t.grad(self),
                                                       transposed);
                      t.accumulate(l, adj.lower);
                      t.accumulate(b, adj.rhs);
                  });
}

TopEigen eig_top(Var a) {
    auto eig = std::make_shared<linalg::Eigensystem>(linalg::sym_eig(a.value()));
    const std::size_t n = eig->size();
    if (n == 0) throw Error(ErrorKind::ShapeMismatch, "eig_top of an empty matrix");
    const std::size_t top = n - 1;

    Var value = unary(a, Matrix(1, 1, eig->values[top]),
                      [a = a.id, eig, top](Tape& t, std::size_t self) {
                          std::vector<double> cot(eig->size(), 0.0);
                          cot[top] = t.grad(self)[0];
                          t.accumulate(a, linalg::vjp_sym_eig(*eig, cot, Matrix{}).adjoint);
                      });

    Matrix u(n, 1);
    for (std::size_t i = 0; i < n; ++i) u[i] = eig->vectors(i, top);
    Var vector = unary(a, std::move(u), [a = a.id, eig, top](Tape& t, std::size_t self) {
        const std::size_t n = eig->size();
        Matrix cot(n, n);
        const Matrix& g = t.grad(self);
        for (std::size_t i = 0; i < n; ++i) cot(i, top) = g[i];
        auto vjp = linalg::vjp_sym_eig(*eig, {}, cot);
        t.note_clamped_gaps(vjp.clamped_gaps);
        t.accumulate(a, vjp.adjoint);
    });
    return TopEigen{value, vector};
}

TopEigen gen_eig_top(Var scatter_a, Var scatter_n) {
    Var lower = cholesky(scatter_n);
    Var half = tri_solve(lower, scatter_a);             // L^-1 S_A
    Var reduced = tri_solve(lower, transpose(half));    // L^-1 S_A L^-T
    TopEigen top = eig_top(reduced);
    Var w = normalize(tri_solve(lower, top.vector, /*transposed=*/true));
    std::vector<double> copy(w.value().values().begin(), w.value().values().end());
    if (linalg::fix_sign(copy) < 0.0) w = scale(w, -1.0);
    return TopEigen{top.value, w};
}

}  // namespace eigmeta::ad
