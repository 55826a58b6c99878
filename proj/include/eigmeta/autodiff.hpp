#pragma once

// Reverse-mode differentiation over Matrix values.
//
// A Tape records nodes in creation order; node ids are therefore a
// topological order and backward() walks them in reverse. Each op stores a
// closure that reads its own gradient and accumulates into its parents.

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "eigmeta/matrix.hpp"

namespace eigmeta::ad {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    const Matrix& grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    double scalar() const;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Matrix value, bool requires_grad = true);
    Var constant(Matrix value) { return leaf(std::move(value), false); }

    // Records an op. `backward` is dropped when no parent needs a gradient.
    Var push(Matrix value, std::span<const Var> parents, Backward backward);

    void backward(Var loss);

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    // Gradient of a node; all-zero when backward never reached it.
    const Matrix& grad(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    // Adds `delta` into the gradient of node `id` if it requires one.
    void accumulate(std::size_t id, const Matrix& delta);

    std::size_t size() const noexcept { return nodes_.size(); }

    // Diagnostics raised by the eigen-derivative rule during backward().
    std::size_t clamped_gaps() const noexcept { return clamped_gaps_; }
    void note_clamped_gaps(std::size_t n) noexcept { clamped_gaps_ += n; }

    // Active/inactive flag of every rectifier input, in creation order. Two
    // forward passes with equal patterns lie in the same smooth piece.
    const std::vector<bool>& activation_pattern() const noexcept { return activation_pattern_; }
    void note_activations(const Matrix& input);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
    std::size_t clamped_gaps_ = 0;
    std::vector<bool> activation_pattern_;
    mutable Matrix zero_;
};

// --- elementary ops --------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
// a (n x k) plus a broadcast row (1 x k).
Var add_row(Var a, Var row);
Var sub_row(Var a, Var row);
// a times a 1 x 1 scalar node.
Var scalar_mul(Var a, Var s);
// a + s * I for square a and 1 x 1 s.
Var add_scaled_identity(Var a, Var s);

Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var square(Var a);

Var sum(Var a);
Var trace(Var a);
// Column means as a 1 x k row.
Var mean_rows(Var a);
Var repeat_rows(Var row, std::size_t n);
Var concat_cols(Var a, Var b);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
// Squared Euclidean norm of every row, as an n x 1 column.
Var row_sq_norm(Var a);
// v / ||v||_F.
Var normalize(Var v);

// Inverted dropout: keeps each entry with probability 1 - rate and scales
// kept entries by 1 / (1 - rate). Identity when !training or rate == 0.
Var dropout(Var x, double rate, bool training, std::mt19937_64& rng);

// --- linear-algebra ops ----------------------------------------------------

Var cholesky(Var a);
Var tri_solve(Var lower, Var b, bool transposed = false);

struct TopEigen {
    Var value;   // 1 x 1
    Var vector;  // n x 1, unit norm, sign-fixed
};
// Largest eigenpair of a symmetric matrix, differentiable through the full
// eigensystem.
TopEigen eig_top(Var a);

// Top generalized eigenpair of S_A w = lambda S_N w by Cholesky reduction.
// The vector is renormalized to unit length and sign-fixed.
TopEigen gen_eig_top(Var scatter_a, Var scatter_n);

}  // namespace eigmeta::ad
