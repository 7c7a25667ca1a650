#pragma once

#include <vector>

#include "ldlt/activation.hpp"
#include "ldlt/linalg.hpp"
#include "ldlt/matrix.hpp"

namespace ldlt {

/// Reverse-mode tape over dense matrix ops. Covers exactly what gradient
/// descent through the materialized weights needs, including Cholesky
/// factorizations and triangular solves, so the Lipschitz structure is
/// differentiated exactly rather than approximated.
class Tape {
public:
    using Id = int;

    Id leaf(const Matrix& v);
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id scale(Id a, double s);
    Id matmul(Id a, Id b);    // A B
    Id matmul_tn(Id a, Id b); // A^T B
    Id matmul_nt(Id a, Id b); // A B^T
    Id gram_tn(Id w);         // W^T W
    Id gram_nt(Id w);         // W W^T
    Id add_scaled_identity(Id a, double s);
    Id cholesky(Id a); // upper factor of a symmetric PD input
    /// X = B op(R)^{-1}, op(R) = R or R^T for an upper-triangular R.
    Id solve_right(Id b, Id r, bool transpose);
    /// X = op(R)^{-1} B.
    Id solve_left(Id r, Id b, bool transpose);
    Id add_bias(Id a, Id bias); // bias is rows x 1, broadcast over columns
    Id activation(Id a, const ActivationSpec& spec);
    /// Batch mean of w_{y_i} * (logsumexp(z_i) - z_{y_i, i}) over columns i.
    /// Returns a 1x1 node.
    Id weighted_cross_entropy(Id logits, const std::vector<int>& labels,
                              const std::vector<double>& class_weights);

    const Matrix& value(Id id) const { return nodes_[id].value; }
    int size() const { return static_cast<int>(nodes_.size()); }

    /// Accumulates adjoints of every node reachable from the 1x1 output.
    void backward(Id output);
    /// Adjoint of a node after backward(); zeros if the node is unreachable.
    Matrix grad(Id id) const;

private:
    enum class Op {
        Leaf,
        Add,
        Sub,
        Scale,
        MatMul,
        MatMulTN,
        MatMulNT,
        GramTN,
        GramNT,
        AddScaledIdentity,
        Cholesky,
        SolveRight,
        SolveRightT,
        SolveLeft,
        SolveLeftT,
        AddBias,
        Activation,
        WeightedCE,
    };

    struct Node {
        Op op;
        Matrix value;
        Id a = -1;
        Id b = -1;
        double s = 0.0;
        Matrix aux; // activation slopes, or softmax probabilities for the loss
        std::vector<double> sample_weight;
        std::vector<int> labels;
    };

    Id push(Node n);
    void accumulate(Id id, const Matrix& g);

    std::vector<Node> nodes_;
    std::vector<Matrix> grads_;
};

} // namespace ldlt
