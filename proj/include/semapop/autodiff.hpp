#pragma once

#include "semapop/types.hpp"

#include <vector>

namespace semapop::ad {

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// Values are computed eagerly as nodes are appended to a Tape. Backward
// passes emit their gradient computations as new tape nodes, so gradients
// are themselves differentiable; the gradient-penalty term of the WGAN-GP
// critic objective differentiates a gradient of the critic with respect to
// its input, which requires exactly this create-graph behaviour.
//
// A Tape is built per training step and discarded afterwards.

enum class Op {
    Leaf,
    Const,
    Add,
    Sub,
    Neg,
    CMul,
    CDiv,
    MatMul,
    Transpose,
    Scale,
    Relu,
    Exp,
    Log,
    Sqrt,
    Clamp,
    RowSums,
    ColSums,
    SumAll,
    BroadcastRows,
    BroadcastCols,
    BroadcastScalar,
    Block,
    PadZero,
    HCat,
};

class Tape;

// Lightweight handle to a tape node.
struct Val {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& v() const;
    Index rows() const { return v().rows(); }
    Index cols() const { return v().cols(); }
    double scalar() const; // requires a 1x1 value
};

class Tape {
  public:
    Val leaf(Matrix value);
    Val constant(Matrix value);
    Val constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

    std::size_t size() const { return nodes_.size(); }
    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    // d(output)/d(each wrt node); output must be 1x1. Gradient nodes live on
    // this tape and may be differentiated again.
    std::vector<Val> gradients(Val output, const std::vector<Val>& wrt);

    // op builders (shape-checked, eagerly evaluated)
    Val add(Val a, Val b);
    Val sub(Val a, Val b);
    Val neg(Val a);
    Val cmul(Val a, Val b);
    Val cdiv(Val a, Val b);
    Val matmul(Val a, Val b);
    Val transpose(Val a);
    Val scale(Val a, double k);
    Val relu(Val a);
    Val exp(Val a);
    Val log(Val a);
    Val sqrt(Val a);
    Val clamp(Val a, double lo, double hi);
    Val row_sums(Val a);          // RxC -> Rx1
    Val col_sums(Val a);          // RxC -> 1xC
    Val sum_all(Val a);           // RxC -> 1x1
    Val broadcast_rows(Val a, Index rows); // 1xC -> rows x C
    Val broadcast_cols(Val a, Index cols); // Rx1 -> R x cols
    Val broadcast_scalar(Val a, Index rows, Index cols); // 1x1 -> rows x cols
    Val block(Val a, Index r0, Index c0, Index rows, Index cols);
    Val hcat(Val a, Val b);

  private:
    struct Node {
        Op op;
        Matrix value;
        int a = -1;
        int b = -1;
        double s0 = 0.0;
        double s1 = 0.0;
        Index i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    };

    int push(Node n);
    Val pad_zero(Val a, Index rows, Index cols, Index r0, Index c0);
    void emit_backward(int node_id, int grad_id, std::vector<int>& grad);
    void accumulate(std::vector<int>& grad, int target, Val contribution);

    std::vector<Node> nodes_;
};

// composite expressions
Val add_row_bias(Val x, Val bias);          // x + bias replicated down rows
Val softmax_rows(Val x);                    // stabilized row-wise softmax
Val log_softmax_rows(Val x);
Val mean_all(Val x);
Val square(Val x);
Val add_scalar(Val x, double c);
Val row_norms(Val x); // Euclidean norm of each row, Rx1

inline Val operator+(Val a, Val b) { return a.tape->add(a, b); }
inline Val operator-(Val a, Val b) { return a.tape->sub(a, b); }
inline Val operator-(Val a) { return a.tape->neg(a); }
inline Val operator*(Val a, double k) { return a.tape->scale(a, k); }
inline Val operator*(double k, Val a) { return a.tape->scale(a, k); }

} // namespace semapop::ad
