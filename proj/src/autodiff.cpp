#include "semapop/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace semapop::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw std::logic_error(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) +
                           "x" + std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
                           "x" + std::to_string(b.cols()));
}

} // namespace

const Matrix& Val::v() const { return tape->value(id); }

double Val::scalar() const {
    const Matrix& m = v();
    if (m.rows() != 1 || m.cols() != 1) throw std::logic_error("scalar() on a non-1x1 node");
    return m(0, 0);
}

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Val Tape::leaf(Matrix value) { return {this, push({Op::Leaf, std::move(value)})}; }
Val Tape::constant(Matrix value) { return {this, push({Op::Const, std::move(value)})}; }

Val Tape::add(Val a, Val b) {
    if (a.v().rows() != b.v().rows() || a.v().cols() != b.v().cols())
        shape_error("add", a.v(), b.v());
    Node n{Op::Add, a.v() + b.v()};
    n.a = a.id;
    n.b = b.id;
    return {this, push(std::move(n))};
}

Val Tape::sub(Val a, Val b) {
    if (a.v().rows() != b.v().rows() || a.v().cols() != b.v().cols())
        shape_error("sub", a.v(), b.v());
    Node n{Op::Sub, a.v() - b.v()};
    n.a = a.id;
    n.b = b.id;
    return {this, push(std::move(n))};
}

Val Tape::neg(Val a) {
    Node n{Op::Neg, -a.v()};
    n.a = a.id;
    return {this, push(std::move(n))};
}

Val Tape::cmul(Val a, Val b) {
    if (a.v().rows() != b.v().rows() || a.v().cols() != b.v().cols())
        shape_error("cmul", a.v(), b.v());
    Node n{Op::CMul, a.v().cwiseProduct(b.v())};
    n.a = a.id;
    n.b = b.id;
    return {this, push(std::move(n))};
}

Val Tape::cdiv(Val a, Val b) {
    if (a.v().rows() != b.v().rows() || a.v().cols() != b.v().cols())
        shape_error("cdiv", a.v(), b.v());
    Node n{Op::CDiv, a.v().cwiseQuotient(b.v())};
    n.a = a.id;
    n.b = b.id;
    return {this, push(std::move(n))};
}

Val Tape::matmul(Val a, Val b) {
    if (a.v().cols() != b.v().rows()) shape_error("matmul", a.v(), b.v());
    Node n{Op::MatMul, Matrix(a.v().rows(), b.v().cols())};
    n.value.noalias() = a.v() * b.v();
    n.a = a.id;
    n.b = b.id;
    return {this, push(std::move(n))};
}

Val Tape::transpose(Val a) {
    Node n{Op::Transpose, a.v().transpose()};
    n.a = a.id;
    return {this, push(std::move(n))};
}

Val Tape::scale(Val a, double k) {
    Node n{Op::Scale, a.v() * k};
    n.a = a.id;
    n.s0 = k;
    return {this, push(std::move(n))};
}

Val Tape::relu(Val a) {
    Node n{Op::Relu, a.v().cwiseMax(0.0)};
    n.a = a.id;
    return {this, push(std::move(n))};
}

Val Tape::exp(Val a) {
    Node n{Op::Exp, a.v().array().exp().matrix()};
    n.a = a.id;
    return {this, push(std::move(n))};
}

Val Tape::log(Val a) {
    Node n{Op::Log, a.v().array().log().matrix()};
    n.a = a.id;
    return {this, push(std::move(n))};
}

Val Tape::sqrt(Val a) {
    Node n{Op::Sqrt, a.v().array().sqrt().matrix()};
    n.a = a.id;
    return {this, push(std::move(n))};
}

Val Tape::clamp(Val a, double lo, double hi) {
    Node n{Op::Clamp, a.v().cwiseMax(lo).cwiseMin(hi)};
    n.a = a.id;
    n.s0 = lo;
    n.s1 = hi;
    return {this, push(std::move(n))};
}

Val Tape::row_sums(Val a) {
    Node n{Op::RowSums, a.v().rowwise().sum()};
    n.a = a.id;
    return {this, push(std::move(n))};
}

Val Tape::col_sums(Val a) {
    Node n{Op::ColSums, a.v().colwise().sum()};
    n.a = a.id;
    return {this, push(std::move(n))};
}

Val Tape::sum_all(Val a) {
    Node n{Op::SumAll, Matrix::Constant(1, 1, a.v().sum())};
    n.a = a.id;
    return {this, push(std::move(n))};
}

Val Tape::broadcast_rows(Val a, Index rows) {
    if (a.v().rows() != 1) throw std::logic_error("broadcast_rows expects a row vector");
    Node n{Op::BroadcastRows, a.v().replicate(rows, 1)};
    n.a = a.id;
    n.i0 = rows;
    return {this, push(std::move(n))};
}

Val Tape::broadcast_cols(Val a, Index cols) {
    if (a.v().cols() != 1) throw std::logic_error("broadcast_cols expects a column vector");
    Node n{Op::BroadcastCols, a.v().replicate(1, cols)};
    n.a = a.id;
    n.i0 = cols;
    return {this, push(std::move(n))};
}

Val Tape::broadcast_scalar(Val a, Index rows, Index cols) {
    if (a.v().rows() != 1 || a.v().cols() != 1)
        throw std::logic_error("broadcast_scalar expects a 1x1 value");
    Node n{Op::BroadcastScalar, Matrix::Constant(rows, cols, a.v()(0, 0))};
    n.a = a.id;
    n.i0 = rows;
    n.i1 = cols;
    return {this, push(std::move(n))};
}

Val Tape::block(Val a, Index r0, Index c0, Index rows, Index cols) {
    if (r0 < 0 || c0 < 0 || r0 + rows > a.v().rows() || c0 + cols > a.v().cols())
        throw std::logic_error("block out of range");
    Node n{Op::Block, a.v().block(r0, c0, rows, cols)};
    n.a = a.id;
    n.i0 = r0;
    n.i1 = c0;
    n.i2 = rows;
    n.i3 = cols;
    return {this, push(std::move(n))};
}

Val Tape::pad_zero(Val a, Index rows, Index cols, Index r0, Index c0) {
    Node n{Op::PadZero, Matrix::Zero(rows, cols)};
    n.value.block(r0, c0, a.v().rows(), a.v().cols()) = a.v();
    n.a = a.id;
    n.i0 = r0;
    n.i1 = c0;
    return {this, push(std::move(n))};
}

Val Tape::hcat(Val a, Val b) {
    if (a.v().rows() != b.v().rows()) shape_error("hcat", a.v(), b.v());
    Node n{Op::HCat, Matrix(a.v().rows(), a.v().cols() + b.v().cols())};
    n.value << a.v(), b.v();
    n.a = a.id;
    n.b = b.id;
    n.i0 = a.v().cols();
    return {this, push(std::move(n))};
}

void Tape::accumulate(std::vector<int>& grad, int target, Val contribution) {
    if (grad[static_cast<std::size_t>(target)] < 0) {
        grad[static_cast<std::size_t>(target)] = contribution.id;
    } else {
        grad[static_cast<std::size_t>(target)] =
            add({this, grad[static_cast<std::size_t>(target)]}, contribution).id;
    }
}

void Tape::emit_backward(int node_id, int grad_id, std::vector<int>& grad) {
    const Node& n = nodes_[static_cast<std::size_t>(node_id)];
    const Val g{this, grad_id};
    const Val self{this, node_id};
    const Val a{this, n.a};
    const Val b{this, n.b};
    switch (n.op) {
    case Op::Leaf:
    case Op::Const:
        break;
    case Op::Add:
        accumulate(grad, n.a, g);
        accumulate(grad, n.b, g);
        break;
    case Op::Sub:
        accumulate(grad, n.a, g);
        accumulate(grad, n.b, neg(g));
        break;
    case Op::Neg:
        accumulate(grad, n.a, neg(g));
        break;
    case Op::CMul:
        accumulate(grad, n.a, cmul(g, b));
        accumulate(grad, n.b, cmul(g, a));
        break;
    case Op::CDiv: {
        const Val ga = cdiv(g, b);
        accumulate(grad, n.a, ga);
        accumulate(grad, n.b, neg(cmul(ga, self)));
        break;
    }
    case Op::MatMul:
        accumulate(grad, n.a, matmul(g, transpose(b)));
        accumulate(grad, n.b, matmul(transpose(a), g));
        break;
    case Op::Transpose:
        accumulate(grad, n.a, transpose(g));
        break;
    case Op::Scale:
        accumulate(grad, n.a, scale(g, n.s0));
        break;
    case Op::Relu: {
        const Val mask = constant((a.v().array() > 0.0).cast<double>().matrix());
        accumulate(grad, n.a, cmul(g, mask));
        break;
    }
    case Op::Exp:
        accumulate(grad, n.a, cmul(g, self));
        break;
    case Op::Log:
        accumulate(grad, n.a, cdiv(g, a));
        break;
    case Op::Sqrt:
        accumulate(grad, n.a, scale(cdiv(g, self), 0.5));
        break;
    case Op::Clamp: {
        const Val mask = constant(
            ((a.v().array() > n.s0) && (a.v().array() < n.s1)).cast<double>().matrix());
        accumulate(grad, n.a, cmul(g, mask));
        break;
    }
    case Op::RowSums:
        accumulate(grad, n.a, broadcast_cols(g, a.v().cols()));
        break;
    case Op::ColSums:
        accumulate(grad, n.a, broadcast_rows(g, a.v().rows()));
        break;
    case Op::SumAll:
        accumulate(grad, n.a, broadcast_scalar(g, a.v().rows(), a.v().cols()));
        break;
    case Op::BroadcastRows:
        accumulate(grad, n.a, col_sums(g));
        break;
    case Op::BroadcastCols:
        accumulate(grad, n.a, row_sums(g));
        break;
    case Op::BroadcastScalar:
        accumulate(grad, n.a, sum_all(g));
        break;
    case Op::Block:
        accumulate(grad, n.a, pad_zero(g, a.v().rows(), a.v().cols(), n.i0, n.i1));
        break;
    case Op::PadZero:
        accumulate(grad, n.a,
                   block(g, n.i0, n.i1, nodes_[static_cast<std::size_t>(n.a)].value.rows(),
                         nodes_[static_cast<std::size_t>(n.a)].value.cols()));
        break;
    case Op::HCat:
        accumulate(grad, n.a, block(g, 0, 0, n.value.rows(), n.i0));
        accumulate(grad, n.b, block(g, 0, n.i0, n.value.rows(), n.value.cols() - n.i0));
        break;
    }
}

std::vector<Val> Tape::gradients(Val output, const std::vector<Val>& wrt) {
    if (output.v().rows() != 1 || output.v().cols() != 1)
        throw std::logic_error("gradients: output must be a 1x1 scalar node");
    const int snapshot = static_cast<int>(nodes_.size());

    std::vector<char> needs(static_cast<std::size_t>(snapshot), 0);
    for (const Val& w : wrt) needs[static_cast<std::size_t>(w.id)] = 1;
    for (int i = 0; i < snapshot; ++i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if ((n.a >= 0 && needs[static_cast<std::size_t>(n.a)]) ||
            (n.b >= 0 && needs[static_cast<std::size_t>(n.b)]))
            needs[static_cast<std::size_t>(i)] = 1;
    }

    std::vector<int> grad(static_cast<std::size_t>(snapshot), -1);
    grad[static_cast<std::size_t>(output.id)] = constant(Matrix::Ones(1, 1)).id;
    for (int i = output.id; i >= 0; --i) {
        if (grad[static_cast<std::size_t>(i)] < 0 || !needs[static_cast<std::size_t>(i)]) continue;
        emit_backward(i, grad[static_cast<std::size_t>(i)], grad);
    }

    std::vector<Val> out;
    out.reserve(wrt.size());
    for (const Val& w : wrt) {
        const int gid = grad[static_cast<std::size_t>(w.id)];
        if (gid >= 0)
            out.push_back({this, gid});
        else
            out.push_back(constant(Matrix::Zero(w.v().rows(), w.v().cols())));
    }
    return out;
}

Val add_row_bias(Val x, Val bias) { return x.tape->add(x, x.tape->broadcast_rows(bias, x.rows())); }

Val softmax_rows(Val x) {
    Tape& t = *x.tape;
    const Val m = t.constant(Matrix(x.v().rowwise().maxCoeff())); // detached shift
    const Val shifted = t.sub(x, t.broadcast_cols(m, x.cols()));
    const Val e = t.exp(shifted);
    return t.cdiv(e, t.broadcast_cols(t.row_sums(e), x.cols()));
}

Val log_softmax_rows(Val x) {
    Tape& t = *x.tape;
    const Val m = t.constant(Matrix(x.v().rowwise().maxCoeff()));
    const Val shifted = t.sub(x, t.broadcast_cols(m, x.cols()));
    const Val lse = t.log(t.row_sums(t.exp(shifted)));
    return t.sub(shifted, t.broadcast_cols(lse, x.cols()));
}

Val mean_all(Val x) {
    return x.tape->scale(x.tape->sum_all(x), 1.0 / static_cast<double>(x.v().size()));
}

Val square(Val x) { return x.tape->cmul(x, x); }

Val add_scalar(Val x, double c) {
    return x.tape->add(x, x.tape->constant(Matrix::Constant(x.rows(), x.cols(), c)));
}

Val row_norms(Val x) { return x.tape->sqrt(x.tape->row_sums(square(x))); }

} // namespace semapop::ad
