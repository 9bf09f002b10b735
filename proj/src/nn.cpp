#include "semapop/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace semapop::nn {

Affine Affine::zeros(Index in, Index out) {
    Affine a;
    a.W = Matrix::Zero(in, out);
    a.b = Matrix::Zero(1, out);
    return a;
}

Affine Affine::he(Index in, Index out, Rng& rng) {
    Affine a;
    a.W = rng.normal_matrix(in, out) * std::sqrt(2.0 / static_cast<double>(in));
    a.b = Matrix::Zero(1, out);
    return a;
}

Affine Affine::head(Index in, Index out, Rng& rng) {
    Affine a;
    a.W = rng.normal_matrix(in, out) * std::sqrt(1.0 / static_cast<double>(in));
    a.b = Matrix::Zero(1, out);
    return a;
}

ad::Val Binder::operator()(const Matrix& m) {
    auto it = ids_.find(&m);
    if (it != ids_.end()) return {tape_, it->second};
    ad::Val v = trainable_ ? tape_->leaf(m) : tape_->constant(m);
    ids_.emplace(&m, v.id);
    return v;
}

std::vector<ad::Val> Binder::bound(const std::vector<Matrix*>& params) const {
    std::vector<ad::Val> out;
    out.reserve(params.size());
    for (const Matrix* p : params) {
        auto it = ids_.find(p);
        if (it == ids_.end()) throw std::logic_error("parameter was never bound to the tape");
        out.push_back({tape_, it->second});
    }
    return out;
}

AffineRef bind(Binder& binder, const Affine& a) { return {binder(a.W), binder(a.b)}; }

ad::Val apply(const AffineRef& layer, ad::Val x) {
    return ad::add_row_bias(x.tape->matmul(x, layer.W), layer.b);
}

Matrix affine_forward(const Matrix& x, const Affine& a) {
    return (x * a.W).rowwise() + a.b.row(0);
}

Matrix dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
    Matrix m(rows, cols);
    const double keep = 1.0 - rate;
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    return m;
}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
    if (params.size() != grads.size()) throw std::logic_error("Adam: params/grads size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& g = grads[i];
        auto& st = state_[params[i]];
        if (st.m.size() == 0) {
            st.m = Matrix::Zero(p.rows(), p.cols());
            st.v = Matrix::Zero(p.rows(), p.cols());
        }
        st.m = cfg_.beta1 * st.m + (1.0 - cfg_.beta1) * g;
        st.v = cfg_.beta2 * st.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const Matrix m_hat = st.m / bc1;
        const Matrix v_hat = st.v / bc2;
        p.array() -= cfg_.lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
    }
}

} // namespace semapop::nn
