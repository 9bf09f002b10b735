#include "semapop/conditioning.hpp"

#include <stdexcept>

namespace semapop {

AdapterParams AdapterParams::init(Index embed_dim, Index hidden_dim, Index cond_dim, Rng& rng) {
    AdapterParams p;
    p.l1 = nn::Affine::he(embed_dim, hidden_dim, rng);
    p.l2 = nn::Affine::head(hidden_dim, cond_dim, rng);
    return p;
}

void AdapterParams::collect(std::vector<Matrix*>& out) {
    out.push_back(&l1.W);
    out.push_back(&l1.b);
    out.push_back(&l2.W);
    out.push_back(&l2.b);
}

void AdapterParams::append_tensors(const std::string& prefix, nn::NamedTensors& out) {
    nn::append_affine(out, prefix + ".l1", l1);
    nn::append_affine(out, prefix + ".l2", l2);
}

FiLMLayerParams FiLMLayerParams::identity(Index cond_dim, Index feature_dim) {
    FiLMLayerParams p;
    p.gamma = nn::Affine::zeros(cond_dim, feature_dim);
    p.beta = nn::Affine::zeros(cond_dim, feature_dim);
    return p;
}

void FiLMLayerParams::collect(std::vector<Matrix*>& out) {
    out.push_back(&gamma.W);
    out.push_back(&gamma.b);
    out.push_back(&beta.W);
    out.push_back(&beta.b);
}

void FiLMLayerParams::append_tensors(const std::string& prefix, nn::NamedTensors& out) {
    nn::append_affine(out, prefix + ".gamma", gamma);
    nn::append_affine(out, prefix + ".beta", beta);
}

Matrix adapt(const Matrix& e, const AdapterParams& params, bool training, std::uint64_t seed) {
    if (e.cols() != params.in_dim())
        throw std::runtime_error("adapter input dim " + std::to_string(e.cols()) +
                                 " does not match parameters (" +
                                 std::to_string(params.in_dim()) + ")");
    Matrix h = nn::affine_forward(e, params.l1).cwiseMax(0.0);
    if (training && params.dropout > 0.0) {
        Rng rng(Rng::derive(seed, "adapter_dropout"));
        h = h.cwiseProduct(nn::dropout_mask(h.rows(), h.cols(), params.dropout, rng));
    }
    return nn::affine_forward(h, params.l2);
}

Matrix film(const Matrix& h, const Matrix& c, const FiLMLayerParams& params) {
    if (c.cols() != params.gamma.in() || h.cols() != params.gamma.out())
        throw std::runtime_error("film dimension mismatch");
    const Matrix g = nn::affine_forward(c, params.gamma);
    const Matrix b = nn::affine_forward(c, params.beta);
    return ((Matrix::Ones(h.rows(), h.cols()) + g).cwiseProduct(h) + b);
}

Matrix build_initial_hidden(const Matrix& z, const Matrix& c) {
    if (z.rows() != c.rows()) throw std::runtime_error("noise/conditioning batch size mismatch");
    if (!z.allFinite() || !c.allFinite())
        throw std::runtime_error("non-finite inputs to build_initial_hidden");
    Matrix h(z.rows(), z.cols() + c.cols());
    h << z, c;
    return h;
}

ad::Val adapt_graph(nn::Binder& binder, ad::Val e, const AdapterParams& params,
                    const Matrix* dropout_mask) {
    ad::Tape& t = *e.tape;
    ad::Val h = t.relu(nn::apply(nn::bind(binder, params.l1), e));
    if (dropout_mask) h = t.cmul(h, t.constant(*dropout_mask));
    return nn::apply(nn::bind(binder, params.l2), h);
}

ad::Val film_graph(nn::Binder& binder, ad::Val h, ad::Val c, const FiLMLayerParams& params) {
    ad::Tape& t = *h.tape;
    const ad::Val g = nn::apply(nn::bind(binder, params.gamma), c);
    const ad::Val b = nn::apply(nn::bind(binder, params.beta), c);
    const ad::Val ones = t.constant(Matrix::Ones(h.rows(), h.cols()));
    return t.add(t.cmul(t.add(ones, g), h), b);
}

} // namespace semapop
