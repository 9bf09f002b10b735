#pragma once

#include "semapop/nn.hpp"
#include "semapop/types.hpp"

namespace semapop {

// Two affine layers with a rectifier between; dropout after the rectifier
// in training mode only. Maps persona embeddings to conditioning vectors.
struct AdapterParams {
    nn::Affine l1; // D_p -> hidden
    nn::Affine l2; // hidden -> D_c
    double dropout = 0.1;

    static AdapterParams init(Index embed_dim, Index hidden_dim, Index cond_dim, Rng& rng);

    Index in_dim() const { return l1.in(); }
    Index out_dim() const { return l2.out(); }
    void collect(std::vector<Matrix*>& out);
    void append_tensors(const std::string& prefix, nn::NamedTensors& out);
};

// Feature-wise affine modulation h' = (1 + gamma(c)) .* h + beta(c).
// Both maps start at exactly zero, so the layer is the identity at
// initialization.
struct FiLMLayerParams {
    nn::Affine gamma; // D_c -> F
    nn::Affine beta;  // D_c -> F

    static FiLMLayerParams identity(Index cond_dim, Index feature_dim);

    void collect(std::vector<Matrix*>& out);
    void append_tensors(const std::string& prefix, nn::NamedTensors& out);
};

// Row-batch forward passes.
Matrix adapt(const Matrix& e, const AdapterParams& params, bool training, std::uint64_t seed);
Matrix film(const Matrix& h, const Matrix& c, const FiLMLayerParams& params);
Matrix build_initial_hidden(const Matrix& z, const Matrix& c);

// Tape builders used inside training graphs. A null dropout mask means
// inference mode.
ad::Val adapt_graph(nn::Binder& binder, ad::Val e, const AdapterParams& params,
                    const Matrix* dropout_mask);
ad::Val film_graph(nn::Binder& binder, ad::Val h, ad::Val c, const FiLMLayerParams& params);

} // namespace semapop
