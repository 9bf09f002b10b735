#pragma once

#include "semapop/checkpoint.hpp"
#include "semapop/conditioning.hpp"
#include "semapop/embedding.hpp"
#include "semapop/marginal.hpp"
#include "semapop/population.hpp"

#include <string>
#include <vector>

namespace semapop {

struct VaeTrainingConfig {
    double beta = 1.0;
    double lambda_m = 2.0;
    double lr = 2e-4;
    Index batch_size = 512;
    int epochs = 300;
    Index latent_dim = 128;
    Index cond_dim = 128;
    Index adapter_hidden = 1024;
    Index prior_hidden = 512;
    std::vector<Index> enc_hidden = {512, 512, 512};
    std::vector<Index> dec_hidden = {512, 512, 512};
    double dropout = 0.1;
    double adapter_dropout = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double marg_eps = 1e-8;
    double logvar_clamp = 7.0; // decoder continuous log-variance bound
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static VaeTrainingConfig from_json(const std::string& text);
};

// Prior-conditioned VAE: the encoder sees only encoded attributes, persona
// conditioning parameterizes the latent prior and modulates the decoder
// via FiLM.
struct VaeParams {
    AdapterParams adapter;
    std::vector<nn::Affine> encoder;
    nn::Affine enc_mu, enc_logvar;
    nn::Affine prior_l1;
    nn::Affine prior_mu, prior_logvar;
    std::vector<nn::Affine> decoder;
    std::vector<FiLMLayerParams> dec_film;
    std::vector<nn::Affine> cat_heads; // categorical vars in schema order
    nn::Affine cont_mu, cont_logvar;   // joint heads over numerical vars
    std::vector<AttrKind> var_kinds;   // schema order
    std::vector<Index> var_widths;
    Index latent_dim = 128;

    static VaeParams init(const AttributeSchema& schema, Index embed_dim,
                          const VaeTrainingConfig& cfg, Rng& rng);
    void collect(std::vector<Matrix*>& out);
    void append_tensors(nn::NamedTensors& out);
    Index n_categorical() const;
    Index n_numerical() const;
};

// Per-row diagonal Gaussian posterior parameters; the conditioning input
// never reaches the encoder.
std::pair<Matrix, Matrix> encode_posterior(const EncodedBatch& x, const VaeParams& params);

// Conditional latent prior parameters as a function of the conditioning
// vector batch.
std::pair<Matrix, Matrix> conditional_prior(const Matrix& c, const VaeParams& params);

// Closed-form diagonal-Gaussian KL, summed over dims, averaged over batch.
double gaussian_kl(const Matrix& mu, const Matrix& logvar, const Matrix& mu_p,
                   const Matrix& logvar_p);

struct VaeLossBreakdown {
    double total = 0.0;
    double cont_rec = 0.0;
    double cat_rec = 0.0;
    double kl = 0.0;
    double marg = 0.0;
};

// Reparameterized training objective with term breakdown; epsilon is drawn
// under seed. Marginal terms read the reconstruction path's relaxed
// outputs and are skipped when mspec is null.
VaeLossBreakdown vae_loss(const EncodedBatch& x, const Matrix& c, const VaeParams& params,
                          const VaeTrainingConfig& cfg, const MarginalSpec* mspec,
                          std::uint64_t seed);

// Per-step noise for one training batch.
struct VaeNoise {
    Matrix epsilon;                // batch x latent
    std::vector<Matrix> enc_masks; // dropout, empty in inference
    std::vector<Matrix> dec_masks;
    Matrix adapter_mask;           // empty in inference
};

VaeNoise make_vae_noise(const VaeParams& params, const VaeTrainingConfig& cfg, Index batch,
                        Rng& rng, bool training);

struct VaeLossVals {
    ad::Val total, cont_rec, cat_rec, kl, marg;
};

// Differentiable loss graph used by training and gradient checks; c is a
// node on the same tape (the adapter output during training).
VaeLossVals vae_loss_graph(nn::Binder& binder, const Matrix& x_encoded, ad::Val c,
                           const VaeParams& params, const VaeTrainingConfig& cfg,
                           const MarginalSpec* mspec, const VaeNoise& noise);

// Decoder forward from latent z: relaxed categorical blocks (softmax) and
// predicted continuous means, in encoded layout.
Matrix vae_decode(const Matrix& z, const Matrix& c, const VaeParams& params,
                  bool apply_film = true);

struct VaeEpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double cont_rec = 0.0;
    double cat_rec = 0.0;
    double kl = 0.0;
    double marg = 0.0;
};

std::string vae_metrics_csv(const std::vector<VaeEpochMetrics>& metrics);

struct VaeTrainResult {
    VaeParams params;
    std::vector<VaeEpochMetrics> metrics;
};

// Epoch loop over seed-shuffled mini-batches with Adam; deterministic
// given cfg.seed.
VaeTrainResult train_vae(const Population& train, const EmbeddingMatrix& embeddings,
                         const AttributeSchema& schema, const MarginalSpec& mspec,
                         const VaeTrainingConfig& cfg);

ModelCheckpoint vae_checkpoint(VaeTrainResult& result, const AttributeSchema& schema,
                               const MarginalSpec& mspec, const VaeTrainingConfig& cfg);
VaeParams vae_from_checkpoint(const ModelCheckpoint& ckpt);

// z ~ prior(c) under seed, FiLM-conditioned decode, hard decode to agents.
Population sample_vae(const ModelCheckpoint& ckpt, const EmbeddingMatrix& embeddings,
                      std::uint64_t seed);

} // namespace semapop
