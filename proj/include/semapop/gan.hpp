#pragma once

#include "semapop/checkpoint.hpp"
#include "semapop/conditioning.hpp"
#include "semapop/embedding.hpp"
#include "semapop/marginal.hpp"
#include "semapop/population.hpp"

#include <functional>
#include <string>
#include <vector>

namespace semapop {

enum class GCond { Film, Concat };
enum class DCond { Projection, Film };
enum class FilmPosition { PostActivation, PreActivation };

std::string to_string(GCond g);
std::string to_string(DCond d);
std::string to_string(FilmPosition p);
GCond g_cond_from_string(const std::string& s);
DCond d_cond_from_string(const std::string& s);
FilmPosition film_position_from_string(const std::string& s);

struct GanTrainingConfig {
    double lambda_gp = 10.0;
    double lambda_m = 0.4;
    double lr_g = 2e-5;
    double lr_d = 2e-5;
    int n_critic = 5;
    Index noise_dim = 128;
    Index batch_size = 512;
    int steps = 20000;
    double gumbel_tau = 0.66;
    GCond g_cond = GCond::Film;
    DCond d_cond = DCond::Projection;
    bool marg_reg = true;
    FilmPosition film_position = FilmPosition::PostActivation;
    Index cond_dim = 128;
    Index adapter_hidden = 1024;
    std::vector<Index> gen_hidden = {256, 512, 256};
    std::vector<Index> critic_hidden = {256, 512, 256};
    double adapter_dropout = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double marg_eps = 1e-8;
    int checkpoint_every = 0; // 0 = final checkpoint only
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static GanTrainingConfig from_json(const std::string& text);
};

// FiLM-conditioned generator over [z; c] with one head per schema variable.
struct GeneratorParams {
    AdapterParams adapter;
    std::vector<nn::Affine> hidden;
    std::vector<FiLMLayerParams> film; // one per hidden layer in film mode
    std::vector<nn::Affine> heads;     // schema order
    std::vector<AttrKind> head_kinds;
    std::vector<Index> head_widths;
    GCond g_cond = GCond::Film;
    FilmPosition film_position = FilmPosition::PostActivation;
    Index noise_dim = 128;

    static GeneratorParams init(const AttributeSchema& schema, Index embed_dim,
                                const GanTrainingConfig& cfg, Rng& rng);
    void collect(std::vector<Matrix*>& out);
    void append_tensors(nn::NamedTensors& out);
    Index encoded_width() const;
};

// Projection critic D(x, e) = h(x) + <phi(x), psi(adapter(e))>, or a
// FiLM-conditioned trunk with a scalar head in the film ablation mode.
struct CriticParams {
    AdapterParams adapter;
    std::vector<nn::Affine> trunk;
    nn::Affine head; // trunk_out -> 1
    nn::Affine proj; // cond_dim -> trunk_out (projection mode)
    std::vector<FiLMLayerParams> film; // film mode
    DCond d_cond = DCond::Projection;
    FilmPosition film_position = FilmPosition::PostActivation;

    static CriticParams init(const AttributeSchema& schema, Index embed_dim,
                             const GanTrainingConfig& cfg, Rng& rng);
    void collect(std::vector<Matrix*>& out);
    void append_tensors(nn::NamedTensors& out);
};

// Gumbel noise -log(-log(u)) for the categorical heads.
Matrix sample_gumbel(Index rows, Index cols, Rng& rng);

// Graph builders shared by training and the public ops. `c` is the
// conditioning batch (adapter output). When `apply_film` is false the FiLM
// layers are skipped entirely.
ad::Val generator_forward(nn::Binder& binder, ad::Val z, ad::Val c, const GeneratorParams& params,
                          const Matrix& gumbel, double tau, bool apply_film = true);
ad::Val critic_forward(nn::Binder& binder, ad::Val x, ad::Val c, const CriticParams& params,
                       bool apply_film = true);

// Categorical heads emit Gumbel-Softmax samples at temperature tau (soft
// simplex rows, or exact one-hots when hard); numerical heads emit
// standardized reals. Takes the conditioning batch c = adapt(e, ...).
EncodedBatch generate(const Matrix& z, const Matrix& c, const GeneratorParams& params, double tau,
                      bool hard, std::uint64_t seed);

// Projection-mode scores h(x) + <phi(x), psi(adapter(e))>, or the
// FiLM-conditioned scalar head; e is the raw embedding batch.
Vector critic_score(const EncodedBatch& x, const Matrix& e, const CriticParams& params);

// mean over rows of (||grad_x D(x_tilde, e)||_2 - 1)^2 with per-row
// interpolation weights drawn under seed.
double gradient_penalty(const EncodedBatch& x_real, const EncodedBatch& x_fake, const Matrix& e,
                        const CriticParams& params, std::uint64_t seed);

// (L_D, L_G) under cfg; marginal terms come from `mspec` and are omitted
// when cfg.marg_reg is false.
std::pair<double, double> wgan_losses(const EncodedBatch& x_real, const Matrix& e, const Matrix& z,
                                      const GeneratorParams& params_g, const CriticParams& params_d,
                                      const GanTrainingConfig& cfg, const MarginalSpec* mspec);

struct GanStepMetrics {
    int step = 0;
    double l_d = 0.0;
    double l_g = 0.0;
    double l_marg = 0.0;
    double gp = 0.0;
};

std::string gan_metrics_csv(const std::vector<GanStepMetrics>& metrics);

struct GanTrainResult {
    GeneratorParams generator;
    CriticParams critic;
    std::vector<GanStepMetrics> metrics;
};

using GanCheckpointHook =
    std::function<void(int step, const GeneratorParams&, const CriticParams&)>;

// Alternating WGAN-GP optimization: n_critic critic updates per generator
// update, Adam on both sides, fully deterministic given cfg.seed. Aborts
// with a diagnostic if any loss becomes non-finite.
GanTrainResult train_gan(const Population& train, const EmbeddingMatrix& embeddings,
                         const AttributeSchema& schema, const MarginalSpec& mspec,
                         const GanTrainingConfig& cfg, const GanCheckpointHook& hook = nullptr);

ModelCheckpoint gan_checkpoint(GanTrainResult& result, const AttributeSchema& schema,
                               const MarginalSpec& mspec, const GanTrainingConfig& cfg);
GeneratorParams generator_from_checkpoint(const ModelCheckpoint& ckpt);
CriticParams critic_from_checkpoint(const ModelCheckpoint& ckpt);

// One agent per embedding row: z ~ N(0, I) under seed, hard generation,
// hard decode through the checkpoint's schema.
Population sample_population(const ModelCheckpoint& ckpt, const EmbeddingMatrix& embeddings,
                             std::uint64_t seed);

} // namespace semapop
