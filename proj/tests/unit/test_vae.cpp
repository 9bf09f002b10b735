#include "doctest.h"

#include "helpers.hpp"

#include "semapop/toy.hpp"
#include "semapop/vae.hpp"

#include <cmath>
#include <numbers>

using namespace semapop;
using testing::finite_difference;
using testing::max_relative_error;

namespace {

VaeTrainingConfig tiny_config() {
    VaeTrainingConfig cfg;
    cfg.latent_dim = 5;
    cfg.cond_dim = 4;
    cfg.adapter_hidden = 8;
    cfg.prior_hidden = 6;
    cfg.enc_hidden = {8};
    cfg.dec_hidden = {8};
    cfg.batch_size = 32;
    cfg.epochs = 2;
    cfg.lr = 1e-3;
    cfg.seed = 3;
    return cfg;
}

struct Fixture {
    ToyJointSpec toy = toy_travel_spec();
    AttributeSchema schema;
    Population train_pop;
    EmbeddingMatrix emb;
    MarginalSpec mspec;

    Fixture() {
        train_pop = make_toy_population(toy, 150, 23);
        schema = fit_schema_stats(toy.schema(), train_pop);
        mspec = build_marginal_spec(train_pop, schema, 4);
        Rng rng(24);
        emb.matrix = rng.normal_matrix(train_pop.n(), 9);
    }
};

} // namespace

TEST_CASE("gaussian_kl identities and non-negativity") {
    Rng rng(1);
    const Matrix mu = rng.normal_matrix(4, 6);
    const Matrix logvar = rng.normal_matrix(4, 6);
    CHECK(gaussian_kl(mu, logvar, mu, logvar) == 0.0);

    // one dimension, N(0,1) vs N(1,1): (mu difference)^2 / 2 = 0.5
    const Matrix zero = Matrix::Zero(1, 1);
    const Matrix one = Matrix::Ones(1, 1);
    CHECK(gaussian_kl(zero, zero, one, zero) == doctest::Approx(0.5).epsilon(1e-15));

    for (int rep = 0; rep < 100; ++rep) {
        const Matrix a = rng.normal_matrix(3, 5);
        const Matrix b = rng.normal_matrix(3, 5);
        const Matrix c = rng.normal_matrix(3, 5);
        const Matrix d = rng.normal_matrix(3, 5);
        CHECK(gaussian_kl(a, b, c, d) >= 0.0);
    }
    CHECK_THROWS(gaussian_kl(zero, zero, one, Matrix::Zero(2, 1)));
}

TEST_CASE("posterior and prior shapes; defaults carry the published values") {
    Fixture f;
    VaeTrainingConfig defaults;
    CHECK(defaults.beta == 1.0);
    CHECK(defaults.lambda_m == 2.0);
    CHECK(defaults.lr == 2e-4);
    CHECK(defaults.latent_dim == 128);
    CHECK(defaults.batch_size == 512);
    CHECK(defaults.epochs == 300);
    CHECK(defaults.enc_hidden == std::vector<Index>{512, 512, 512});

    VaeTrainingConfig cfg = tiny_config();
    Rng rng(2);
    const VaeParams params = VaeParams::init(f.schema, f.emb.dim(), cfg, rng);
    const EncodedBatch x = encode(f.train_pop, f.schema);
    const auto [mu, logvar] = encode_posterior(x, params);
    CHECK(mu.rows() == f.train_pop.n());
    CHECK(mu.cols() == cfg.latent_dim);
    CHECK(logvar.cols() == cfg.latent_dim);
    CHECK(mu.allFinite());
    CHECK(logvar.allFinite());

    const Matrix c = adapt(f.emb.matrix, params.adapter, false, 0);
    const auto [mu_p, logvar_p] = conditional_prior(c, params);
    CHECK(mu_p.cols() == cfg.latent_dim);
    CHECK(logvar_p.cols() == cfg.latent_dim);

    // distinct conditioning vectors generally give distinct priors
    CHECK(mu_p.row(0) != mu_p.row(1));
}

TEST_CASE("zero-initialized prior net gives the standard normal prior") {
    Fixture f;
    VaeTrainingConfig cfg = tiny_config();
    Rng rng(4);
    VaeParams params = VaeParams::init(f.schema, f.emb.dim(), cfg, rng);
    params.prior_mu = nn::Affine::zeros(cfg.prior_hidden, cfg.latent_dim);
    params.prior_logvar = nn::Affine::zeros(cfg.prior_hidden, cfg.latent_dim);
    const Matrix c = adapt(f.emb.matrix.topRows(3), params.adapter, false, 0);
    const auto [mu_p, logvar_p] = conditional_prior(c, params);
    CHECK(mu_p.isZero());
    CHECK(logvar_p.isZero());
}

TEST_CASE("perfect reconstruction at unit variance costs 0.5 log(2 pi) per dim") {
    // one numerical attribute, decoder pinned to mean 0 / logvar 0, input 0
    AttributeSchema schema;
    AttributeSpec s;
    s.name = "X";
    s.kind = AttrKind::Numerical;
    s.stats = NumericStats{0.0, 1.0, -5.0, 5.0};
    schema.specs = {s};

    VaeTrainingConfig cfg = tiny_config();
    cfg.beta = 0.0;
    cfg.lambda_m = 0.0;
    Rng rng(5);
    VaeParams params = VaeParams::init(schema, 4, cfg, rng);
    params.cont_mu = nn::Affine::zeros(params.cont_mu.in(), 1);
    params.cont_logvar = nn::Affine::zeros(params.cont_logvar.in(), 1);

    EncodedBatch x;
    x.matrix = Matrix::Zero(6, 1);
    const Matrix c = Matrix::Zero(6, cfg.cond_dim);
    const VaeLossBreakdown loss = vae_loss(x, c, params, cfg, nullptr, 7);
    CHECK(loss.cont_rec == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
    CHECK(loss.cat_rec == 0.0);
    CHECK(loss.total == doctest::Approx(loss.cont_rec).epsilon(1e-12)); // beta = lambda_m = 0
}

TEST_CASE("vae_loss terms assemble with beta and lambda_m") {
    Fixture f;
    VaeTrainingConfig cfg = tiny_config();
    Rng rng(6);
    const VaeParams params = VaeParams::init(f.schema, f.emb.dim(), cfg, rng);
    EncodedBatch x = encode(f.train_pop, f.schema);
    x.matrix = x.matrix.topRows(16).eval();
    const Matrix c = adapt(f.emb.matrix.topRows(16), params.adapter, false, 0);

    cfg.beta = 1.0;
    cfg.lambda_m = 2.0;
    const VaeLossBreakdown full = vae_loss(x, c, params, cfg, &f.mspec, 9);
    CHECK(full.total == doctest::Approx(full.cont_rec + full.cat_rec + full.kl + 2.0 * full.marg)
                            .epsilon(1e-12));

    cfg.beta = 0.0;
    cfg.lambda_m = 0.0;
    const VaeLossBreakdown bare = vae_loss(x, c, params, cfg, &f.mspec, 9);
    CHECK(bare.total == doctest::Approx(bare.cont_rec + bare.cat_rec).epsilon(1e-12));
    CHECK(bare.kl == doctest::Approx(full.kl).epsilon(1e-12)); // terms logged regardless
}

TEST_CASE("vae_loss gradients match finite differences on a micro network") {
    Fixture f;
    VaeTrainingConfig cfg = tiny_config();
    cfg.enc_hidden = {4};
    cfg.dec_hidden = {4};
    cfg.latent_dim = 3;
    cfg.cond_dim = 2;
    cfg.adapter_hidden = 3;
    cfg.prior_hidden = 3;
    Rng rng(7);
    VaeParams params = VaeParams::init(f.schema, f.emb.dim(), cfg, rng);
    for (auto& layer : params.dec_film) {
        layer.gamma = nn::Affine::head(cfg.cond_dim, layer.gamma.out(), rng);
        layer.beta = nn::Affine::head(cfg.cond_dim, layer.beta.out(), rng);
    }

    EncodedBatch x = encode(f.train_pop, f.schema);
    const Matrix x_b = x.matrix.topRows(6);
    const Matrix e_b = f.emb.matrix.topRows(6);
    Rng noise_rng(8);
    VaeNoise noise = make_vae_noise(params, cfg, 6, noise_rng, false); // fixed epsilon

    auto build = [&](ad::Tape& tape, nn::Binder& binder) {
        const ad::Val c = adapt_graph(binder, tape.constant(e_b), params.adapter, nullptr);
        return vae_loss_graph(binder, x_b, c, params, cfg, &f.mspec, noise).total;
    };

    std::vector<Matrix*> theta;
    params.collect(theta);
    ad::Tape tape;
    nn::Binder binder(tape, true);
    const ad::Val loss = build(tape, binder);
    const auto grads = tape.gradients(loss, binder.bound(theta));

    auto eval = [&]() {
        ad::Tape t2;
        nn::Binder b2(t2, true);
        return build(t2, b2).scalar();
    };
    for (std::size_t pi = 0; pi < theta.size(); ++pi) {
        const Matrix fd = finite_difference(*theta[pi], eval);
        INFO("vae parameter block ", pi);
        CHECK(max_relative_error(grads[pi].v(), fd, 1e-3) < 1e-3);
    }
}

TEST_CASE("train_vae: zero epochs, determinism, finite logged terms") {
    Fixture f;
    VaeTrainingConfig cfg = tiny_config();
    cfg.epochs = 0;
    VaeTrainResult init = train_vae(f.train_pop, f.emb, f.schema, f.mspec, cfg);
    CHECK(init.metrics.empty());

    cfg.epochs = 3;
    VaeTrainResult r1 = train_vae(f.train_pop, f.emb, f.schema, f.mspec, cfg);
    VaeTrainResult r2 = train_vae(f.train_pop, f.emb, f.schema, f.mspec, cfg);
    REQUIRE(r1.metrics.size() == 3);
    CHECK(vae_metrics_csv(r1.metrics) == vae_metrics_csv(r2.metrics));
    CHECK(vae_metrics_csv(r1.metrics).rfind("epoch,loss,", 0) == 0);
    for (const auto& m : r1.metrics) {
        CHECK(std::isfinite(m.loss));
        CHECK(std::isfinite(m.kl));
    }
}

TEST_CASE("sample_vae yields one valid agent per embedding row, deterministically") {
    Fixture f;
    VaeTrainingConfig cfg = tiny_config();
    VaeTrainResult r = train_vae(f.train_pop, f.emb, f.schema, f.mspec, cfg);
    ModelCheckpoint ckpt = vae_checkpoint(r, f.schema, f.mspec, cfg);
    CHECK(ckpt.backbone == "vae");

    EmbeddingMatrix eval_emb;
    eval_emb.matrix = f.emb.matrix.topRows(29);
    const Population pop = sample_vae(ckpt, eval_emb, 31);
    CHECK(pop.n() == 29);
    validate_population(pop, f.schema);
    const Population pop2 = sample_vae(ckpt, eval_emb, 31);
    CHECK(pop.values == pop2.values);
}

TEST_CASE("decoder forward with identity film equals the unconditioned pass") {
    Fixture f;
    VaeTrainingConfig cfg = tiny_config();
    Rng rng(12);
    const VaeParams params = VaeParams::init(f.schema, f.emb.dim(), cfg, rng); // film at identity
    const Matrix z = rng.normal_matrix(10, cfg.latent_dim);
    const Matrix c = rng.normal_matrix(10, cfg.cond_dim);
    const Matrix with_film = vae_decode(z, c, params, true);
    const Matrix without = vae_decode(z, c, params, false);
    CHECK(with_film == without); // bit-identical at initialization
}
