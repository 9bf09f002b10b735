#include "doctest.h"

#include "helpers.hpp"

#include "semapop/gan.hpp"
#include "semapop/io_util.hpp"
#include "semapop/toy.hpp"

#include <cmath>

using namespace semapop;
using testing::max_relative_error;

namespace {

GanTrainingConfig tiny_config() {
    GanTrainingConfig cfg;
    cfg.noise_dim = 6;
    cfg.cond_dim = 4;
    cfg.adapter_hidden = 8;
    cfg.gen_hidden = {8, 8};
    cfg.critic_hidden = {8, 8};
    cfg.batch_size = 16;
    cfg.steps = 2;
    cfg.n_critic = 2;
    cfg.lr_g = 1e-3;
    cfg.lr_d = 1e-3;
    cfg.seed = 5;
    return cfg;
}

struct Fixture {
    ToyJointSpec toy = toy_travel_spec();
    AttributeSchema schema;
    Population train_pop;
    EmbeddingMatrix emb;
    MarginalSpec mspec;

    Fixture() {
        train_pop = make_toy_population(toy, 200, 7);
        schema = fit_schema_stats(toy.schema(), train_pop);
        mspec = build_marginal_spec(train_pop, schema, 4);
        Rng rng(11);
        emb.matrix = quantize_f32(rng.normal_matrix(train_pop.n(), 10));
        emb.provenance = EmbeddingProvenance::External;
    }
};

// Critic computing exactly D(x) = w . x: the first trunk layer splits w x
// into positive and negative parts, later layers pass them through, and the
// head recombines them.
CriticParams linear_critic(const Vector& w, Index cond_dim, Index embed_dim) {
    CriticParams p;
    p.d_cond = DCond::Projection;
    Rng rng(3);
    p.adapter = AdapterParams::init(embed_dim, 4, cond_dim, rng);
    nn::Affine split = nn::Affine::zeros(w.size(), 2);
    split.W.col(0) = w;
    split.W.col(1) = -w;
    nn::Affine pass = nn::Affine::zeros(2, 2);
    pass.W.setIdentity();
    p.trunk = {split, pass};
    p.head = nn::Affine::zeros(2, 1);
    p.head.W(0, 0) = 1.0;
    p.head.W(1, 0) = -1.0;
    p.proj = nn::Affine::zeros(cond_dim, 2); // psi == 0
    return p;
}

} // namespace

TEST_CASE("generate: hard one-hots, soft simplex rows, determinism") {
    Fixture f;
    GanTrainingConfig cfg = tiny_config();
    Rng rng(9);
    GeneratorParams params = GeneratorParams::init(f.schema, f.emb.dim(), cfg, rng);
    const Matrix e = f.emb.matrix.topRows(12);
    const Matrix c = adapt(e, params.adapter, false, 0);
    const Matrix z = rng.normal_matrix(12, cfg.noise_dim);

    const EncodedBatch hard = generate(z, c, params, cfg.gumbel_tau, true, 21);
    Index off = 0;
    for (Index j = 0; j < f.schema.size(); ++j) {
        const Index w = f.schema.specs[static_cast<std::size_t>(j)].encoded_width();
        if (f.schema.specs[static_cast<std::size_t>(j)].kind == AttrKind::Categorical) {
            for (Index i = 0; i < 12; ++i) {
                const auto block = hard.matrix.row(i).segment(off, w);
                CHECK(block.sum() == 1.0);
                CHECK(block.maxCoeff() == 1.0);
                CHECK(block.minCoeff() == 0.0);
            }
        }
        off += w;
    }

    const EncodedBatch soft = generate(z, c, params, cfg.gumbel_tau, false, 21);
    validate_encoded(soft, f.schema);

    const EncodedBatch again = generate(z, c, params, cfg.gumbel_tau, true, 21);
    CHECK(again.matrix == hard.matrix);
    const EncodedBatch other = generate(z, c, params, cfg.gumbel_tau, true, 22);
    CHECK(other.matrix != hard.matrix);
}

TEST_CASE("soft samples collapse to the argmax one-hot as tau -> 0") {
    Fixture f;
    GanTrainingConfig cfg = tiny_config();
    Rng rng(10);
    GeneratorParams params = GeneratorParams::init(f.schema, f.emb.dim(), cfg, rng);
    const Matrix e = f.emb.matrix.topRows(8);
    const Matrix c = adapt(e, params.adapter, false, 0);
    const Matrix z = rng.normal_matrix(8, cfg.noise_dim);

    const EncodedBatch soft = generate(z, c, params, 0.01, false, 33);
    const EncodedBatch hard = generate(z, c, params, 0.01, true, 33);
    Index off = 0;
    for (Index j = 0; j < f.schema.size(); ++j) {
        const Index w = f.schema.specs[static_cast<std::size_t>(j)].encoded_width();
        if (f.schema.specs[static_cast<std::size_t>(j)].kind == AttrKind::Categorical) {
            for (Index i = 0; i < 8; ++i) {
                Index soft_arg = 0, hard_arg = 0;
                soft.matrix.row(i).segment(off, w).maxCoeff(&soft_arg);
                hard.matrix.row(i).segment(off, w).maxCoeff(&hard_arg);
                CHECK(soft_arg == hard_arg);
                CHECK(soft.matrix.row(i).segment(off, w).maxCoeff() > 0.99);
            }
        }
        off += w;
    }
}

TEST_CASE("concat mode carries conditioning only through the input") {
    Fixture f;
    GanTrainingConfig cfg = tiny_config();
    cfg.g_cond = GCond::Concat;
    Rng rng(12);
    GeneratorParams params = GeneratorParams::init(f.schema, f.emb.dim(), cfg, rng);
    CHECK(params.film.empty());
    const Matrix c1 = Matrix::Zero(4, cfg.cond_dim);
    const Matrix c2 = Matrix::Ones(4, cfg.cond_dim);
    const Matrix z = rng.normal_matrix(4, cfg.noise_dim);
    // different conditioning still changes outputs via [z; c]
    CHECK(generate(z, c1, params, 0.66, false, 1).matrix !=
          generate(z, c2, params, 0.66, false, 1).matrix);
}

TEST_CASE("projection critic fixture: h=5, phi=[1,2], psi=[3,4] scores 16") {
    CriticParams p;
    p.d_cond = DCond::Projection;
    Rng rng(4);
    p.adapter = AdapterParams::init(3, 4, 2, rng);
    nn::Affine trunk = nn::Affine::zeros(2, 2);
    trunk.W(0, 0) = 1.0;
    trunk.W(0, 1) = 2.0; // x = [1, 0] -> phi = [1, 2]
    p.trunk = {trunk};
    p.head = nn::Affine::zeros(2, 1);
    p.head.b(0, 0) = 5.0;
    p.proj = nn::Affine::zeros(2, 2);
    p.proj.b << 3.0, 4.0; // psi(c) == [3, 4] regardless of c

    EncodedBatch x;
    x.matrix.resize(1, 2);
    x.matrix << 1, 0;
    const Vector score = critic_score(x, Matrix::Random(1, 3), p);
    CHECK(score(0) == doctest::Approx(16.0).epsilon(1e-12));
}

TEST_CASE("zero projection head makes the critic unconditional") {
    Fixture f;
    GanTrainingConfig cfg = tiny_config();
    Rng rng(14);
    CriticParams params = CriticParams::init(f.schema, f.emb.dim(), cfg, rng);
    params.proj = nn::Affine::zeros(cfg.cond_dim, params.head.in());

    EncodedBatch x = encode(f.train_pop, f.schema);
    x.matrix = x.matrix.topRows(10).eval();
    const Matrix e1 = f.emb.matrix.topRows(10);
    const Matrix e2 = f.emb.matrix.middleRows(20, 10); // different embeddings
    const Vector s1 = critic_score(x, e1, params);
    const Vector s2 = critic_score(x, e2, params);
    CHECK(s1 == s2);
    CHECK(s1.allFinite());
}

TEST_CASE("film-mode critic responds to conditioning") {
    Fixture f;
    GanTrainingConfig cfg = tiny_config();
    cfg.d_cond = DCond::Film;
    Rng rng(15);
    CriticParams params = CriticParams::init(f.schema, f.emb.dim(), cfg, rng);
    // film starts at identity; give it nonzero maps so conditioning matters
    for (auto& layer : params.film) {
        layer.gamma = nn::Affine::he(cfg.cond_dim, layer.gamma.out(), rng);
        layer.beta = nn::Affine::he(cfg.cond_dim, layer.beta.out(), rng);
    }
    EncodedBatch x = encode(f.train_pop, f.schema);
    x.matrix = x.matrix.topRows(6).eval();
    const Vector s1 = critic_score(x, f.emb.matrix.topRows(6), params);
    const Vector s2 = critic_score(x, f.emb.matrix.middleRows(30, 6), params);
    CHECK(s1 != s2);
}

TEST_CASE("gradient penalty of unit- and triple-norm linear critics") {
    Rng rng(16);
    Vector w(5);
    w << 0.5, -0.5, 0.5, 0.3, std::sqrt(1.0 - 0.25 * 3 - 0.09);
    CHECK(w.norm() == doctest::Approx(1.0).epsilon(1e-12));

    const CriticParams unit = linear_critic(w, 4, 6);
    EncodedBatch a, b;
    a.matrix = rng.normal_matrix(32, 5);
    b.matrix = rng.normal_matrix(32, 5);
    const Matrix e = rng.normal_matrix(32, 6);
    CHECK(std::abs(gradient_penalty(a, b, e, unit, 3)) < 1e-6);

    const CriticParams triple = linear_critic((3.0 * w).eval(), 4, 6);
    CHECK(gradient_penalty(a, b, e, triple, 3) == doctest::Approx(4.0).epsilon(1e-6));

    // penalty is a mean of squares: non-negative for any critic
    GanTrainingConfig cfg = tiny_config();
    ToyJointSpec toy = toy_travel_spec();
    Population pop = make_toy_population(toy, 40, 2);
    auto schema = fit_schema_stats(toy.schema(), pop);
    CriticParams random_critic = CriticParams::init(schema, 6, cfg, rng);
    EncodedBatch xr = encode(pop, schema);
    EncodedBatch xf;
    xf.matrix = rng.normal_matrix(40, schema.encoded_width());
    CHECK(gradient_penalty(xr, xf, rng.normal_matrix(40, 6), random_critic, 9) >= 0.0);

    EncodedBatch short_batch;
    short_batch.matrix = rng.normal_matrix(8, 5);
    CHECK_THROWS(gradient_penalty(a, short_batch, e, unit, 1));
}

TEST_CASE("wgan_losses: cancellation, marginal-term removal, defaults") {
    // a purely numerical schema with a zero-weight generator emits a
    // constant batch, so real == fake cancels the Wasserstein terms exactly
    AttributeSchema schema;
    for (const char* name : {"X", "Y"}) {
        AttributeSpec s;
        s.name = name;
        s.kind = AttrKind::Numerical;
        s.stats = NumericStats{0.0, 1.0, -10.0, 10.0};
        schema.specs.push_back(s);
    }
    GanTrainingConfig cfg = tiny_config();
    cfg.lambda_gp = 0.0;
    cfg.marg_reg = false;
    Rng rng(17);
    GeneratorParams g = GeneratorParams::init(schema, 6, cfg, rng);
    for (auto& head : g.heads) head = nn::Affine::zeros(head.in(), head.out());
    CriticParams d = CriticParams::init(schema, 6, cfg, rng);

    const Matrix e = rng.normal_matrix(10, 6);
    const Matrix z = rng.normal_matrix(10, cfg.noise_dim);
    EncodedBatch x_real;
    x_real.matrix = Matrix::Zero(10, 2); // equal to the zero generator's output
    const auto [l_d, l_g] = wgan_losses(x_real, e, z, g, d, cfg, nullptr);
    CHECK(l_d == 0.0);

    // with marg_reg off, L_G is exactly the negated mean critic score
    const Matrix c = adapt(e, g.adapter, false, 0);
    const EncodedBatch fake =
        generate(z, c, g, cfg.gumbel_tau, false, Rng::derive(cfg.seed, "wgan_losses"));
    const Vector scores = critic_score(fake, e, d);
    CHECK(l_g == doctest::Approx(-scores.mean()).epsilon(1e-12));

    // paper defaults enter the configuration
    GanTrainingConfig defaults;
    CHECK(defaults.lambda_gp == 10.0);
    CHECK(defaults.lambda_m == 0.4);
    CHECK(defaults.lr_g == 2e-5);
    CHECK(defaults.n_critic == 5);
    CHECK(defaults.noise_dim == 128);
    CHECK(defaults.gumbel_tau == 0.66);
    CHECK(defaults.gen_hidden == std::vector<Index>{256, 512, 256});
}

TEST_CASE("generator loss gradients match finite differences on a micro network") {
    Fixture f;
    GanTrainingConfig cfg = tiny_config();
    cfg.gen_hidden = {4};
    cfg.critic_hidden = {4};
    cfg.noise_dim = 3;
    cfg.cond_dim = 2;
    cfg.adapter_hidden = 3;
    Rng rng(18);
    GeneratorParams g = GeneratorParams::init(f.schema, f.emb.dim(), cfg, rng);
    CriticParams d = CriticParams::init(f.schema, f.emb.dim(), cfg, rng);
    // move film away from the identity so its parameters matter
    for (auto& layer : g.film) {
        layer.gamma = nn::Affine::head(cfg.cond_dim, layer.gamma.out(), rng);
        layer.beta = nn::Affine::head(cfg.cond_dim, layer.beta.out(), rng);
    }

    const Index batch = 5;
    const Matrix e = f.emb.matrix.topRows(batch);
    const Matrix z = rng.normal_matrix(batch, cfg.noise_dim);
    Rng grng(19);
    const Matrix gumbel = sample_gumbel(batch, 3 + 2 + 4, grng);

    auto build_loss = [&](ad::Tape& tape, nn::Binder& binder_g) {
        nn::Binder binder_d(tape, false);
        const ad::Val cond_g = adapt_graph(binder_g, tape.constant(e), g.adapter, nullptr);
        const ad::Val fake =
            generator_forward(binder_g, tape.constant(z), cond_g, g, gumbel, cfg.gumbel_tau);
        const ad::Val cond_d = adapt_graph(binder_d, tape.constant(e), d.adapter, nullptr);
        const ad::Val score = critic_forward(binder_d, fake, cond_d, d);
        const ad::Val marg = marginal_loss_graph(fake, f.mspec, cfg.marg_eps);
        return tape.add(tape.neg(ad::mean_all(score)), tape.scale(marg, cfg.lambda_m));
    };

    std::vector<Matrix*> theta;
    g.collect(theta);
    ad::Tape tape;
    nn::Binder binder(tape, true);
    const ad::Val loss = build_loss(tape, binder);
    const auto grads = tape.gradients(loss, binder.bound(theta));

    auto eval = [&]() {
        ad::Tape t2;
        nn::Binder b2(t2, true);
        return build_loss(t2, b2).scalar();
    };
    for (std::size_t pi = 0; pi < theta.size(); ++pi) {
        const Matrix fd = semapop::testing::finite_difference(*theta[pi], eval);
        INFO("generator parameter block ", pi);
        CHECK(max_relative_error(grads[pi].v(), fd, 1e-3) < 1e-3);
    }
}

TEST_CASE("train_gan: zero steps, metrics logging, determinism") {
    Fixture f;
    GanTrainingConfig cfg = tiny_config();
    cfg.steps = 0;
    GanTrainResult init = train_gan(f.train_pop, f.emb, f.schema, f.mspec, cfg);
    CHECK(init.metrics.empty());

    cfg.steps = 3;
    GanTrainResult r1 = train_gan(f.train_pop, f.emb, f.schema, f.mspec, cfg);
    GanTrainResult r2 = train_gan(f.train_pop, f.emb, f.schema, f.mspec, cfg);
    REQUIRE(r1.metrics.size() == 3);
    CHECK(gan_metrics_csv(r1.metrics) == gan_metrics_csv(r2.metrics));
    const std::string csv = gan_metrics_csv(r1.metrics);
    CHECK(csv.rfind("step,L_D,L_G,L_marg,gp", 0) == 0);

    // parameters moved and stayed finite
    std::vector<Matrix*> before, after;
    init.generator.collect(before);
    r1.generator.collect(after);
    bool changed = false;
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(after[i]->allFinite());
        if (*before[i] != *after[i]) changed = true;
    }
    CHECK(changed);
}

TEST_CASE("sample_population produces one valid agent per embedding row") {
    Fixture f;
    GanTrainingConfig cfg = tiny_config();
    GanTrainResult r = train_gan(f.train_pop, f.emb, f.schema, f.mspec, cfg);
    ModelCheckpoint ckpt = gan_checkpoint(r, f.schema, f.mspec, cfg);

    EmbeddingMatrix eval_emb;
    eval_emb.matrix = f.emb.matrix.topRows(37);
    const Population pop = sample_population(ckpt, eval_emb, 71);
    CHECK(pop.n() == 37);
    validate_population(pop, f.schema);

    const Population pop2 = sample_population(ckpt, eval_emb, 71);
    CHECK(pop.values == pop2.values);

    EmbeddingMatrix wrong;
    wrong.matrix = Matrix::Zero(5, f.emb.dim() + 1);
    CHECK_THROWS(sample_population(ckpt, wrong, 1));
}
