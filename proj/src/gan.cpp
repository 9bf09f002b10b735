#include "semapop/gan.hpp"

#include "semapop/io_util.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace semapop {

std::string to_string(GCond g) { return g == GCond::Film ? "film" : "concat"; }
std::string to_string(DCond d) { return d == DCond::Projection ? "projection" : "film"; }
std::string to_string(FilmPosition p) {
    return p == FilmPosition::PostActivation ? "post_activation" : "pre_activation";
}

GCond g_cond_from_string(const std::string& s) {
    if (s == "film") return GCond::Film;
    if (s == "concat") return GCond::Concat;
    throw std::runtime_error("unknown generator conditioning mode: " + s);
}

DCond d_cond_from_string(const std::string& s) {
    if (s == "projection") return DCond::Projection;
    if (s == "film") return DCond::Film;
    throw std::runtime_error("unknown critic conditioning mode: " + s);
}

FilmPosition film_position_from_string(const std::string& s) {
    if (s == "post_activation") return FilmPosition::PostActivation;
    if (s == "pre_activation") return FilmPosition::PreActivation;
    throw std::runtime_error("unknown film position: " + s);
}

void GanTrainingConfig::validate() const {
    if (lambda_gp < 0.0) throw std::runtime_error("lambda_gp must be >= 0");
    if (n_critic < 1) throw std::runtime_error("n_critic must be >= 1");
    if (gumbel_tau <= 0.0) throw std::runtime_error("gumbel_tau must be > 0");
    if (batch_size < 1) throw std::runtime_error("batch_size must be >= 1");
    if (steps < 0) throw std::runtime_error("steps must be >= 0");
    if (noise_dim < 1 || cond_dim < 1) throw std::runtime_error("dims must be >= 1");
    if (gen_hidden.empty() || critic_hidden.empty())
        throw std::runtime_error("hidden stacks must be non-empty");
}

namespace {

std::vector<Index> indices_from_json(const nlohmann::json& j) {
    std::vector<Index> out;
    for (const auto& v : j) out.push_back(v.get<Index>());
    return out;
}

} // namespace

std::string GanTrainingConfig::to_json() const {
    nlohmann::json j;
    j["lambda_gp"] = lambda_gp;
    j["lambda_m"] = lambda_m;
    j["lr_g"] = lr_g;
    j["lr_d"] = lr_d;
    j["n_critic"] = n_critic;
    j["noise_dim"] = noise_dim;
    j["batch_size"] = batch_size;
    j["steps"] = steps;
    j["gumbel_tau"] = gumbel_tau;
    j["g_cond"] = to_string(g_cond);
    j["d_cond"] = to_string(d_cond);
    j["marg_reg"] = marg_reg;
    j["film_position"] = to_string(film_position);
    j["cond_dim"] = cond_dim;
    j["adapter_hidden"] = adapter_hidden;
    j["gen_hidden"] = gen_hidden;
    j["critic_hidden"] = critic_hidden;
    j["adapter_dropout"] = adapter_dropout;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["marg_eps"] = marg_eps;
    j["checkpoint_every"] = checkpoint_every;
    j["seed"] = seed;
    return j.dump(2);
}

GanTrainingConfig GanTrainingConfig::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    GanTrainingConfig cfg;
    cfg.lambda_gp = j.value("lambda_gp", cfg.lambda_gp);
    cfg.lambda_m = j.value("lambda_m", cfg.lambda_m);
    cfg.lr_g = j.value("lr_g", cfg.lr_g);
    cfg.lr_d = j.value("lr_d", cfg.lr_d);
    cfg.n_critic = j.value("n_critic", cfg.n_critic);
    cfg.noise_dim = j.value("noise_dim", cfg.noise_dim);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.gumbel_tau = j.value("gumbel_tau", cfg.gumbel_tau);
    if (j.contains("g_cond")) cfg.g_cond = g_cond_from_string(j["g_cond"].get<std::string>());
    if (j.contains("d_cond")) cfg.d_cond = d_cond_from_string(j["d_cond"].get<std::string>());
    cfg.marg_reg = j.value("marg_reg", cfg.marg_reg);
    if (j.contains("film_position"))
        cfg.film_position = film_position_from_string(j["film_position"].get<std::string>());
    cfg.cond_dim = j.value("cond_dim", cfg.cond_dim);
    cfg.adapter_hidden = j.value("adapter_hidden", cfg.adapter_hidden);
    if (j.contains("gen_hidden")) cfg.gen_hidden = indices_from_json(j["gen_hidden"]);
    if (j.contains("critic_hidden")) cfg.critic_hidden = indices_from_json(j["critic_hidden"]);
    cfg.adapter_dropout = j.value("adapter_dropout", cfg.adapter_dropout);
    cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
    cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
    cfg.marg_eps = j.value("marg_eps", cfg.marg_eps);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

GeneratorParams GeneratorParams::init(const AttributeSchema& schema, Index embed_dim,
                                      const GanTrainingConfig& cfg, Rng& rng) {
    GeneratorParams p;
    p.g_cond = cfg.g_cond;
    p.film_position = cfg.film_position;
    p.noise_dim = cfg.noise_dim;
    p.adapter = AdapterParams::init(embed_dim, cfg.adapter_hidden, cfg.cond_dim, rng);
    p.adapter.dropout = cfg.adapter_dropout;
    Index in = cfg.noise_dim + cfg.cond_dim;
    for (Index width : cfg.gen_hidden) {
        p.hidden.push_back(nn::Affine::he(in, width, rng));
        if (cfg.g_cond == GCond::Film)
            p.film.push_back(FiLMLayerParams::identity(cfg.cond_dim, width));
        in = width;
    }
    for (const auto& spec : schema.specs) {
        p.head_kinds.push_back(spec.kind);
        p.head_widths.push_back(spec.encoded_width());
        p.heads.push_back(nn::Affine::head(in, spec.encoded_width(), rng));
    }
    return p;
}

void GeneratorParams::collect(std::vector<Matrix*>& out) {
    adapter.collect(out);
    for (auto& a : hidden) {
        out.push_back(&a.W);
        out.push_back(&a.b);
    }
    for (auto& f : film) f.collect(out);
    for (auto& a : heads) {
        out.push_back(&a.W);
        out.push_back(&a.b);
    }
}

void GeneratorParams::append_tensors(nn::NamedTensors& out) {
    adapter.append_tensors("generator.adapter", out);
    for (std::size_t i = 0; i < hidden.size(); ++i)
        nn::append_affine(out, "generator.hidden" + std::to_string(i), hidden[i]);
    for (std::size_t i = 0; i < film.size(); ++i)
        film[i].append_tensors("generator.film" + std::to_string(i), out);
    for (std::size_t i = 0; i < heads.size(); ++i)
        nn::append_affine(out, "generator.head" + std::to_string(i), heads[i]);
}

Index GeneratorParams::encoded_width() const {
    Index w = 0;
    for (Index k : head_widths) w += k;
    return w;
}

CriticParams CriticParams::init(const AttributeSchema& schema, Index embed_dim,
                                const GanTrainingConfig& cfg, Rng& rng) {
    CriticParams p;
    p.d_cond = cfg.d_cond;
    p.film_position = cfg.film_position;
    p.adapter = AdapterParams::init(embed_dim, cfg.adapter_hidden, cfg.cond_dim, rng);
    p.adapter.dropout = cfg.adapter_dropout;
    Index in = schema.encoded_width();
    for (Index width : cfg.critic_hidden) {
        p.trunk.push_back(nn::Affine::he(in, width, rng));
        if (cfg.d_cond == DCond::Film)
            p.film.push_back(FiLMLayerParams::identity(cfg.cond_dim, width));
        in = width;
    }
    p.head = nn::Affine::head(in, 1, rng);
    if (cfg.d_cond == DCond::Projection) p.proj = nn::Affine::head(cfg.cond_dim, in, rng);
    return p;
}

void CriticParams::collect(std::vector<Matrix*>& out) {
    adapter.collect(out);
    for (auto& a : trunk) {
        out.push_back(&a.W);
        out.push_back(&a.b);
    }
    out.push_back(&head.W);
    out.push_back(&head.b);
    if (d_cond == DCond::Projection) {
        out.push_back(&proj.W);
        out.push_back(&proj.b);
    }
    for (auto& f : film) f.collect(out);
}

void CriticParams::append_tensors(nn::NamedTensors& out) {
    adapter.append_tensors("critic.adapter", out);
    for (std::size_t i = 0; i < trunk.size(); ++i)
        nn::append_affine(out, "critic.trunk" + std::to_string(i), trunk[i]);
    nn::append_affine(out, "critic.head", head);
    if (d_cond == DCond::Projection) nn::append_affine(out, "critic.proj", proj);
    for (std::size_t i = 0; i < film.size(); ++i)
        film[i].append_tensors("critic.film" + std::to_string(i), out);
}

Matrix sample_gumbel(Index rows, Index cols, Rng& rng) {
    Matrix g(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            const double u = std::min(std::max(rng.uniform(), 1e-300), 1.0 - 1e-16);
            g(i, j) = -std::log(-std::log(u));
        }
    }
    return g;
}

ad::Val generator_forward(nn::Binder& binder, ad::Val z, ad::Val c, const GeneratorParams& params,
                          const Matrix& gumbel, double tau, bool apply_film) {
    ad::Tape& t = *z.tape;
    ad::Val h = t.hcat(z, c); // h0 = [z; c]
    const bool with_film = params.g_cond == GCond::Film && apply_film;
    for (std::size_t l = 0; l < params.hidden.size(); ++l) {
        h = nn::apply(nn::bind(binder, params.hidden[l]), h);
        if (params.film_position == FilmPosition::PreActivation) {
            if (with_film) h = film_graph(binder, h, c, params.film[l]);
            h = t.relu(h);
        } else {
            h = t.relu(h);
            if (with_film) h = film_graph(binder, h, c, params.film[l]);
        }
    }
    ad::Val out{nullptr, -1};
    Index gumbel_off = 0;
    for (std::size_t j = 0; j < params.heads.size(); ++j) {
        ad::Val head_out = nn::apply(nn::bind(binder, params.heads[j]), h);
        ad::Val block = head_out;
        if (params.head_kinds[j] == AttrKind::Categorical) {
            const Index k = params.head_widths[j];
            const ad::Val noise = t.constant(gumbel.middleCols(gumbel_off, k));
            block = ad::softmax_rows(t.scale(t.add(head_out, noise), 1.0 / tau));
            gumbel_off += k;
        }
        out = (out.id < 0) ? block : t.hcat(out, block);
    }
    return out;
}

ad::Val critic_forward(nn::Binder& binder, ad::Val x, ad::Val c, const CriticParams& params,
                       bool apply_film) {
    ad::Tape& t = *x.tape;
    ad::Val phi = x;
    const bool with_film = params.d_cond == DCond::Film && apply_film;
    for (std::size_t l = 0; l < params.trunk.size(); ++l) {
        phi = nn::apply(nn::bind(binder, params.trunk[l]), phi);
        if (params.film_position == FilmPosition::PreActivation) {
            if (with_film) phi = film_graph(binder, phi, c, params.film[l]);
            phi = t.relu(phi);
        } else {
            phi = t.relu(phi);
            if (with_film) phi = film_graph(binder, phi, c, params.film[l]);
        }
    }
    ad::Val score = nn::apply(nn::bind(binder, params.head), phi);
    if (params.d_cond == DCond::Projection) {
        const ad::Val psi = nn::apply(nn::bind(binder, params.proj), c);
        score = t.add(score, t.row_sums(t.cmul(phi, psi)));
    }
    return score;
}

namespace {

void check_finite_params(const std::vector<const Matrix*>& mats, const char* who) {
    for (const Matrix* m : mats)
        if (!m->allFinite()) throw std::runtime_error(std::string(who) + " parameters are non-finite");
}

std::vector<const Matrix*> const_collect(const GeneratorParams& p) {
    std::vector<Matrix*> mats;
    const_cast<GeneratorParams&>(p).collect(mats);
    return {mats.begin(), mats.end()};
}

std::vector<const Matrix*> const_collect(const CriticParams& p) {
    std::vector<Matrix*> mats;
    const_cast<CriticParams&>(p).collect(mats);
    return {mats.begin(), mats.end()};
}

Index total_categorical_width(const GeneratorParams& p) {
    Index w = 0;
    for (std::size_t j = 0; j < p.heads.size(); ++j)
        if (p.head_kinds[j] == AttrKind::Categorical) w += p.head_widths[j];
    return w;
}

// Exact one-hots from soft blocks, ties to the lowest index.
Matrix harden(const Matrix& soft, const GeneratorParams& p) {
    Matrix hard = soft;
    Index off = 0;
    for (std::size_t j = 0; j < p.heads.size(); ++j) {
        const Index k = p.head_widths[j];
        if (p.head_kinds[j] == AttrKind::Categorical) {
            for (Index i = 0; i < soft.rows(); ++i) {
                Index best = 0;
                for (Index c = 1; c < k; ++c)
                    if (soft(i, off + c) > soft(i, off + best)) best = c;
                hard.row(i).segment(off, k).setZero();
                hard(i, off + best) = 1.0;
            }
        }
        off += k;
    }
    return hard;
}

} // namespace

EncodedBatch generate(const Matrix& z, const Matrix& c, const GeneratorParams& params, double tau,
                      bool hard, std::uint64_t seed) {
    check_finite_params(const_collect(params), "generator");
    if (z.cols() != params.noise_dim) throw std::runtime_error("noise batch width mismatch");
    if (c.cols() != params.adapter.out_dim())
        throw std::runtime_error("conditioning batch width mismatch");
    if (z.rows() != c.rows()) throw std::runtime_error("noise/conditioning batch size mismatch");
    Rng rng(Rng::derive(seed, "generate_gumbel"));
    const Matrix gumbel = sample_gumbel(z.rows(), total_categorical_width(params), rng);

    ad::Tape tape;
    nn::Binder binder(tape, false);
    const ad::Val out =
        generator_forward(binder, tape.constant(z), tape.constant(c), params, gumbel, tau);
    EncodedBatch batch;
    batch.matrix = hard ? harden(out.v(), params) : out.v();
    return batch;
}

Vector critic_score(const EncodedBatch& x, const Matrix& e, const CriticParams& params) {
    check_finite_params(const_collect(params), "critic");
    ad::Tape tape;
    nn::Binder binder(tape, false);
    const ad::Val cond = adapt_graph(binder, tape.constant(e), params.adapter, nullptr);
    const ad::Val score = critic_forward(binder, tape.constant(x.matrix), cond, params);
    return score.v().col(0);
}

namespace {

// Shared gradient-penalty graph; x_tilde must be a leaf on the tape. The
// tiny constant inside the norm keeps the backward pass finite when a row
// gradient vanishes (all rectifier units dead for that row).
ad::Val gradient_penalty_graph(ad::Tape& tape, ad::Val x_tilde, ad::Val cond,
                               nn::Binder& binder, const CriticParams& params) {
    const ad::Val scores = critic_forward(binder, x_tilde, cond, params);
    const ad::Val grad = tape.gradients(tape.sum_all(scores), {x_tilde})[0];
    const ad::Val norms =
        tape.sqrt(ad::add_scalar(tape.row_sums(ad::square(grad)), 1e-16));
    return ad::mean_all(ad::square(ad::add_scalar(norms, -1.0)));
}

Matrix interpolate_rows(const Matrix& x_real, const Matrix& x_fake, Rng& rng) {
    Matrix out(x_real.rows(), x_real.cols());
    for (Index i = 0; i < x_real.rows(); ++i) {
        const double a = rng.uniform();
        out.row(i) = a * x_real.row(i) + (1.0 - a) * x_fake.row(i);
    }
    return out;
}

} // namespace

double gradient_penalty(const EncodedBatch& x_real, const EncodedBatch& x_fake, const Matrix& e,
                        const CriticParams& params, std::uint64_t seed) {
    if (x_real.matrix.rows() != x_fake.matrix.rows() ||
        x_real.matrix.cols() != x_fake.matrix.cols())
        throw std::runtime_error("gradient_penalty requires equal batch shapes");
    Rng rng(Rng::derive(seed, "gp_alpha"));
    const Matrix x_tilde = interpolate_rows(x_real.matrix, x_fake.matrix, rng);

    ad::Tape tape;
    nn::Binder binder(tape, false);
    const ad::Val cond = adapt_graph(binder, tape.constant(e), params.adapter, nullptr);
    return gradient_penalty_graph(tape, tape.leaf(x_tilde), cond, binder, params).scalar();
}

std::pair<double, double> wgan_losses(const EncodedBatch& x_real, const Matrix& e, const Matrix& z,
                                      const GeneratorParams& params_g, const CriticParams& params_d,
                                      const GanTrainingConfig& cfg, const MarginalSpec* mspec) {
    const Matrix c_g = adapt(e, params_g.adapter, false, 0);
    const EncodedBatch fake =
        generate(z, c_g, params_g, cfg.gumbel_tau, false, Rng::derive(cfg.seed, "wgan_losses"));
    const Vector s_fake = critic_score(fake, e, params_d);
    const Vector s_real = critic_score(x_real, e, params_d);
    const double gp = cfg.lambda_gp != 0.0
                          ? gradient_penalty(x_real, fake, e, params_d, cfg.seed)
                          : 0.0;
    const double l_d = s_fake.mean() - s_real.mean() + cfg.lambda_gp * gp;
    double l_g = -s_fake.mean();
    if (cfg.marg_reg) {
        if (!mspec) throw std::runtime_error("marginal regularization requested without a spec");
        l_g += cfg.lambda_m * marginal_loss(fake, *mspec, cfg.marg_eps);
    }
    return {l_d, l_g};
}

std::string gan_metrics_csv(const std::vector<GanStepMetrics>& metrics) {
    std::ostringstream out;
    out << "step,L_D,L_G,L_marg,gp\n";
    for (const auto& m : metrics) {
        out << m.step << ',' << format_real(m.l_d) << ',' << format_real(m.l_g) << ','
            << format_real(m.l_marg) << ',' << format_real(m.gp) << '\n';
    }
    return out.str();
}

GanTrainResult train_gan(const Population& train, const EmbeddingMatrix& embeddings,
                         const AttributeSchema& schema, const MarginalSpec& mspec,
                         const GanTrainingConfig& cfg, const GanCheckpointHook& hook) {
    cfg.validate();
    if (!schema.has_fitted_stats()) throw std::runtime_error("train_gan requires fitted schema stats");
    if (embeddings.n() != train.n())
        throw std::runtime_error("embeddings are not row-aligned with the training population");
    mspec.validate();

    const Matrix real_all = encode(train, schema).matrix;
    const Matrix& emb_all = embeddings.matrix;
    const Index n = train.n();
    const Index batch = std::min<Index>(cfg.batch_size, n);

    Rng init_rng(Rng::derive(cfg.seed, "gan_init"));
    GanTrainResult result;
    result.generator = GeneratorParams::init(schema, embeddings.dim(), cfg, init_rng);
    result.critic = CriticParams::init(schema, embeddings.dim(), cfg, init_rng);

    std::vector<Matrix*> theta_g, theta_d;
    result.generator.collect(theta_g);
    result.critic.collect(theta_d);
    nn::Adam adam_g({cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
    nn::Adam adam_d({cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2, 1e-8});

    Rng rng(Rng::derive(cfg.seed, "gan_loop"));
    const Index cat_width = total_categorical_width(result.generator);

    auto draw_batch = [&](Matrix& x_b, Matrix& e_b) {
        x_b.resize(batch, real_all.cols());
        e_b.resize(batch, emb_all.cols());
        for (Index i = 0; i < batch; ++i) {
            const Index r = rng.uniform_index(n);
            x_b.row(i) = real_all.row(r);
            e_b.row(i) = emb_all.row(r);
        }
    };

    for (int step = 1; step <= cfg.steps; ++step) {
        double last_ld = 0.0, last_gp = 0.0;
        for (int t = 0; t < cfg.n_critic; ++t) {
            Matrix x_b, e_b;
            draw_batch(x_b, e_b);
            const Matrix z = rng.normal_matrix(batch, cfg.noise_dim);
            const Matrix gumbel = sample_gumbel(batch, cat_width, rng);
            const Matrix mask_g = nn::dropout_mask(batch, cfg.adapter_hidden,
                                                   cfg.adapter_dropout, rng);
            const Matrix mask_d = nn::dropout_mask(batch, cfg.adapter_hidden,
                                                   cfg.adapter_dropout, rng);

            ad::Tape tape;
            nn::Binder frozen_g(tape, false);
            nn::Binder binder_d(tape, true);
            const ad::Val cond_g =
                adapt_graph(frozen_g, tape.constant(e_b), result.generator.adapter, &mask_g);
            const ad::Val fake = generator_forward(frozen_g, tape.constant(z), cond_g,
                                                   result.generator, gumbel, cfg.gumbel_tau);
            const ad::Val cond_d =
                adapt_graph(binder_d, tape.constant(e_b), result.critic.adapter, &mask_d);
            const ad::Val s_real =
                critic_forward(binder_d, tape.constant(x_b), cond_d, result.critic);
            const ad::Val s_fake = critic_forward(binder_d, fake, cond_d, result.critic);

            Rng gp_rng(Rng::derive(cfg.seed, "gan_gp", static_cast<std::uint64_t>(step) * 1000 +
                                                           static_cast<std::uint64_t>(t)));
            const ad::Val x_tilde =
                tape.leaf(interpolate_rows(x_b, fake.v(), gp_rng));
            const ad::Val penalty =
                gradient_penalty_graph(tape, x_tilde, cond_d, binder_d, result.critic);

            const ad::Val l_d = tape.add(tape.sub(ad::mean_all(s_fake), ad::mean_all(s_real)),
                                         tape.scale(penalty, cfg.lambda_gp));
            const auto grads = tape.gradients(l_d, binder_d.bound(theta_d));
            std::vector<Matrix> grad_values;
            grad_values.reserve(grads.size());
            for (const auto& g : grads) grad_values.push_back(g.v());
            adam_d.step(theta_d, grad_values);
            last_ld = l_d.scalar();
            last_gp = penalty.scalar();
        }

        Matrix x_b, e_b;
        draw_batch(x_b, e_b);
        const Matrix z = rng.normal_matrix(batch, cfg.noise_dim);
        const Matrix gumbel = sample_gumbel(batch, cat_width, rng);
        const Matrix mask_g = nn::dropout_mask(batch, cfg.adapter_hidden, cfg.adapter_dropout, rng);
        const Matrix mask_d = nn::dropout_mask(batch, cfg.adapter_hidden, cfg.adapter_dropout, rng);

        ad::Tape tape;
        nn::Binder binder_g(tape, true);
        nn::Binder frozen_d(tape, false);
        const ad::Val cond_g =
            adapt_graph(binder_g, tape.constant(e_b), result.generator.adapter, &mask_g);
        const ad::Val fake = generator_forward(binder_g, tape.constant(z), cond_g,
                                               result.generator, gumbel, cfg.gumbel_tau);
        const ad::Val cond_d =
            adapt_graph(frozen_d, tape.constant(e_b), result.critic.adapter, &mask_d);
        const ad::Val s_fake = critic_forward(frozen_d, fake, cond_d, result.critic);

        ad::Val l_g = tape.neg(ad::mean_all(s_fake));
        double marg_value = 0.0;
        if (cfg.marg_reg) {
            const ad::Val marg = marginal_loss_graph(fake, mspec, cfg.marg_eps);
            marg_value = marg.scalar();
            l_g = tape.add(l_g, tape.scale(marg, cfg.lambda_m));
        }
        const auto grads = tape.gradients(l_g, binder_g.bound(theta_g));
        std::vector<Matrix> grad_values;
        grad_values.reserve(grads.size());
        for (const auto& g : grads) grad_values.push_back(g.v());
        adam_g.step(theta_g, grad_values);

        GanStepMetrics m;
        m.step = step;
        m.l_d = last_ld;
        m.l_g = l_g.scalar();
        m.l_marg = marg_value;
        m.gp = last_gp;
        if (!std::isfinite(m.l_d) || !std::isfinite(m.l_g) || !std::isfinite(m.gp))
            throw std::runtime_error("training diverged at step " + std::to_string(step) +
                                     ": L_D=" + format_real(m.l_d) + " L_G=" + format_real(m.l_g) +
                                     " gp=" + format_real(m.gp));
        result.metrics.push_back(m);

        if (hook && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
            hook(step, result.generator, result.critic);
    }
    return result;
}

ModelCheckpoint gan_checkpoint(GanTrainResult& result, const AttributeSchema& schema,
                               const MarginalSpec& mspec, const GanTrainingConfig& cfg) {
    ModelCheckpoint ckpt;
    ckpt.backbone = "gan";
    ckpt.schema = schema;
    ckpt.marginal_spec = mspec;
    ckpt.config_echo = cfg.to_json();
    ckpt.flags["g_cond"] = to_string(result.generator.g_cond);
    ckpt.flags["d_cond"] = to_string(result.critic.d_cond);
    ckpt.flags["film_position"] = to_string(result.generator.film_position);
    ckpt.flags["noise_dim"] = std::to_string(result.generator.noise_dim);
    ckpt.flags["adapter_dropout"] = format_real(result.generator.adapter.dropout);
    ckpt.flags["gumbel_tau"] = format_real(cfg.gumbel_tau);
    nn::NamedTensors tensors;
    result.generator.append_tensors(tensors);
    result.critic.append_tensors(tensors);
    for (const auto& [name, mat] : tensors) ckpt.tensors[name] = quantize_f32(*mat);
    return ckpt;
}

namespace {

nn::Affine affine_from_checkpoint(const ModelCheckpoint& ckpt, const std::string& prefix) {
    nn::Affine a;
    a.W = ckpt.tensor(prefix + ".W");
    a.b = ckpt.tensor(prefix + ".b");
    return a;
}

AdapterParams adapter_from_checkpoint(const ModelCheckpoint& ckpt, const std::string& prefix,
                                      double dropout) {
    AdapterParams p;
    p.l1 = affine_from_checkpoint(ckpt, prefix + ".l1");
    p.l2 = affine_from_checkpoint(ckpt, prefix + ".l2");
    p.dropout = dropout;
    return p;
}

FiLMLayerParams film_from_checkpoint(const ModelCheckpoint& ckpt, const std::string& prefix) {
    FiLMLayerParams p;
    p.gamma = affine_from_checkpoint(ckpt, prefix + ".gamma");
    p.beta = affine_from_checkpoint(ckpt, prefix + ".beta");
    return p;
}

Index count_layers(const ModelCheckpoint& ckpt, const std::string& stem) {
    Index count = 0;
    while (ckpt.tensors.count(stem + std::to_string(count) + ".W")) ++count;
    return count;
}

} // namespace

GeneratorParams generator_from_checkpoint(const ModelCheckpoint& ckpt) {
    if (ckpt.backbone != "gan")
        throw std::runtime_error("checkpoint backbone is '" + ckpt.backbone + "', expected gan");
    GeneratorParams p;
    p.g_cond = g_cond_from_string(ckpt.flag("g_cond"));
    p.film_position = film_position_from_string(ckpt.flag("film_position"));
    p.noise_dim = std::stol(ckpt.flag("noise_dim"));
    const double dropout = std::stod(ckpt.flag("adapter_dropout"));
    p.adapter = adapter_from_checkpoint(ckpt, "generator.adapter", dropout);
    const Index layers = count_layers(ckpt, "generator.hidden");
    for (Index l = 0; l < layers; ++l)
        p.hidden.push_back(affine_from_checkpoint(ckpt, "generator.hidden" + std::to_string(l)));
    if (p.g_cond == GCond::Film)
        for (Index l = 0; l < layers; ++l)
            p.film.push_back(film_from_checkpoint(ckpt, "generator.film" + std::to_string(l)));
    for (Index j = 0; j < ckpt.schema.size(); ++j) {
        const auto& spec = ckpt.schema.specs[static_cast<std::size_t>(j)];
        p.heads.push_back(affine_from_checkpoint(ckpt, "generator.head" + std::to_string(j)));
        p.head_kinds.push_back(spec.kind);
        p.head_widths.push_back(spec.encoded_width());
    }
    return p;
}

CriticParams critic_from_checkpoint(const ModelCheckpoint& ckpt) {
    if (ckpt.backbone != "gan")
        throw std::runtime_error("checkpoint backbone is '" + ckpt.backbone + "', expected gan");
    CriticParams p;
    p.d_cond = d_cond_from_string(ckpt.flag("d_cond"));
    p.film_position = film_position_from_string(ckpt.flag("film_position"));
    p.adapter = adapter_from_checkpoint(ckpt, "critic.adapter", std::stod(ckpt.flag("adapter_dropout")));
    const Index layers = count_layers(ckpt, "critic.trunk");
    for (Index l = 0; l < layers; ++l)
        p.trunk.push_back(affine_from_checkpoint(ckpt, "critic.trunk" + std::to_string(l)));
    p.head = affine_from_checkpoint(ckpt, "critic.head");
    if (p.d_cond == DCond::Projection) p.proj = affine_from_checkpoint(ckpt, "critic.proj");
    if (p.d_cond == DCond::Film)
        for (Index l = 0; l < layers; ++l)
            p.film.push_back(film_from_checkpoint(ckpt, "critic.film" + std::to_string(l)));
    return p;
}

Population sample_population(const ModelCheckpoint& ckpt, const EmbeddingMatrix& embeddings,
                             std::uint64_t seed) {
    const GeneratorParams params = generator_from_checkpoint(ckpt);
    if (embeddings.dim() != params.adapter.in_dim())
        throw std::runtime_error("embedding dim " + std::to_string(embeddings.dim()) +
                                 " does not match checkpoint adapter (" +
                                 std::to_string(params.adapter.in_dim()) + ")");
    const Matrix c = adapt(embeddings.matrix, params.adapter, false, 0);
    Rng rng(Rng::derive(seed, "sample_z"));
    const Matrix z = rng.normal_matrix(embeddings.n(), params.noise_dim);
    const double tau = std::stod(ckpt.flag("gumbel_tau"));
    const EncodedBatch batch = generate(z, c, params, tau, true, Rng::derive(seed, "sample_gumbel"));
    return decode(batch, ckpt.schema, DecodeMode::Hard);
}

} // namespace semapop
