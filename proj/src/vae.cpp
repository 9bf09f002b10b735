#include "semapop/vae.hpp"

#include "semapop/io_util.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace semapop {

void VaeTrainingConfig::validate() const {
    if (beta < 0.0 || lambda_m < 0.0) throw std::runtime_error("beta and lambda_m must be >= 0");
    if (batch_size < 1 || epochs < 0) throw std::runtime_error("invalid batch size or epochs");
    if (latent_dim < 1 || cond_dim < 1) throw std::runtime_error("dims must be >= 1");
    if (enc_hidden.empty() || dec_hidden.empty())
        throw std::runtime_error("hidden stacks must be non-empty");
}

std::string VaeTrainingConfig::to_json() const {
    nlohmann::json j;
    j["beta"] = beta;
    j["lambda_m"] = lambda_m;
    j["lr"] = lr;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["latent_dim"] = latent_dim;
    j["cond_dim"] = cond_dim;
    j["adapter_hidden"] = adapter_hidden;
    j["prior_hidden"] = prior_hidden;
    j["enc_hidden"] = enc_hidden;
    j["dec_hidden"] = dec_hidden;
    j["dropout"] = dropout;
    j["adapter_dropout"] = adapter_dropout;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["marg_eps"] = marg_eps;
    j["logvar_clamp"] = logvar_clamp;
    j["seed"] = seed;
    return j.dump(2);
}

VaeTrainingConfig VaeTrainingConfig::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    VaeTrainingConfig cfg;
    cfg.beta = j.value("beta", cfg.beta);
    cfg.lambda_m = j.value("lambda_m", cfg.lambda_m);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
    cfg.cond_dim = j.value("cond_dim", cfg.cond_dim);
    cfg.adapter_hidden = j.value("adapter_hidden", cfg.adapter_hidden);
    cfg.prior_hidden = j.value("prior_hidden", cfg.prior_hidden);
    if (j.contains("enc_hidden")) {
        cfg.enc_hidden.clear();
        for (const auto& v : j["enc_hidden"]) cfg.enc_hidden.push_back(v.get<Index>());
    }
    if (j.contains("dec_hidden")) {
        cfg.dec_hidden.clear();
        for (const auto& v : j["dec_hidden"]) cfg.dec_hidden.push_back(v.get<Index>());
    }
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.adapter_dropout = j.value("adapter_dropout", cfg.adapter_dropout);
    cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
    cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
    cfg.marg_eps = j.value("marg_eps", cfg.marg_eps);
    cfg.logvar_clamp = j.value("logvar_clamp", cfg.logvar_clamp);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

VaeParams VaeParams::init(const AttributeSchema& schema, Index embed_dim,
                          const VaeTrainingConfig& cfg, Rng& rng) {
    VaeParams p;
    p.latent_dim = cfg.latent_dim;
    p.adapter = AdapterParams::init(embed_dim, cfg.adapter_hidden, cfg.cond_dim, rng);
    p.adapter.dropout = cfg.adapter_dropout;

    Index in = schema.encoded_width();
    for (Index width : cfg.enc_hidden) {
        p.encoder.push_back(nn::Affine::he(in, width, rng));
        in = width;
    }
    p.enc_mu = nn::Affine::head(in, cfg.latent_dim, rng);
    p.enc_logvar = nn::Affine::head(in, cfg.latent_dim, rng);

    p.prior_l1 = nn::Affine::he(cfg.cond_dim, cfg.prior_hidden, rng);
    p.prior_mu = nn::Affine::head(cfg.prior_hidden, cfg.latent_dim, rng);
    p.prior_logvar = nn::Affine::head(cfg.prior_hidden, cfg.latent_dim, rng);

    in = cfg.latent_dim;
    for (Index width : cfg.dec_hidden) {
        p.decoder.push_back(nn::Affine::he(in, width, rng));
        p.dec_film.push_back(FiLMLayerParams::identity(cfg.cond_dim, width));
        in = width;
    }
    Index n_cont = 0;
    for (const auto& spec : schema.specs) {
        p.var_kinds.push_back(spec.kind);
        p.var_widths.push_back(spec.encoded_width());
        if (spec.kind == AttrKind::Categorical) {
            p.cat_heads.push_back(nn::Affine::head(in, spec.encoded_width(), rng));
        } else {
            ++n_cont;
        }
    }
    if (n_cont > 0) {
        p.cont_mu = nn::Affine::head(in, n_cont, rng);
        p.cont_logvar = nn::Affine::head(in, n_cont, rng);
    }
    return p;
}

Index VaeParams::n_categorical() const { return static_cast<Index>(cat_heads.size()); }

Index VaeParams::n_numerical() const {
    Index n = 0;
    for (auto k : var_kinds)
        if (k == AttrKind::Numerical) ++n;
    return n;
}

void VaeParams::collect(std::vector<Matrix*>& out) {
    adapter.collect(out);
    for (auto& a : encoder) {
        out.push_back(&a.W);
        out.push_back(&a.b);
    }
    out.push_back(&enc_mu.W);
    out.push_back(&enc_mu.b);
    out.push_back(&enc_logvar.W);
    out.push_back(&enc_logvar.b);
    out.push_back(&prior_l1.W);
    out.push_back(&prior_l1.b);
    out.push_back(&prior_mu.W);
    out.push_back(&prior_mu.b);
    out.push_back(&prior_logvar.W);
    out.push_back(&prior_logvar.b);
    for (auto& a : decoder) {
        out.push_back(&a.W);
        out.push_back(&a.b);
    }
    for (auto& f : dec_film) f.collect(out);
    for (auto& a : cat_heads) {
        out.push_back(&a.W);
        out.push_back(&a.b);
    }
    if (n_numerical() > 0) {
        out.push_back(&cont_mu.W);
        out.push_back(&cont_mu.b);
        out.push_back(&cont_logvar.W);
        out.push_back(&cont_logvar.b);
    }
}

void VaeParams::append_tensors(nn::NamedTensors& out) {
    adapter.append_tensors("vae.adapter", out);
    for (std::size_t i = 0; i < encoder.size(); ++i)
        nn::append_affine(out, "vae.enc" + std::to_string(i), encoder[i]);
    nn::append_affine(out, "vae.enc_mu", enc_mu);
    nn::append_affine(out, "vae.enc_logvar", enc_logvar);
    nn::append_affine(out, "vae.prior_l1", prior_l1);
    nn::append_affine(out, "vae.prior_mu", prior_mu);
    nn::append_affine(out, "vae.prior_logvar", prior_logvar);
    for (std::size_t i = 0; i < decoder.size(); ++i)
        nn::append_affine(out, "vae.dec" + std::to_string(i), decoder[i]);
    for (std::size_t i = 0; i < dec_film.size(); ++i)
        dec_film[i].append_tensors("vae.film" + std::to_string(i), out);
    for (std::size_t i = 0; i < cat_heads.size(); ++i)
        nn::append_affine(out, "vae.cat_head" + std::to_string(i), cat_heads[i]);
    if (n_numerical() > 0) {
        nn::append_affine(out, "vae.cont_mu", cont_mu);
        nn::append_affine(out, "vae.cont_logvar", cont_logvar);
    }
}

namespace {

Matrix mlp_forward(const Matrix& x, const std::vector<nn::Affine>& layers) {
    Matrix h = x;
    for (const auto& layer : layers) h = nn::affine_forward(h, layer).cwiseMax(0.0);
    return h;
}

} // namespace

std::pair<Matrix, Matrix> encode_posterior(const EncodedBatch& x, const VaeParams& params) {
    if (params.encoder.empty() || x.matrix.cols() != params.encoder.front().in())
        throw std::runtime_error("encoder input width mismatch");
    const Matrix h = mlp_forward(x.matrix, params.encoder);
    return {nn::affine_forward(h, params.enc_mu), nn::affine_forward(h, params.enc_logvar)};
}

std::pair<Matrix, Matrix> conditional_prior(const Matrix& c, const VaeParams& params) {
    if (c.cols() != params.prior_l1.in()) throw std::runtime_error("prior input width mismatch");
    const Matrix h = nn::affine_forward(c, params.prior_l1).cwiseMax(0.0);
    return {nn::affine_forward(h, params.prior_mu), nn::affine_forward(h, params.prior_logvar)};
}

double gaussian_kl(const Matrix& mu, const Matrix& logvar, const Matrix& mu_p,
                   const Matrix& logvar_p) {
    if (mu.rows() != logvar.rows() || mu.rows() != mu_p.rows() || mu.rows() != logvar_p.rows() ||
        mu.cols() != logvar.cols() || mu.cols() != mu_p.cols() || mu.cols() != logvar_p.cols())
        throw std::runtime_error("gaussian_kl dimension mismatch");
    const Eigen::ArrayXXd term = (logvar_p - logvar).array() + (logvar - logvar_p).array().exp() +
                                 (mu - mu_p).array().square() * (-logvar_p.array()).exp() - 1.0;
    return 0.5 * term.rowwise().sum().mean();
}

VaeNoise make_vae_noise(const VaeParams& params, const VaeTrainingConfig& cfg, Index batch,
                        Rng& rng, bool training) {
    VaeNoise noise;
    noise.epsilon = rng.normal_matrix(batch, params.latent_dim);
    if (training && cfg.dropout > 0.0) {
        for (const auto& layer : params.encoder)
            noise.enc_masks.push_back(nn::dropout_mask(batch, layer.out(), cfg.dropout, rng));
        for (const auto& layer : params.decoder)
            noise.dec_masks.push_back(nn::dropout_mask(batch, layer.out(), cfg.dropout, rng));
    }
    if (training && params.adapter.dropout > 0.0)
        noise.adapter_mask =
            nn::dropout_mask(batch, params.adapter.l1.out(), params.adapter.dropout, rng);
    return noise;
}

namespace {

struct DecoderOut {
    std::vector<ad::Val> cat_logits;
    ad::Val cont_mu{nullptr, -1};
    ad::Val cont_logvar{nullptr, -1};
    ad::Val recon_encoded{nullptr, -1}; // softmax blocks + cont means
};

DecoderOut decoder_forward(nn::Binder& binder, ad::Val z, ad::Val c, const VaeParams& params,
                           const std::vector<Matrix>* dec_masks, bool apply_film) {
    ad::Tape& t = *z.tape;
    ad::Val h = z;
    for (std::size_t l = 0; l < params.decoder.size(); ++l) {
        h = t.relu(nn::apply(nn::bind(binder, params.decoder[l]), h));
        if (apply_film) h = film_graph(binder, h, c, params.dec_film[l]);
        if (dec_masks && !dec_masks->empty()) h = t.cmul(h, t.constant((*dec_masks)[l]));
    }
    DecoderOut out;
    for (const auto& head : params.cat_heads)
        out.cat_logits.push_back(nn::apply(nn::bind(binder, head), h));
    if (params.n_numerical() > 0) {
        out.cont_mu = nn::apply(nn::bind(binder, params.cont_mu), h);
        out.cont_logvar = nn::apply(nn::bind(binder, params.cont_logvar), h);
    }
    std::size_t cat_i = 0;
    Index cont_i = 0;
    for (std::size_t j = 0; j < params.var_kinds.size(); ++j) {
        ad::Val block{nullptr, -1};
        if (params.var_kinds[j] == AttrKind::Categorical) {
            block = ad::softmax_rows(out.cat_logits[cat_i++]);
        } else {
            block = t.block(out.cont_mu, 0, cont_i++, z.rows(), 1);
        }
        out.recon_encoded = out.recon_encoded.id < 0 ? block : t.hcat(out.recon_encoded, block);
    }
    return out;
}

} // namespace

VaeLossVals vae_loss_graph(nn::Binder& binder, const Matrix& x_encoded, ad::Val c,
                           const VaeParams& params, const VaeTrainingConfig& cfg,
                           const MarginalSpec* mspec, const VaeNoise& noise) {
    ad::Tape& t = *c.tape;
    const Index batch = x_encoded.rows();
    const ad::Val x = t.constant(x_encoded);
    const ad::Val c_in = c;

    // encoder (never sees the conditioning input)
    ad::Val h = x;
    for (std::size_t l = 0; l < params.encoder.size(); ++l) {
        h = t.relu(nn::apply(nn::bind(binder, params.encoder[l]), h));
        if (!noise.enc_masks.empty()) h = t.cmul(h, t.constant(noise.enc_masks[l]));
    }
    const ad::Val mu = nn::apply(nn::bind(binder, params.enc_mu), h);
    const ad::Val logvar = nn::apply(nn::bind(binder, params.enc_logvar), h);

    // conditional prior
    const ad::Val hp = t.relu(nn::apply(nn::bind(binder, params.prior_l1), c_in));
    const ad::Val mu_p = nn::apply(nn::bind(binder, params.prior_mu), hp);
    const ad::Val logvar_p = nn::apply(nn::bind(binder, params.prior_logvar), hp);

    // reparameterized sample
    const ad::Val z =
        t.add(mu, t.cmul(t.exp(t.scale(logvar, 0.5)), t.constant(noise.epsilon)));

    const DecoderOut dec = decoder_forward(binder, z, c_in, params,
                                           noise.dec_masks.empty() ? nullptr : &noise.dec_masks,
                                           true);

    VaeLossVals out{t.constant(0.0), t.constant(0.0), t.constant(0.0), t.constant(0.0),
                    t.constant(0.0)};

    // continuous reconstruction: Gaussian NLL in standardized space,
    // averaged over batch and feature dimensions
    const Index n_cont = params.n_numerical();
    if (n_cont > 0) {
        std::vector<Index> offsets;
        Index off = 0;
        for (std::size_t j = 0; j < params.var_kinds.size(); ++j) {
            if (params.var_kinds[j] == AttrKind::Numerical) offsets.push_back(off);
            off += params.var_widths[j];
        }
        ad::Val x_cont{nullptr, -1};
        for (Index o : offsets) {
            const ad::Val col = t.block(x, 0, o, batch, 1);
            x_cont = x_cont.id < 0 ? col : t.hcat(x_cont, col);
        }
        const ad::Val lv = t.clamp(dec.cont_logvar, -cfg.logvar_clamp, cfg.logvar_clamp);
        const ad::Val resid = t.sub(x_cont, dec.cont_mu);
        const ad::Val nll =
            ad::add_scalar(t.add(t.scale(lv, 0.5),
                                 t.scale(t.cmul(ad::square(resid), t.exp(t.neg(lv))), 0.5)),
                           0.5 * std::log(2.0 * std::numbers::pi));
        out.cont_rec = ad::mean_all(nll);
    }

    // categorical reconstruction: cross-entropy averaged over the J
    // categorical variables
    if (!params.cat_heads.empty()) {
        ad::Val ce_sum = t.constant(0.0);
        std::size_t cat_i = 0;
        Index off = 0;
        for (std::size_t j = 0; j < params.var_kinds.size(); ++j) {
            const Index w = params.var_widths[j];
            if (params.var_kinds[j] == AttrKind::Categorical) {
                const ad::Val target = t.block(x, 0, off, batch, w);
                const ad::Val logp = ad::log_softmax_rows(dec.cat_logits[cat_i++]);
                const ad::Val ce = t.scale(t.sum_all(t.cmul(target, logp)),
                                           -1.0 / static_cast<double>(batch));
                ce_sum = t.add(ce_sum, ce);
            }
            off += w;
        }
        out.cat_rec = t.scale(ce_sum, 1.0 / static_cast<double>(params.cat_heads.size()));
    }

    // KL against the learned prior, summed over dims, batch mean
    {
        const ad::Val d1 = t.sub(logvar_p, logvar);
        const ad::Val d2 = t.exp(t.sub(logvar, logvar_p));
        const ad::Val d3 = t.cmul(ad::square(t.sub(mu, mu_p)), t.exp(t.neg(logvar_p)));
        const ad::Val inner = ad::add_scalar(t.add(t.add(d1, d2), d3), -1.0);
        out.kl = t.scale(t.sum_all(inner), 0.5 / static_cast<double>(batch));
    }

    if (mspec) out.marg = marginal_loss_graph(dec.recon_encoded, *mspec, cfg.marg_eps);

    out.total = t.add(t.add(out.cont_rec, out.cat_rec),
                      t.add(t.scale(out.kl, cfg.beta), t.scale(out.marg, cfg.lambda_m)));
    return out;
}

VaeLossBreakdown vae_loss(const EncodedBatch& x, const Matrix& c, const VaeParams& params,
                          const VaeTrainingConfig& cfg, const MarginalSpec* mspec,
                          std::uint64_t seed) {
    Rng rng(Rng::derive(seed, "vae_loss"));
    const VaeNoise noise = make_vae_noise(params, cfg, x.matrix.rows(), rng, false);
    ad::Tape tape;
    nn::Binder binder(tape, false);
    const VaeLossVals vals =
        vae_loss_graph(binder, x.matrix, tape.constant(c), params, cfg, mspec, noise);
    return {vals.total.scalar(), vals.cont_rec.scalar(), vals.cat_rec.scalar(), vals.kl.scalar(),
            vals.marg.scalar()};
}

Matrix vae_decode(const Matrix& z, const Matrix& c, const VaeParams& params, bool apply_film) {
    ad::Tape tape;
    nn::Binder binder(tape, false);
    const DecoderOut out =
        decoder_forward(binder, tape.constant(z), tape.constant(c), params, nullptr, apply_film);
    return out.recon_encoded.v();
}

std::string vae_metrics_csv(const std::vector<VaeEpochMetrics>& metrics) {
    std::ostringstream out;
    out << "epoch,loss,L_cont_rec,L_cat_rec,L_kl,L_marg\n";
    for (const auto& m : metrics) {
        out << m.epoch << ',' << format_real(m.loss) << ',' << format_real(m.cont_rec) << ','
            << format_real(m.cat_rec) << ',' << format_real(m.kl) << ',' << format_real(m.marg)
            << '\n';
    }
    return out.str();
}

VaeTrainResult train_vae(const Population& train, const EmbeddingMatrix& embeddings,
                         const AttributeSchema& schema, const MarginalSpec& mspec,
                         const VaeTrainingConfig& cfg) {
    cfg.validate();
    if (!schema.has_fitted_stats()) throw std::runtime_error("train_vae requires fitted schema stats");
    if (embeddings.n() != train.n())
        throw std::runtime_error("embeddings are not row-aligned with the training population");
    mspec.validate();

    const Matrix real_all = encode(train, schema).matrix;
    const Index n = train.n();

    Rng init_rng(Rng::derive(cfg.seed, "vae_init"));
    VaeTrainResult result;
    result.params = VaeParams::init(schema, embeddings.dim(), cfg, init_rng);

    std::vector<Matrix*> theta;
    result.params.collect(theta);
    nn::Adam adam({cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});

    Rng rng(Rng::derive(cfg.seed, "vae_loop"));
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        VaeEpochMetrics em;
        em.epoch = epoch;
        int batches = 0;
        for (Index start = 0; start < n; start += cfg.batch_size) {
            const Index b = std::min<Index>(cfg.batch_size, n - start);
            Matrix x_b(b, real_all.cols());
            Matrix e_b(b, embeddings.dim());
            for (Index i = 0; i < b; ++i) {
                x_b.row(i) = real_all.row(order[static_cast<std::size_t>(start + i)]);
                e_b.row(i) = embeddings.matrix.row(order[static_cast<std::size_t>(start + i)]);
            }
            const VaeNoise noise = make_vae_noise(result.params, cfg, b, rng, true);

            ad::Tape tape;
            nn::Binder binder(tape, true);
            const ad::Val c =
                adapt_graph(binder, tape.constant(e_b), result.params.adapter,
                            noise.adapter_mask.size() ? &noise.adapter_mask : nullptr);
            const VaeLossVals vals = vae_loss_graph(binder, x_b, c, result.params, cfg, &mspec, noise);
            const auto grads = tape.gradients(vals.total, binder.bound(theta));
            std::vector<Matrix> grad_values;
            grad_values.reserve(grads.size());
            for (const auto& g : grads) grad_values.push_back(g.v());
            adam.step(theta, grad_values);

            em.loss += vals.total.scalar();
            em.cont_rec += vals.cont_rec.scalar();
            em.cat_rec += vals.cat_rec.scalar();
            em.kl += vals.kl.scalar();
            em.marg += vals.marg.scalar();
            ++batches;
        }
        em.loss /= batches;
        em.cont_rec /= batches;
        em.cat_rec /= batches;
        em.kl /= batches;
        em.marg /= batches;
        if (!std::isfinite(em.loss))
            throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                     ": loss=" + format_real(em.loss));
        result.metrics.push_back(em);
    }
    return result;
}

ModelCheckpoint vae_checkpoint(VaeTrainResult& result, const AttributeSchema& schema,
                               const MarginalSpec& mspec, const VaeTrainingConfig& cfg) {
    ModelCheckpoint ckpt;
    ckpt.backbone = "vae";
    ckpt.schema = schema;
    ckpt.marginal_spec = mspec;
    ckpt.config_echo = cfg.to_json();
    ckpt.flags["latent_dim"] = std::to_string(result.params.latent_dim);
    ckpt.flags["adapter_dropout"] = format_real(result.params.adapter.dropout);
    nn::NamedTensors tensors;
    result.params.append_tensors(tensors);
    for (const auto& [name, mat] : tensors) ckpt.tensors[name] = quantize_f32(*mat);
    return ckpt;
}

namespace {

nn::Affine vae_affine(const ModelCheckpoint& ckpt, const std::string& prefix) {
    nn::Affine a;
    a.W = ckpt.tensor(prefix + ".W");
    a.b = ckpt.tensor(prefix + ".b");
    return a;
}

} // namespace

VaeParams vae_from_checkpoint(const ModelCheckpoint& ckpt) {
    if (ckpt.backbone != "vae")
        throw std::runtime_error("checkpoint backbone is '" + ckpt.backbone + "', expected vae");
    VaeParams p;
    p.latent_dim = std::stol(ckpt.flag("latent_dim"));
    p.adapter.l1 = vae_affine(ckpt, "vae.adapter.l1");
    p.adapter.l2 = vae_affine(ckpt, "vae.adapter.l2");
    p.adapter.dropout = std::stod(ckpt.flag("adapter_dropout"));
    Index count = 0;
    while (ckpt.tensors.count("vae.enc" + std::to_string(count) + ".W")) ++count;
    for (Index l = 0; l < count; ++l) p.encoder.push_back(vae_affine(ckpt, "vae.enc" + std::to_string(l)));
    p.enc_mu = vae_affine(ckpt, "vae.enc_mu");
    p.enc_logvar = vae_affine(ckpt, "vae.enc_logvar");
    p.prior_l1 = vae_affine(ckpt, "vae.prior_l1");
    p.prior_mu = vae_affine(ckpt, "vae.prior_mu");
    p.prior_logvar = vae_affine(ckpt, "vae.prior_logvar");
    count = 0;
    while (ckpt.tensors.count("vae.dec" + std::to_string(count) + ".W")) ++count;
    for (Index l = 0; l < count; ++l) {
        p.decoder.push_back(vae_affine(ckpt, "vae.dec" + std::to_string(l)));
        FiLMLayerParams f;
        f.gamma = vae_affine(ckpt, "vae.film" + std::to_string(l) + ".gamma");
        f.beta = vae_affine(ckpt, "vae.film" + std::to_string(l) + ".beta");
        p.dec_film.push_back(std::move(f));
    }
    std::size_t cat_i = 0;
    for (const auto& spec : ckpt.schema.specs) {
        p.var_kinds.push_back(spec.kind);
        p.var_widths.push_back(spec.encoded_width());
        if (spec.kind == AttrKind::Categorical)
            p.cat_heads.push_back(vae_affine(ckpt, "vae.cat_head" + std::to_string(cat_i++)));
    }
    if (p.n_numerical() > 0) {
        p.cont_mu = vae_affine(ckpt, "vae.cont_mu");
        p.cont_logvar = vae_affine(ckpt, "vae.cont_logvar");
    }
    return p;
}

Population sample_vae(const ModelCheckpoint& ckpt, const EmbeddingMatrix& embeddings,
                      std::uint64_t seed) {
    const VaeParams params = vae_from_checkpoint(ckpt);
    if (embeddings.dim() != params.adapter.in_dim())
        throw std::runtime_error("embedding dim does not match checkpoint adapter");
    const Matrix c = adapt(embeddings.matrix, params.adapter, false, 0);
    const auto [mu_p, logvar_p] = conditional_prior(c, params);
    Rng rng(Rng::derive(seed, "vae_sample"));
    const Matrix eps = rng.normal_matrix(embeddings.n(), params.latent_dim);
    const Matrix z = mu_p + (0.5 * logvar_p.array()).exp().matrix().cwiseProduct(eps);
    EncodedBatch batch;
    batch.matrix = vae_decode(z, c, params);
    // exact one-hots before the hard schema decode
    Index off = 0;
    for (std::size_t j = 0; j < params.var_kinds.size(); ++j) {
        const Index w = params.var_widths[j];
        if (params.var_kinds[j] == AttrKind::Categorical) {
            for (Index i = 0; i < batch.matrix.rows(); ++i) {
                Index best = 0;
                for (Index k = 1; k < w; ++k)
                    if (batch.matrix(i, off + k) > batch.matrix(i, off + best)) best = k;
                batch.matrix.row(i).segment(off, w).setZero();
                batch.matrix(i, off + best) = 1.0;
            }
        }
        off += w;
    }
    return decode(batch, ckpt.schema, DecodeMode::Hard);
}

} // namespace semapop
