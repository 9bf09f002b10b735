#include "semapop/intervention.hpp"

#include "semapop/gan.hpp"
#include "semapop/io_util.hpp"
#include "semapop/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace semapop {

Matrix EmbeddingStandardizer::apply(const Matrix& e) const {
    if (e.cols() != mu.cols()) throw std::runtime_error("standardizer dimension mismatch");
    return (e.rowwise() - mu.row(0)).array().rowwise() / sigma.row(0).array();
}

std::pair<EmbeddingStandardizer, Matrix> standardize_embeddings(const EmbeddingMatrix& train) {
    if (train.n() < 2)
        throw std::runtime_error("standardize_embeddings needs at least 2 rows");
    EmbeddingStandardizer s;
    s.mu = train.matrix.colwise().mean();
    const Matrix centered = train.matrix.rowwise() - s.mu.row(0);
    s.sigma = (centered.array().square().colwise().sum() / static_cast<double>(train.n()))
                  .sqrt()
                  .matrix();
    s.sigma = s.sigma.cwiseMax(1e-8);
    return {s, s.apply(train.matrix)};
}

namespace {

double probe_objective(const Matrix& x, const Vector& y, const Vector& w, double lambda) {
    const Vector m = x * w;
    double loss = lambda * w.squaredNorm();
    for (Index i = 0; i < m.size(); ++i) {
        // softplus(m) - y*m, evaluated stably
        loss += std::max(m(i), 0.0) + std::log1p(std::exp(-std::abs(m(i)))) - y(i) * m(i);
    }
    return loss;
}

} // namespace

InterventionDirection fit_direction(const Matrix& e_std, const std::vector<int>& y, double lambda,
                                    const std::string& label_def) {
    if (lambda <= 0.0) throw std::runtime_error("probe lambda must be > 0");
    if (static_cast<Index>(y.size()) != e_std.rows())
        throw std::runtime_error("labels misaligned with embedding rows");
    Vector yv(e_std.rows());
    bool has0 = false, has1 = false;
    for (Index i = 0; i < e_std.rows(); ++i) {
        if (y[static_cast<std::size_t>(i)] == 0) has0 = true;
        else if (y[static_cast<std::size_t>(i)] == 1) has1 = true;
        else throw std::runtime_error("probe labels must be 0 or 1");
        yv(i) = y[static_cast<std::size_t>(i)];
    }
    if (!has0 || !has1) throw std::runtime_error("probe labels contain a single class");

    const Index d = e_std.cols();
    Vector w = Vector::Zero(d);
    for (int iter = 0; iter < 200; ++iter) {
        const Vector m = e_std * w;
        const Vector p = (1.0 / (1.0 + (-m.array()).exp())).matrix();
        const Vector grad = e_std.transpose() * (p - yv) + 2.0 * lambda * w;
        if (grad.norm() < 1e-6) break;
        const Vector s = (p.array() * (1.0 - p.array())).matrix();
        Matrix hess = e_std.transpose() * s.asDiagonal() * e_std;
        hess.diagonal().array() += 2.0 * lambda;
        const Vector step = hess.ldlt().solve(-grad);
        double t = 1.0;
        const double f0 = probe_objective(e_std, yv, w, lambda);
        const double slope = grad.dot(step);
        while (t > 1e-12 &&
               probe_objective(e_std, yv, w + t * step, lambda) > f0 + 1e-4 * t * slope)
            t *= 0.5;
        w += t * step;
    }
    const Vector m = e_std * w;
    const Vector p = (1.0 / (1.0 + (-m.array()).exp())).matrix();
    const Vector grad = e_std.transpose() * (p - yv) + 2.0 * lambda * w;
    if (grad.norm() >= 1e-6)
        throw std::runtime_error("probe did not converge to gradient norm < 1e-6 (reached " +
                                 format_real(grad.norm()) + ")");
    const double norm = w.norm();
    if (norm == 0.0) throw std::runtime_error("probe produced a zero direction");
    InterventionDirection dir;
    dir.d = w / norm;
    dir.probe_lambda = lambda;
    dir.target_label_def = label_def;
    return dir;
}

Vector edit_embedding(const Vector& e0, const InterventionDirection& dir, double alpha) {
    if (e0.size() != dir.d.size()) throw std::runtime_error("edit_embedding dimension mismatch");
    return e0 + alpha * dir.d;
}

Matrix edit_embeddings(const Matrix& e0, const InterventionDirection& dir, double alpha) {
    if (e0.cols() != dir.d.size()) throw std::runtime_error("edit_embeddings dimension mismatch");
    return e0.rowwise() + (alpha * dir.d).transpose();
}

std::vector<double> default_alpha_grid() { return {-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5}; }

std::string sweep_report_csv(const SweepReport& report) {
    std::ostringstream out;
    out << "alpha,mean_target,activation";
    if (!report.rows.empty())
        for (const auto& [name, _] : report.rows.front().side_effects) out << ",side_" << name;
    out << '\n';
    for (const auto& row : report.rows) {
        out << format_real(row.alpha) << ',' << format_real(row.mean_target) << ','
            << format_real(row.activation);
        for (const auto& [_, v] : row.side_effects) out << ',' << format_real(v);
        out << '\n';
    }
    return out.str();
}

namespace {

std::pair<double, double> target_stats(const Population& pop, Index target_col) {
    const auto n = static_cast<double>(pop.n());
    double mean = 0.0, active = 0.0;
    for (Index i = 0; i < pop.n(); ++i) {
        mean += pop.values(i, target_col);
        if (pop.values(i, target_col) > 0.0) active += 1.0;
    }
    return {mean / n, active / n};
}

} // namespace

SweepReport semantic_sweep(const ModelCheckpoint& ckpt, const EmbeddingMatrix& e0,
                           const InterventionDirection& dir, const std::vector<double>& alphas,
                           const std::string& target_attr, std::uint64_t seed) {
    if (alphas.empty()) throw std::runtime_error("alpha grid is empty");
    const Index target_col = ckpt.schema.find(target_attr);
    if (target_col < 0 ||
        ckpt.schema.specs[static_cast<std::size_t>(target_col)].kind != AttrKind::Numerical)
        throw std::runtime_error("sweep target '" + target_attr + "' must be a numerical attribute");

    const GeneratorParams params = generator_from_checkpoint(ckpt);
    Rng z_rng(Rng::derive(seed, "sweep_z"));
    const Matrix z = z_rng.normal_matrix(e0.n(), params.noise_dim);
    const std::uint64_t gumbel_seed = Rng::derive(seed, "sweep_gumbel");
    const double tau = std::stod(ckpt.flag("gumbel_tau"));

    auto generate_at = [&](double alpha) {
        const Matrix edited = edit_embeddings(e0.matrix, dir, alpha);
        const Matrix c = adapt(edited, params.adapter, false, 0);
        const EncodedBatch batch = generate(z, c, params, tau, true, gumbel_seed);
        return decode(batch, ckpt.schema, DecodeMode::Hard);
    };

    const Population baseline = generate_at(0.0);
    SweepReport report;
    report.target_attr = target_attr;
    for (double alpha : alphas) {
        const Population pop = alpha == 0.0 ? baseline : generate_at(alpha);
        SemanticSweepRow row;
        row.alpha = alpha;
        std::tie(row.mean_target, row.activation) = target_stats(pop, target_col);
        row.side_effects = side_effects(baseline, pop, ckpt.schema, target_attr);
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::vector<std::pair<std::string, double>> side_effects(const Population& x_base,
                                                         const Population& x_edited,
                                                         const AttributeSchema& schema,
                                                         const std::string& target_attr) {
    if (x_base.n() != x_edited.n())
        throw std::runtime_error("side_effects requires equal row counts");
    if (x_base.values.cols() != schema.size() || x_edited.values.cols() != schema.size())
        throw std::runtime_error("side_effects schema mismatch");
    std::vector<std::pair<std::string, double>> out;
    for (Index j = 0; j < schema.size(); ++j) {
        const auto& spec = schema.specs[static_cast<std::size_t>(j)];
        if (spec.kind != AttrKind::Numerical || spec.name == target_attr) continue;
        const double delta =
            (x_edited.values.col(j) - x_base.values.col(j)).array().abs().mean();
        out.emplace_back(spec.name, delta);
    }
    return out;
}

Subgroups build_subgroups(const Population& pop, const AttributeSchema& schema,
                          const std::string& target_attr, std::uint64_t seed) {
    const Index j = schema.find(target_attr);
    if (j < 0) throw std::runtime_error("unknown subgroup target attribute: " + target_attr);
    std::vector<Index> positive, zero;
    for (Index i = 0; i < pop.n(); ++i) {
        if (pop.values(i, j) > 0.0) positive.push_back(i);
        else if (pop.values(i, j) == 0.0) zero.push_back(i);
    }
    if (positive.empty()) throw std::runtime_error("no positive-target agents for subgroup analysis");

    // Rank positives by target value, ties broken by agent index.
    std::vector<Index> ranked = positive;
    std::stable_sort(ranked.begin(), ranked.end(), [&](Index a, Index b) {
        if (pop.values(a, j) != pop.values(b, j)) return pop.values(a, j) > pop.values(b, j);
        return a < b;
    });
    const auto n_high = static_cast<std::size_t>(
        round_half_away(0.10 * static_cast<double>(positive.size())));
    Subgroups groups;
    groups.high.assign(ranked.begin(),
                       ranked.begin() + static_cast<std::ptrdiff_t>(std::min(n_high, ranked.size())));

    std::vector<Index> remaining(ranked.begin() + static_cast<std::ptrdiff_t>(groups.high.size()),
                                 ranked.end());
    Rng rng(Rng::derive(seed, "subgroups"));
    rng.shuffle(remaining);
    const auto n_low_pos = std::min(
        static_cast<std::size_t>(round_half_away(0.05 * static_cast<double>(positive.size()))),
        remaining.size());
    groups.low.assign(remaining.begin(), remaining.begin() + static_cast<std::ptrdiff_t>(n_low_pos));

    rng.shuffle(zero);
    const auto n_low_zero = std::min(
        static_cast<std::size_t>(round_half_away(0.05 * static_cast<double>(zero.size()))),
        zero.size());
    groups.low.insert(groups.low.end(), zero.begin(),
                      zero.begin() + static_cast<std::ptrdiff_t>(n_low_zero));
    std::sort(groups.low.begin(), groups.low.end());
    return groups;
}

std::string to_string(TextEditVariant v) {
    switch (v) {
    case TextEditVariant::Insertion: return "insertion";
    case TextEditVariant::Removal: return "removal";
    case TextEditVariant::Suppression: return "suppression";
    }
    return "insertion";
}

TextEditVariant text_edit_variant_from_string(const std::string& s) {
    if (s == "insertion") return TextEditVariant::Insertion;
    if (s == "removal") return TextEditVariant::Removal;
    if (s == "suppression") return TextEditVariant::Suppression;
    throw std::runtime_error("unknown text edit variant: " + s);
}

std::string render_edit_prompt(const std::string& persona, TextEditVariant variant,
                               const std::string& target_cue) {
    std::ostringstream out;
    out << "You are editing a persona description. Apply the smallest possible change, keep the "
           "text grammatical and the narrative coherent, and return only the edited text.\n";
    switch (variant) {
    case TextEditVariant::Insertion:
        out << "Edit: insert a short cue indicating frequent " << target_cue << ".\n";
        break;
    case TextEditVariant::Removal:
        out << "Edit: delete any phrase that signals " << target_cue << ".\n";
        break;
    case TextEditVariant::Suppression:
        out << "Edit: rephrase the description so that " << target_cue
            << " is absent from this person's habits, adjusting the surrounding context.\n";
        break;
    }
    out << "Persona:\n" << persona << '\n';
    return out.str();
}

GenerationResult text_edit(const std::vector<std::string>& personas, TextEditVariant variant,
                           const LLMClientConfig& client, const std::filesystem::path& cache_dir,
                           const std::string& target_cue) {
    std::vector<PersonaRequest> requests;
    requests.reserve(personas.size());
    for (const auto& text : personas) {
        PersonaRequest req;
        std::uint64_t h = fnv1a64(text);
        h = fnv1a64(to_string(variant), h);
        h = fnv1a64(client.model_name, h);
        h = fnv1a64(target_cue, h);
        req.key = hex64(h);
        req.prompt = render_edit_prompt(text, variant, target_cue);
        requests.push_back(std::move(req));
    }
    return generate_personas_cached(requests, client, cache_dir);
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::runtime_error("percentile of empty sample");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    const double pos = std::clamp(q * (n + 1.0) - 1.0, 0.0, n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

std::string text_sweep_csv(const std::vector<TextSweepRow>& rows) {
    std::ostringstream out;
    out << "variant,d_mean,d_activation,d_median,d_p25,d_p75\n";
    for (const auto& r : rows) {
        out << r.variant << ',' << format_real(r.d_mean) << ',' << format_real(r.d_activation)
            << ',' << format_real(r.d_median) << ',' << format_real(r.d_p25) << ','
            << format_real(r.d_p75) << '\n';
    }
    return out.str();
}

std::vector<TextSweepRow> text_sweep(const ModelCheckpoint& ckpt,
                                     const std::vector<std::string>& base_texts,
                                     const std::vector<std::pair<std::string, std::vector<std::string>>>&
                                         edited_texts_by_variant,
                                     const EmbedFn& embed_fn, std::uint64_t z_seed,
                                     const std::string& target_attr) {
    const Index target_col = ckpt.schema.find(target_attr);
    if (target_col < 0) throw std::runtime_error("unknown sweep target: " + target_attr);
    const GeneratorParams params = generator_from_checkpoint(ckpt);
    const EmbeddingMatrix base_emb = embed_fn(base_texts);
    Rng z_rng(Rng::derive(z_seed, "text_sweep_z"));
    const Matrix z = z_rng.normal_matrix(base_emb.n(), params.noise_dim);
    const std::uint64_t gumbel_seed = Rng::derive(z_seed, "text_sweep_gumbel");
    const double tau = std::stod(ckpt.flag("gumbel_tau"));

    auto generate_from = [&](const EmbeddingMatrix& emb) {
        const Matrix c = adapt(emb.matrix, params.adapter, false, 0);
        return decode(generate(z, c, params, tau, true, gumbel_seed), ckpt.schema,
                      DecodeMode::Hard);
    };

    const Population base_pop = generate_from(base_emb);
    const auto [base_mean, base_act] = target_stats(base_pop, target_col);

    std::vector<TextSweepRow> rows;
    for (const auto& [variant, texts] : edited_texts_by_variant) {
        if (texts.size() != base_texts.size())
            throw std::runtime_error("variant '" + variant + "' texts misaligned with base");
        const EmbeddingMatrix emb = embed_fn(texts);
        if (emb.dim() != base_emb.dim())
            throw std::runtime_error("embedder mismatch between base and edited runs");
        const Population pop = generate_from(emb);
        const auto [mean, act] = target_stats(pop, target_col);
        std::vector<double> diffs(static_cast<std::size_t>(pop.n()));
        for (Index i = 0; i < pop.n(); ++i)
            diffs[static_cast<std::size_t>(i)] =
                pop.values(i, target_col) - base_pop.values(i, target_col);
        TextSweepRow row;
        row.variant = variant;
        row.d_mean = mean - base_mean;
        row.d_activation = act - base_act;
        row.d_median = percentile(diffs, 0.5);
        row.d_p25 = percentile(diffs, 0.25);
        row.d_p75 = percentile(diffs, 0.75);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace semapop
