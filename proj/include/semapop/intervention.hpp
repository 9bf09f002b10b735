#pragma once

#include "semapop/checkpoint.hpp"
#include "semapop/embedding.hpp"
#include "semapop/persona.hpp"
#include "semapop/population.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace semapop {

// Column-wise standardizer fit on training-split embeddings only.
struct EmbeddingStandardizer {
    RowVector mu;
    RowVector sigma; // floored at 1e-8

    Matrix apply(const Matrix& e) const;
};

std::pair<EmbeddingStandardizer, Matrix> standardize_embeddings(const EmbeddingMatrix& train);

// Unit-norm direction from a ridge-regularized logistic probe.
struct InterventionDirection {
    Vector d;
    double probe_lambda = 1.0;
    std::string target_label_def;
};

// Full-batch Newton minimization of logistic loss + lambda * ||w||^2 to
// gradient norm < 1e-6; d = w*/||w*||.
InterventionDirection fit_direction(const Matrix& e_std, const std::vector<int>& y, double lambda,
                                    const std::string& label_def = "");

// e0 + alpha * d, unprojected and unnormalized.
Vector edit_embedding(const Vector& e0, const InterventionDirection& dir, double alpha);
Matrix edit_embeddings(const Matrix& e0, const InterventionDirection& dir, double alpha);

std::vector<double> default_alpha_grid(); // {-1.5, -1.0, -0.5, 0, 0.5, 1.0, 1.5}

struct SemanticSweepRow {
    double alpha = 0.0;
    double mean_target = 0.0;
    double activation = 0.0; // P(target > 0) after decode
    std::vector<std::pair<std::string, double>> side_effects; // vs the alpha = 0 baseline
};

struct SweepReport {
    std::string target_attr;
    std::vector<SemanticSweepRow> rows;
};

std::string sweep_report_csv(const SweepReport& report);

// Same-z protocol: Z (and the decoding noise) is drawn once under seed and
// reused for every alpha, so output changes are attributable to the edit.
SweepReport semantic_sweep(const ModelCheckpoint& ckpt, const EmbeddingMatrix& e0,
                           const InterventionDirection& dir, const std::vector<double>& alphas,
                           const std::string& target_attr, std::uint64_t seed);

// Mean |edited - base| per numerical attribute except the target.
std::vector<std::pair<std::string, double>> side_effects(const Population& x_base,
                                                         const Population& x_edited,
                                                         const AttributeSchema& schema,
                                                         const std::string& target_attr);

struct Subgroups {
    std::vector<Index> high; // top 10% of positive-target agents by value
    std::vector<Index> low;  // 5% of remaining positive + 5% of zero-target
};

Subgroups build_subgroups(const Population& pop, const AttributeSchema& schema,
                          const std::string& target_attr, std::uint64_t seed);

enum class TextEditVariant { Insertion, Removal, Suppression };

std::string to_string(TextEditVariant v);
TextEditVariant text_edit_variant_from_string(const std::string& s);

// Constrained-edit prompt for one persona text.
std::string render_edit_prompt(const std::string& persona, TextEditVariant variant,
                               const std::string& target_cue);

// One edited text per input, via the variant's prompt template; cached with
// the variant recorded in the key.
GenerationResult text_edit(const std::vector<std::string>& personas, TextEditVariant variant,
                           const LLMClientConfig& client, const std::filesystem::path& cache_dir,
                           const std::string& target_cue = "public transport use");

struct TextSweepRow {
    std::string variant;
    double d_mean = 0.0;
    double d_activation = 0.0;
    double d_median = 0.0;
    double d_p25 = 0.0;
    double d_p75 = 0.0;
};

std::string text_sweep_csv(const std::vector<TextSweepRow>& rows);

// Linear-interpolation percentile between order statistics
// (position q * (n + 1) - 1, clamped).
double percentile(std::vector<double> values, double q);

using EmbedFn = std::function<EmbeddingMatrix(const std::vector<std::string>&)>;

// Re-encode base and edited texts with the same embedder, generate with one
// shared Z, and report per-variant deltas against the base generation.
std::vector<TextSweepRow> text_sweep(const ModelCheckpoint& ckpt,
                                     const std::vector<std::string>& base_texts,
                                     const std::vector<std::pair<std::string, std::vector<std::string>>>&
                                         edited_texts_by_variant,
                                     const EmbedFn& embed_fn, std::uint64_t z_seed,
                                     const std::string& target_attr);

} // namespace semapop
