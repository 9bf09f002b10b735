#pragma once

#include "semapop/autodiff.hpp"
#include "semapop/population.hpp"
#include "semapop/schema.hpp"

#include <string>
#include <vector>

namespace semapop {

// Marginal description of one schema variable. Continuous variables carry
// data-adaptive bin centers (raw value space) with a Gaussian bandwidth;
// the standardization stats are copied in so training-time histograms can
// run in the generator's standardized space.
struct MarginalVariable {
    std::string name;
    AttrKind kind = AttrKind::Categorical;
    Vector reference;    // p^(j), sums to 1
    Vector centers;      // continuous only, strictly increasing
    double sigma = 0.0;  // continuous only, > 0
    double mean = 0.0;   // standardization stats (continuous only)
    double std = 1.0;
    double weight = 1.0;

    Index support_size() const {
        return kind == AttrKind::Categorical ? reference.size() : centers.size();
    }
};

struct MarginalSpec {
    std::vector<MarginalVariable> vars; // schema order

    void validate() const;
    Index find(const std::string& name) const;
    const MarginalVariable& at(const std::string& name) const;
};

std::string marginal_spec_to_json(const MarginalSpec& spec);
MarginalSpec parse_marginal_spec_json(const std::string& text);

// Equal-mass quantile midpoints; duplicates collapse with a warning.
// sigma = half the mean adjacent-center spacing.
std::pair<Vector, double> fit_bins(const Vector& values, int k,
                                   std::vector<std::string>* warnings = nullptr);

Index nearest_center(double value, const Vector& centers);

// Column mean of simplex rows.
Vector categorical_marginal(const Matrix& soft_block, double simplex_tol = 1e-5);

// Batch-averaged softmax kernel assignment over bin centers.
Vector soft_histogram(const Vector& values, const Vector& centers, double sigma);

// Reference marginals (categorical proportions, continuous soft
// histograms) plus bins, computed once from the training split.
MarginalSpec build_marginal_spec(const Population& train, const AttributeSchema& schema,
                                 int bins = 10, std::vector<std::string>* warnings = nullptr);

// Training loss: per variable sqrt(sum_k (p_hat - p)^2 + eps), averaged
// with weights over all variables. Unlike the evaluation SRMSE there is no
// denominator normalization.
double marginal_loss(const EncodedBatch& gen, const MarginalSpec& spec, double eps);

// Differentiable version used inside backbone training graphs; gen holds
// relaxed categorical blocks and standardized numerical columns.
ad::Val marginal_loss_graph(ad::Val gen, const MarginalSpec& spec, double eps);

} // namespace semapop
