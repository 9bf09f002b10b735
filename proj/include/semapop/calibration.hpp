#pragma once

#include "semapop/marginal.hpp"
#include "semapop/metrics.hpp"
#include "semapop/population.hpp"

#include <string>
#include <vector>

namespace semapop {

// Target marginals for the constrained attributes, applied in declaration
// order (the pass order is part of the reproducibility contract).
struct CalibrationTargets {
    std::vector<std::string> attributes;
    std::vector<Vector> targets; // aligned with `attributes`

    void validate(const AttributeSchema& schema, const MarginalSpec& spec) const;
    Index find(const std::string& name) const;
};

std::string targets_to_json(const CalibrationTargets& targets);
CalibrationTargets parse_targets_json(const std::string& text);

// Targets equal to the reference population's marginals over `attributes`.
CalibrationTargets targets_from_population(const Population& ref, const AttributeSchema& schema,
                                           const MarginalSpec& spec,
                                           const std::vector<std::string>& attributes);

struct WeightVector {
    Vector w; // non-negative, sums to 1

    void validate() const;
};

// p_hat_w(k) = sum_i w_i * 1[x_i^(j) = k] over the metric support.
Vector weighted_marginal(const Population& pop, const AttributeSchema& schema,
                         const MarginalSpec& spec, const WeightVector& w,
                         const std::string& attr);

// Damped raking: multiplicative updates applied sequentially per
// constrained attribute, renormalizing after each pass. iterations = 0
// returns uniform weights.
WeightVector rake(const Population& pop, const AttributeSchema& schema, const MarginalSpec& spec,
                  const CalibrationTargets& targets, int iterations, double damping = 1.0,
                  double eps = 1e-9, std::vector<std::string>* warnings = nullptr);

struct CalibrationRow {
    int level = 0;
    int iterations = 0;
    double srmse_m_weighted = 0.0;
    double srmse_b_weighted = 0.0;
    double ess = 0.0;
};

// Per level: rake, then weighted SRMSE-M / SRMSE-B against the reference
// and the effective sample size.
std::vector<CalibrationRow> calibration_sweep(const Population& gen, const AttributeSchema& schema,
                                              const MarginalSpec& spec,
                                              const CalibrationTargets& targets,
                                              const std::vector<int>& levels, const Population& ref,
                                              double damping = 1.0, double eps = 1e-9);

std::vector<int> default_calibration_levels(); // {0, 5, 10, 20, 40}

std::string calibration_rows_to_csv(const std::vector<CalibrationRow>& rows);

} // namespace semapop
