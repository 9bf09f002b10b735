#pragma once

#include "semapop/marginal.hpp"
#include "semapop/population.hpp"
#include "semapop/schema.hpp"

#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace semapop {

struct MetricReport {
    double srmse_m = 0.0;
    double srmse_b = 0.0;
    double precision = 0.0; // percent
    double recall = 0.0;    // percent
    double f1 = 0.0;        // percent
    std::optional<double> ess;
    std::vector<std::pair<std::string, double>> per_variable;
    std::vector<std::tuple<std::string, std::string, double>> per_pair;

    std::string to_json() const;
    static std::string csv_header();
    std::string csv_row() const;
};

// sqrt((1/N) sum (p_hat - p)^2) / ((1/N) sum p)
double srmse(const Vector& p_hat, const Vector& p);

// Discrete support index of one cell: the category index, or the nearest
// bin center for numerical attributes.
Index metric_index(double cell, const AttributeSpec& attr, const MarginalVariable& var);
Index metric_support(const AttributeSpec& attr, const MarginalVariable& var);

// Weighted empirical pmf of one attribute over its metric support;
// null weights mean uniform.
Vector empirical_pmf(const Population& pop, const AttributeSchema& schema,
                     const MarginalSpec& spec, Index attr, const Vector* weights = nullptr);

Matrix empirical_pair_pmf(const Population& pop, const AttributeSchema& schema,
                          const MarginalSpec& spec, Index a, Index b,
                          const Vector* weights = nullptr);

// Mean srmse over all variables (univariate marginals).
double srmse_m(const Population& gen, const Population& ref, const AttributeSchema& schema,
               const MarginalSpec& spec, const Vector* gen_weights = nullptr,
               std::vector<std::pair<std::string, double>>* breakdown = nullptr);

// Mean srmse over all unordered variable pairs (bivariate joint tables).
double srmse_b(const Population& gen, const Population& ref, const AttributeSchema& schema,
               const MarginalSpec& spec, const Vector* gen_weights = nullptr,
               std::vector<std::tuple<std::string, std::string, double>>* breakdown = nullptr);

// Tuple membership over the discretized attribute tuple; integer-valued
// numerical attributes compare as exact integers. Percentages.
std::tuple<double, double, double> precision_recall_f1(
    const Population& gen, const Population& ref, const AttributeSchema& schema,
    const MarginalSpec& spec, const std::vector<std::string>* attribute_subset = nullptr);

// Effective sample size of normalized weights: 1 / sum w_i^2.
double ess(const Vector& weights);

MetricReport evaluate_all(const Population& gen, const Population& ref,
                          const AttributeSchema& schema, const MarginalSpec& spec,
                          const Vector* gen_weights = nullptr);

} // namespace semapop
