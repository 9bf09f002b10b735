#include "semapop/calibration.hpp"

#include "semapop/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace semapop {

void CalibrationTargets::validate(const AttributeSchema& schema, const MarginalSpec& spec) const {
    if (attributes.size() != targets.size())
        throw std::runtime_error("calibration targets misaligned with attribute list");
    for (std::size_t i = 0; i < attributes.size(); ++i) {
        const Index j = schema.find(attributes[i]);
        if (j < 0)
            throw std::runtime_error("constrained attribute '" + attributes[i] +
                                     "' is not in the schema");
        const auto& attr = schema.specs[static_cast<std::size_t>(j)];
        const auto& var = spec.vars[static_cast<std::size_t>(j)];
        if (targets[i].size() != metric_support(attr, var))
            throw std::runtime_error("target for '" + attributes[i] + "' has support " +
                                     std::to_string(targets[i].size()) + ", expected " +
                                     std::to_string(metric_support(attr, var)));
        if (targets[i].minCoeff() < 0.0 || std::abs(targets[i].sum() - 1.0) > 1e-9)
            throw std::runtime_error("target for '" + attributes[i] +
                                     "' does not sum to 1 within 1e-9");
    }
}

Index CalibrationTargets::find(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i] == name) return static_cast<Index>(i);
    return -1;
}

std::string targets_to_json(const CalibrationTargets& targets) {
    nlohmann::json doc;
    doc["attributes"] = targets.attributes;
    doc["targets"] = nlohmann::json::object();
    for (std::size_t i = 0; i < targets.attributes.size(); ++i) {
        const Vector& t = targets.targets[i];
        doc["targets"][targets.attributes[i]] = std::vector<double>(t.data(), t.data() + t.size());
    }
    return doc.dump(2);
}

CalibrationTargets parse_targets_json(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text);
    CalibrationTargets out;
    out.attributes = doc.at("attributes").get<std::vector<std::string>>();
    for (const auto& name : out.attributes) {
        const auto probs = doc.at("targets").at(name).get<std::vector<double>>();
        out.targets.push_back(Eigen::Map<const Vector>(probs.data(), static_cast<Index>(probs.size())));
    }
    return out;
}

CalibrationTargets targets_from_population(const Population& ref, const AttributeSchema& schema,
                                           const MarginalSpec& spec,
                                           const std::vector<std::string>& attributes) {
    CalibrationTargets out;
    out.attributes = attributes;
    for (const auto& name : attributes) {
        const Index j = schema.find(name);
        if (j < 0) throw std::runtime_error("unknown calibration attribute: " + name);
        out.targets.push_back(empirical_pmf(ref, schema, spec, j));
    }
    out.validate(schema, spec);
    return out;
}

void WeightVector::validate() const {
    if (w.size() == 0) throw std::runtime_error("empty weight vector");
    if (w.minCoeff() < 0.0) throw std::runtime_error("weights must be non-negative");
    if (std::abs(w.sum() - 1.0) > 1e-9)
        throw std::runtime_error("weights must be normalized within 1e-9");
}

Vector weighted_marginal(const Population& pop, const AttributeSchema& schema,
                         const MarginalSpec& spec, const WeightVector& w,
                         const std::string& attr) {
    if (w.w.size() != pop.n()) throw std::runtime_error("weights misaligned with population rows");
    const Index j = schema.find(attr);
    if (j < 0) throw std::runtime_error("unknown attribute: " + attr);
    return empirical_pmf(pop, schema, spec, j, &w.w);
}

WeightVector rake(const Population& pop, const AttributeSchema& schema, const MarginalSpec& spec,
                  const CalibrationTargets& targets, int iterations, double damping, double eps,
                  std::vector<std::string>* warnings) {
    if (iterations < 0) throw std::runtime_error("rake iterations must be >= 0");
    if (!(damping > 0.0 && damping <= 1.0))
        throw std::runtime_error("rake damping must lie in (0, 1]");
    targets.validate(schema, spec);
    const Index n = pop.n();
    WeightVector wv;
    wv.w = Vector::Constant(n, 1.0 / static_cast<double>(n));

    // Per-row metric indices of the constrained attributes, computed once.
    std::vector<std::vector<Index>> codes(targets.attributes.size());
    for (std::size_t a = 0; a < targets.attributes.size(); ++a) {
        const Index j = schema.find(targets.attributes[a]);
        const auto& attr = schema.specs[static_cast<std::size_t>(j)];
        const auto& var = spec.vars[static_cast<std::size_t>(j)];
        codes[a].resize(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i)
            codes[a][static_cast<std::size_t>(i)] = metric_index(pop.values(i, j), attr, var);
    }

    std::vector<bool> warned(targets.attributes.size(), false);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t a = 0; a < targets.attributes.size(); ++a) {
            const Vector& target = targets.targets[a];
            Vector current = Vector::Zero(target.size());
            for (Index i = 0; i < n; ++i) current(codes[a][static_cast<std::size_t>(i)]) += wv.w(i);
            Vector ratio(target.size());
            for (Index k = 0; k < target.size(); ++k) {
                if (current(k) == 0.0 && target(k) > 0.0 && warnings && !warned[a]) {
                    warnings->push_back("target category " + std::to_string(k) + " of '" +
                                        targets.attributes[a] +
                                        "' is absent from the population");
                    warned[a] = true;
                }
                ratio(k) = (target(k) + eps) / (current(k) + eps);
            }
            for (Index i = 0; i < n; ++i)
                wv.w(i) *= std::pow(ratio(codes[a][static_cast<std::size_t>(i)]), damping);
            wv.w /= wv.w.sum();
        }
    }
    wv.validate();
    return wv;
}

std::vector<int> default_calibration_levels() { return {0, 5, 10, 20, 40}; }

std::vector<CalibrationRow> calibration_sweep(const Population& gen, const AttributeSchema& schema,
                                              const MarginalSpec& spec,
                                              const CalibrationTargets& targets,
                                              const std::vector<int>& levels, const Population& ref,
                                              double damping, double eps) {
    if (levels.empty() || levels.front() != 0 || !std::is_sorted(levels.begin(), levels.end()))
        throw std::runtime_error("calibration levels must be sorted ascending and include 0");
    std::vector<CalibrationRow> rows;
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const WeightVector w = rake(gen, schema, spec, targets, levels[l], damping, eps);
        CalibrationRow row;
        row.level = static_cast<int>(l);
        row.iterations = levels[l];
        row.srmse_m_weighted = srmse_m(gen, ref, schema, spec, &w.w);
        row.srmse_b_weighted = schema.size() >= 2 ? srmse_b(gen, ref, schema, spec, &w.w) : 0.0;
        row.ess = ess(w.w);
        rows.push_back(row);
    }
    return rows;
}

std::string calibration_rows_to_csv(const std::vector<CalibrationRow>& rows) {
    std::ostringstream out;
    out << "level,iterations,srmse_m_weighted,srmse_b_weighted,ess\n";
    for (const auto& r : rows) {
        out << r.level << ',' << r.iterations << ',' << format_real(r.srmse_m_weighted) << ','
            << format_real(r.srmse_b_weighted) << ',' << format_real(r.ess) << '\n';
    }
    return out.str();
}

} // namespace semapop
