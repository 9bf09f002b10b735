#include "semapop/metrics.hpp"

#include "semapop/io_util.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace semapop {

double srmse(const Vector& p_hat, const Vector& p) {
    if (p_hat.size() != p.size() || p.size() < 1)
        throw std::runtime_error("srmse requires equal, non-empty supports");
    if (std::abs(p_hat.sum() - 1.0) > 1e-6 || std::abs(p.sum() - 1.0) > 1e-6)
        throw std::runtime_error("srmse inputs must be normalized within 1e-6");
    const auto n = static_cast<double>(p.size());
    const double rmse = std::sqrt((p_hat - p).squaredNorm() / n);
    const double denom = p.sum() / n;
    return rmse / denom;
}

Index metric_support(const AttributeSpec& attr, const MarginalVariable& var) {
    return attr.kind == AttrKind::Categorical ? attr.encoded_width() : var.centers.size();
}

Index metric_index(double cell, const AttributeSpec& attr, const MarginalVariable& var) {
    if (attr.kind == AttrKind::Categorical) return static_cast<Index>(cell);
    return nearest_center(cell, var.centers);
}

namespace {

void check_aligned(const Population& pop, const AttributeSchema& schema, const MarginalSpec& spec) {
    if (pop.values.cols() != schema.size())
        throw std::runtime_error("population does not match schema");
    if (static_cast<Index>(spec.vars.size()) != schema.size())
        throw std::runtime_error("marginal spec does not cover every schema variable");
    for (Index j = 0; j < schema.size(); ++j)
        if (spec.vars[static_cast<std::size_t>(j)].name != schema.specs[static_cast<std::size_t>(j)].name)
            throw std::runtime_error("marginal spec order does not match schema order");
}

Vector uniform_weights(Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

} // namespace

Vector empirical_pmf(const Population& pop, const AttributeSchema& schema, const MarginalSpec& spec,
                     Index attr, const Vector* weights) {
    check_aligned(pop, schema, spec);
    const auto& a = schema.specs[static_cast<std::size_t>(attr)];
    const auto& v = spec.vars[static_cast<std::size_t>(attr)];
    const Vector w = weights ? *weights : uniform_weights(pop.n());
    if (w.size() != pop.n()) throw std::runtime_error("weights misaligned with population rows");
    Vector pmf = Vector::Zero(metric_support(a, v));
    for (Index i = 0; i < pop.n(); ++i) pmf(metric_index(pop.values(i, attr), a, v)) += w(i);
    const double s = pmf.sum();
    if (s > 0.0) pmf /= s;
    return pmf;
}

Matrix empirical_pair_pmf(const Population& pop, const AttributeSchema& schema,
                          const MarginalSpec& spec, Index a, Index b, const Vector* weights) {
    check_aligned(pop, schema, spec);
    const auto& sa = schema.specs[static_cast<std::size_t>(a)];
    const auto& sb = schema.specs[static_cast<std::size_t>(b)];
    const auto& va = spec.vars[static_cast<std::size_t>(a)];
    const auto& vb = spec.vars[static_cast<std::size_t>(b)];
    const Vector w = weights ? *weights : uniform_weights(pop.n());
    if (w.size() != pop.n()) throw std::runtime_error("weights misaligned with population rows");
    Matrix pmf = Matrix::Zero(metric_support(sa, va), metric_support(sb, vb));
    for (Index i = 0; i < pop.n(); ++i)
        pmf(metric_index(pop.values(i, a), sa, va), metric_index(pop.values(i, b), sb, vb)) += w(i);
    const double s = pmf.sum();
    if (s > 0.0) pmf /= s;
    return pmf;
}

double srmse_m(const Population& gen, const Population& ref, const AttributeSchema& schema,
               const MarginalSpec& spec, const Vector* gen_weights,
               std::vector<std::pair<std::string, double>>* breakdown) {
    check_aligned(gen, schema, spec);
    check_aligned(ref, schema, spec);
    double total = 0.0;
    for (Index j = 0; j < schema.size(); ++j) {
        const Vector p_hat = empirical_pmf(gen, schema, spec, j, gen_weights);
        const Vector p = empirical_pmf(ref, schema, spec, j);
        const double s = srmse(p_hat, p);
        if (breakdown) breakdown->emplace_back(schema.specs[static_cast<std::size_t>(j)].name, s);
        total += s;
    }
    return total / static_cast<double>(schema.size());
}

double srmse_b(const Population& gen, const Population& ref, const AttributeSchema& schema,
               const MarginalSpec& spec, const Vector* gen_weights,
               std::vector<std::tuple<std::string, std::string, double>>* breakdown) {
    if (schema.size() < 2) throw std::runtime_error("srmse_b requires at least 2 variables");
    check_aligned(gen, schema, spec);
    check_aligned(ref, schema, spec);
    double total = 0.0;
    Index pairs = 0;
    for (Index a = 0; a < schema.size(); ++a) {
        for (Index b = a + 1; b < schema.size(); ++b) {
            const Matrix p_hat = empirical_pair_pmf(gen, schema, spec, a, b, gen_weights);
            const Matrix p = empirical_pair_pmf(ref, schema, spec, a, b);
            const Vector flat_hat = Eigen::Map<const Vector>(p_hat.data(), p_hat.size());
            const Vector flat = Eigen::Map<const Vector>(p.data(), p.size());
            const double s = srmse(flat_hat, flat);
            if (breakdown)
                breakdown->emplace_back(schema.specs[static_cast<std::size_t>(a)].name,
                                        schema.specs[static_cast<std::size_t>(b)].name, s);
            total += s;
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

namespace {

// Packed discretized tuple for membership tests. Integer-valued numerical
// attributes contribute their exact integer value, other numerical
// attributes their nearest bin index.
std::string tuple_key(const Population& pop, Index row, const AttributeSchema& schema,
                      const MarginalSpec& spec, const std::vector<Index>& attrs) {
    std::string key;
    key.reserve(attrs.size() * sizeof(long long));
    for (Index j : attrs) {
        const auto& a = schema.specs[static_cast<std::size_t>(j)];
        const auto& v = spec.vars[static_cast<std::size_t>(j)];
        long long code;
        if (a.kind == AttrKind::Categorical) {
            code = static_cast<long long>(pop.values(row, j));
        } else if (a.integer_valued) {
            code = static_cast<long long>(std::nearbyint(pop.values(row, j)));
        } else {
            code = static_cast<long long>(metric_index(pop.values(row, j), a, v));
        }
        char buf[sizeof(long long)];
        std::memcpy(buf, &code, sizeof(code));
        key.append(buf, sizeof(code));
    }
    return key;
}

} // namespace

std::tuple<double, double, double> precision_recall_f1(
    const Population& gen, const Population& ref, const AttributeSchema& schema,
    const MarginalSpec& spec, const std::vector<std::string>* attribute_subset) {
    if (gen.empty() || ref.empty())
        throw std::runtime_error("precision/recall need non-empty populations");
    check_aligned(gen, schema, spec);
    check_aligned(ref, schema, spec);

    std::vector<Index> attrs;
    if (attribute_subset) {
        for (const auto& name : *attribute_subset) {
            const Index j = schema.find(name);
            if (j < 0) throw std::runtime_error("unknown attribute in subset: " + name);
            attrs.push_back(j);
        }
        if (attrs.empty()) throw std::runtime_error("attribute subset is empty");
    } else {
        for (Index j = 0; j < schema.size(); ++j) attrs.push_back(j);
    }

    std::unordered_set<std::string> ref_set, gen_set;
    for (Index i = 0; i < ref.n(); ++i) ref_set.insert(tuple_key(ref, i, schema, spec, attrs));
    for (Index i = 0; i < gen.n(); ++i) gen_set.insert(tuple_key(gen, i, schema, spec, attrs));

    Index gen_hits = 0;
    for (Index i = 0; i < gen.n(); ++i)
        if (ref_set.count(tuple_key(gen, i, schema, spec, attrs))) ++gen_hits;
    Index ref_hits = 0;
    for (Index i = 0; i < ref.n(); ++i)
        if (gen_set.count(tuple_key(ref, i, schema, spec, attrs))) ++ref_hits;

    const double precision = 100.0 * static_cast<double>(gen_hits) / static_cast<double>(gen.n());
    const double recall = 100.0 * static_cast<double>(ref_hits) / static_cast<double>(ref.n());
    const double f1 =
        (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    return {precision, recall, f1};
}

double ess(const Vector& weights) {
    if (weights.size() == 0) throw std::runtime_error("ess of empty weight vector");
    if (weights.minCoeff() < 0.0) throw std::runtime_error("ess requires non-negative weights");
    if (std::abs(weights.sum() - 1.0) > 1e-9)
        throw std::runtime_error("ess requires weights normalized within 1e-9");
    return 1.0 / weights.squaredNorm();
}

MetricReport evaluate_all(const Population& gen, const Population& ref,
                          const AttributeSchema& schema, const MarginalSpec& spec,
                          const Vector* gen_weights) {
    MetricReport report;
    report.srmse_m = srmse_m(gen, ref, schema, spec, gen_weights, &report.per_variable);
    if (schema.size() >= 2)
        report.srmse_b = srmse_b(gen, ref, schema, spec, gen_weights, &report.per_pair);
    auto [p, r, f] = precision_recall_f1(gen, ref, schema, spec);
    report.precision = p;
    report.recall = r;
    report.f1 = f;
    if (gen_weights) report.ess = ess(*gen_weights);
    return report;
}

std::string MetricReport::to_json() const {
    nlohmann::json doc;
    doc["srmse_m"] = srmse_m;
    doc["srmse_b"] = srmse_b;
    doc["precision"] = precision;
    doc["recall"] = recall;
    doc["f1"] = f1;
    if (ess) doc["ess"] = *ess;
    doc["per_variable"] = nlohmann::json::object();
    for (const auto& [name, v] : per_variable) doc["per_variable"][name] = v;
    doc["per_pair"] = nlohmann::json::array();
    for (const auto& [a, b, v] : per_pair)
        doc["per_pair"].push_back({{"a", a}, {"b", b}, {"srmse", v}});
    return doc.dump(2);
}

std::string MetricReport::csv_header() { return "srmse_m,srmse_b,precision,recall,f1,ess"; }

std::string MetricReport::csv_row() const {
    std::ostringstream out;
    out << format_real(srmse_m) << ',' << format_real(srmse_b) << ',' << format_real(precision)
        << ',' << format_real(recall) << ',' << format_real(f1) << ',';
    if (ess) out << format_real(*ess);
    return out.str();
}

} // namespace semapop
