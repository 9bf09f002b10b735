#include "semapop/marginal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace semapop {

void MarginalSpec::validate() const {
    if (vars.empty()) throw std::runtime_error("marginal spec has no variables");
    for (const auto& v : vars) {
        if (v.support_size() < 1)
            throw std::runtime_error("marginal spec variable '" + v.name + "' has empty support");
        if (v.reference.size() != v.support_size())
            throw std::runtime_error("reference length mismatch for '" + v.name + "'");
        if (v.reference.minCoeff() < 0.0 || std::abs(v.reference.sum() - 1.0) > 1e-9)
            throw std::runtime_error("reference probabilities for '" + v.name +
                                     "' do not sum to 1 within 1e-9");
        if (v.kind == AttrKind::Numerical) {
            if (v.sigma <= 0.0)
                throw std::runtime_error("bandwidth for '" + v.name + "' must be positive");
            if (v.std <= 0.0)
                throw std::runtime_error("standardization std for '" + v.name + "' must be positive");
            for (Index k = 1; k < v.centers.size(); ++k)
                if (v.centers(k) <= v.centers(k - 1))
                    throw std::runtime_error("bin centers for '" + v.name +
                                             "' must be strictly increasing");
        }
    }
}

Index MarginalSpec::find(const std::string& name) const {
    for (std::size_t i = 0; i < vars.size(); ++i)
        if (vars[i].name == name) return static_cast<Index>(i);
    return -1;
}

const MarginalVariable& MarginalSpec::at(const std::string& name) const {
    const Index i = find(name);
    if (i < 0) throw std::runtime_error("marginal spec has no variable named '" + name + "'");
    return vars[static_cast<std::size_t>(i)];
}

std::string marginal_spec_to_json(const MarginalSpec& spec) {
    nlohmann::json doc;
    doc["variables"] = nlohmann::json::array();
    for (const auto& v : spec.vars) {
        nlohmann::json j;
        j["name"] = v.name;
        j["kind"] = to_string(v.kind);
        j["reference"] = std::vector<double>(v.reference.data(), v.reference.data() + v.reference.size());
        j["weight"] = v.weight;
        if (v.kind == AttrKind::Numerical) {
            j["centers"] = std::vector<double>(v.centers.data(), v.centers.data() + v.centers.size());
            j["sigma"] = v.sigma;
            j["mean"] = v.mean;
            j["std"] = v.std;
        }
        doc["variables"].push_back(std::move(j));
    }
    return doc.dump(2);
}

MarginalSpec parse_marginal_spec_json(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text);
    MarginalSpec spec;
    for (const auto& j : doc.at("variables")) {
        MarginalVariable v;
        v.name = j.at("name").get<std::string>();
        v.kind = attr_kind_from_string(j.at("kind").get<std::string>());
        const auto ref = j.at("reference").get<std::vector<double>>();
        v.reference = Eigen::Map<const Vector>(ref.data(), static_cast<Index>(ref.size()));
        v.weight = j.value("weight", 1.0);
        if (v.kind == AttrKind::Numerical) {
            const auto c = j.at("centers").get<std::vector<double>>();
            v.centers = Eigen::Map<const Vector>(c.data(), static_cast<Index>(c.size()));
            v.sigma = j.at("sigma").get<double>();
            v.mean = j.at("mean").get<double>();
            v.std = j.at("std").get<double>();
        }
        spec.vars.push_back(std::move(v));
    }
    spec.validate();
    return spec;
}

namespace {

double quantile(const std::vector<double>& sorted, double p) {
    const auto n = sorted.size();
    if (n == 1) return sorted[0];
    const double pos = p * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

} // namespace

std::pair<Vector, double> fit_bins(const Vector& values, int k, std::vector<std::string>* warnings) {
    if (k < 2) throw std::runtime_error("fit_bins requires k >= 2");
    if (values.size() < 2) throw std::runtime_error("fit_bins requires at least 2 values");
    std::vector<double> sorted(values.data(), values.data() + values.size());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back())
        throw std::runtime_error("degenerate continuous variable: all values are identical");

    std::vector<double> centers;
    for (int i = 0; i < k; ++i) {
        const double lo = quantile(sorted, static_cast<double>(i) / k);
        const double hi = quantile(sorted, static_cast<double>(i + 1) / k);
        const double c = 0.5 * (lo + hi);
        if (!centers.empty() && c <= centers.back() + 1e-12 * std::max(1.0, std::abs(c))) {
            if (warnings)
                warnings->push_back("collapsed duplicate bin center at " + std::to_string(c));
            continue;
        }
        centers.push_back(c);
    }
    if (centers.size() < 2)
        throw std::runtime_error("degenerate continuous variable: fewer than 2 distinct bins");

    double spacing = 0.0;
    for (std::size_t i = 1; i < centers.size(); ++i) spacing += centers[i] - centers[i - 1];
    spacing /= static_cast<double>(centers.size() - 1);
    Vector c = Eigen::Map<const Vector>(centers.data(), static_cast<Index>(centers.size()));
    return {c, 0.5 * spacing};
}

Index nearest_center(double value, const Vector& centers) {
    Index best = 0;
    double best_d = std::abs(value - centers(0));
    for (Index i = 1; i < centers.size(); ++i) {
        const double d = std::abs(value - centers(i));
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

Vector categorical_marginal(const Matrix& soft_block, double simplex_tol) {
    if (soft_block.rows() == 0) throw std::runtime_error("categorical_marginal on empty block");
    for (Index i = 0; i < soft_block.rows(); ++i) {
        if (soft_block.row(i).minCoeff() < -simplex_tol ||
            std::abs(soft_block.row(i).sum() - 1.0) > simplex_tol)
            throw std::runtime_error("row " + std::to_string(i) + " is off the simplex");
    }
    Vector m = soft_block.colwise().mean().transpose();
    const double s = m.sum();
    if (std::abs(s - 1.0) > 1e-9) m /= s;
    return m;
}

Vector soft_histogram(const Vector& values, const Vector& centers, double sigma) {
    if (sigma <= 0.0) throw std::runtime_error("soft_histogram requires sigma > 0");
    const Index k = centers.size();
    Vector acc = Vector::Zero(k);
    Vector logits(k);
    for (Index i = 0; i < values.size(); ++i) {
        for (Index j = 0; j < k; ++j) {
            const double d = values(i) - centers(j);
            logits(j) = -d * d / (2.0 * sigma * sigma);
        }
        const double m = logits.maxCoeff();
        const Vector e = (logits.array() - m).exp();
        acc += e / e.sum();
    }
    Vector p = acc / static_cast<double>(values.size());
    const double s = p.sum();
    if (std::abs(s - 1.0) > 1e-9) p /= s;
    return p;
}

MarginalSpec build_marginal_spec(const Population& train, const AttributeSchema& schema, int bins,
                                 std::vector<std::string>* warnings) {
    if (train.empty()) throw std::runtime_error("cannot build marginal spec from empty population");
    validate_population(train, schema);
    MarginalSpec spec;
    for (Index j = 0; j < schema.size(); ++j) {
        const auto& attr = schema.specs[static_cast<std::size_t>(j)];
        MarginalVariable v;
        v.name = attr.name;
        v.kind = attr.kind;
        if (attr.kind == AttrKind::Categorical) {
            Vector counts = Vector::Zero(attr.encoded_width());
            for (Index i = 0; i < train.n(); ++i)
                counts(static_cast<Index>(train.values(i, j))) += 1.0;
            v.reference = counts / static_cast<double>(train.n());
        } else {
            if (!attr.stats)
                throw std::runtime_error("marginal spec needs fitted stats for '" + attr.name + "'");
            auto [centers, sigma] = fit_bins(train.values.col(j), bins, warnings);
            v.centers = centers;
            v.sigma = sigma;
            v.mean = attr.stats->mean;
            v.std = attr.stats->std;
            v.reference = soft_histogram(train.values.col(j), centers, sigma);
        }
        spec.vars.push_back(std::move(v));
    }
    spec.validate();
    return spec;
}

namespace {

Index spec_block_width(const MarginalVariable& v) {
    return v.kind == AttrKind::Categorical ? v.reference.size() : 1;
}

} // namespace

double marginal_loss(const EncodedBatch& gen, const MarginalSpec& spec, double eps) {
    Index expected = 0;
    for (const auto& v : spec.vars) expected += spec_block_width(v);
    if (gen.matrix.cols() != expected)
        throw std::runtime_error("encoded batch width " + std::to_string(gen.matrix.cols()) +
                                 " does not match marginal spec width " + std::to_string(expected));
    double total = 0.0;
    Index off = 0;
    for (const auto& v : spec.vars) {
        Vector p_hat;
        if (v.kind == AttrKind::Categorical) {
            p_hat = categorical_marginal(gen.matrix.middleCols(off, v.reference.size()));
            off += v.reference.size();
        } else {
            const Vector std_centers = (v.centers.array() - v.mean) / v.std;
            p_hat = soft_histogram(gen.matrix.col(off), std_centers, v.sigma / v.std);
            off += 1;
        }
        if (p_hat.size() != v.reference.size())
            throw std::runtime_error("support size mismatch for '" + v.name + "'");
        total += v.weight * std::sqrt((p_hat - v.reference).squaredNorm() + eps);
    }
    return total / static_cast<double>(spec.vars.size());
}

ad::Val marginal_loss_graph(ad::Val gen, const MarginalSpec& spec, double eps) {
    ad::Tape& t = *gen.tape;
    const Index batch = gen.rows();
    ad::Val total = t.constant(0.0);
    Index off = 0;
    for (const auto& v : spec.vars) {
        ad::Val p_hat{nullptr, -1};
        if (v.kind == AttrKind::Categorical) {
            const Index k = v.reference.size();
            p_hat = t.scale(t.col_sums(t.block(gen, 0, off, batch, k)),
                            1.0 / static_cast<double>(batch));
            off += k;
        } else {
            const Index k = v.centers.size();
            const RowVector std_centers = ((v.centers.array() - v.mean) / v.std).transpose();
            const double std_sigma = v.sigma / v.std;
            const ad::Val col = t.block(gen, 0, off, batch, 1);
            const ad::Val diff = t.sub(t.broadcast_cols(col, k),
                                       t.broadcast_rows(t.constant(Matrix(std_centers)), batch));
            const ad::Val logits = t.scale(ad::square(diff), -1.0 / (2.0 * std_sigma * std_sigma));
            p_hat = t.scale(t.col_sums(ad::softmax_rows(logits)), 1.0 / static_cast<double>(batch));
            off += 1;
        }
        const ad::Val diff = t.sub(p_hat, t.constant(Matrix(v.reference.transpose())));
        const ad::Val ell = t.sqrt(ad::add_scalar(t.sum_all(ad::square(diff)), eps));
        total = t.add(total, t.scale(ell, v.weight));
    }
    return t.scale(total, 1.0 / static_cast<double>(spec.vars.size()));
}

} // namespace semapop
