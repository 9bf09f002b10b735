#include "semapop/toy.hpp"

#include "semapop/rng.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "json.hpp"

namespace semapop {

void ToyJointSpec::validate() const {
    if (attrs.empty()) throw std::runtime_error("toy joint spec has no attributes");
    for (std::size_t j = 0; j < attrs.size(); ++j) {
        const auto& a = attrs[j];
        if (a.support_size() < 2)
            throw std::runtime_error("toy attribute '" + a.name + "' needs support size >= 2");
        if (a.kind == AttrKind::Numerical) {
            for (std::size_t k = 1; k < a.support.size(); ++k)
                if (a.support[k] <= a.support[k - 1])
                    throw std::runtime_error("toy attribute '" + a.name +
                                             "' support must be strictly increasing");
        }
        if (a.parent >= static_cast<Index>(j))
            throw std::runtime_error("toy attribute '" + a.name +
                                     "' must depend on an earlier attribute");
        const Index parent_size =
            a.parent < 0 ? 1 : attrs[static_cast<std::size_t>(a.parent)].support_size();
        if (a.cpt.rows() != parent_size || a.cpt.cols() != a.support_size())
            throw std::runtime_error("toy attribute '" + a.name + "' has a misshaped table");
        for (Index r = 0; r < a.cpt.rows(); ++r) {
            if (a.cpt.row(r).minCoeff() < 0.0 || std::abs(a.cpt.row(r).sum() - 1.0) > 1e-9)
                throw std::runtime_error("probability table row for '" + a.name +
                                         "' does not sum to 1 within 1e-9");
        }
    }
}

AttributeSchema ToyJointSpec::schema() const {
    AttributeSchema schema;
    for (const auto& a : attrs) {
        AttributeSpec s;
        s.name = a.name;
        s.kind = a.kind;
        s.group = a.group;
        if (a.kind == AttrKind::Categorical) {
            s.categories = a.categories;
        } else {
            s.integer_valued = true;
        }
        schema.specs.push_back(std::move(s));
    }
    schema.validate();
    return schema;
}

double ToyJointSpec::cell_value(Index j, Index support_idx) const {
    const auto& a = attrs[static_cast<std::size_t>(j)];
    return a.kind == AttrKind::Categorical
               ? static_cast<double>(support_idx)
               : a.support[static_cast<std::size_t>(support_idx)];
}

Index ToyJointSpec::support_index(Index j, double v) const {
    const auto& a = attrs[static_cast<std::size_t>(j)];
    if (a.kind == AttrKind::Categorical) return static_cast<Index>(v);
    for (std::size_t k = 0; k < a.support.size(); ++k)
        if (a.support[k] == v) return static_cast<Index>(k);
    throw std::runtime_error("value " + std::to_string(v) + " not in toy support of " + a.name);
}

namespace {

// Enumerate every complete assignment of support indices with its joint
// probability.
void enumerate_joint(const ToyJointSpec& spec,
                     const std::function<void(const std::vector<Index>&, double)>& visit) {
    std::vector<Index> assign(spec.attrs.size(), 0);
    std::function<void(std::size_t, double)> rec = [&](std::size_t j, double p) {
        if (p == 0.0) return;
        if (j == spec.attrs.size()) {
            visit(assign, p);
            return;
        }
        const auto& a = spec.attrs[j];
        const Index row = a.parent < 0 ? 0 : assign[static_cast<std::size_t>(a.parent)];
        for (Index k = 0; k < a.support_size(); ++k) {
            assign[j] = k;
            rec(j + 1, p * a.cpt(row, k));
        }
    };
    rec(0, 1.0);
}

} // namespace

Vector ToyJointSpec::marginal(Index j) const {
    Vector m = Vector::Zero(attrs[static_cast<std::size_t>(j)].support_size());
    enumerate_joint(*this, [&](const std::vector<Index>& a, double p) {
        m(a[static_cast<std::size_t>(j)]) += p;
    });
    return m;
}

Matrix ToyJointSpec::pair_table(Index a, Index b) const {
    Matrix t = Matrix::Zero(attrs[static_cast<std::size_t>(a)].support_size(),
                            attrs[static_cast<std::size_t>(b)].support_size());
    enumerate_joint(*this, [&](const std::vector<Index>& asg, double p) {
        t(asg[static_cast<std::size_t>(a)], asg[static_cast<std::size_t>(b)]) += p;
    });
    return t;
}

Population make_toy_population(const ToyJointSpec& spec, Index n, std::uint64_t seed) {
    spec.validate();
    if (n < 1) throw std::runtime_error("toy population size must be at least 1");
    Population pop;
    pop.values.resize(n, static_cast<Index>(spec.attrs.size()));
    Rng rng(Rng::derive(seed, "toy_population"));
    std::vector<Index> assign(spec.attrs.size());
    for (Index i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < spec.attrs.size(); ++j) {
            const auto& a = spec.attrs[j];
            const Index row = a.parent < 0 ? 0 : assign[static_cast<std::size_t>(a.parent)];
            const double u = rng.uniform();
            double acc = 0.0;
            Index drawn = a.support_size() - 1;
            for (Index k = 0; k < a.support_size(); ++k) {
                acc += a.cpt(row, k);
                if (u < acc) {
                    drawn = k;
                    break;
                }
            }
            assign[j] = drawn;
            pop.values(i, static_cast<Index>(j)) = spec.cell_value(static_cast<Index>(j), drawn);
        }
    }
    return pop;
}

Vector empirical_support_marginal(const ToyJointSpec& spec, const Population& pop, Index j) {
    Vector m = Vector::Zero(spec.attrs[static_cast<std::size_t>(j)].support_size());
    for (Index i = 0; i < pop.n(); ++i) m(spec.support_index(j, pop.values(i, j))) += 1.0;
    return m / static_cast<double>(pop.n());
}

Matrix empirical_support_pair_table(const ToyJointSpec& spec, const Population& pop, Index a,
                                    Index b) {
    Matrix t = Matrix::Zero(spec.attrs[static_cast<std::size_t>(a)].support_size(),
                            spec.attrs[static_cast<std::size_t>(b)].support_size());
    for (Index i = 0; i < pop.n(); ++i)
        t(spec.support_index(a, pop.values(i, a)), spec.support_index(b, pop.values(i, b))) += 1.0;
    return t / static_cast<double>(pop.n());
}

ToyJointSpec parse_toy_spec_json(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text);
    ToyJointSpec spec;
    for (const auto& a : doc.at("attributes")) {
        ToyAttribute attr;
        attr.name = a.at("name").get<std::string>();
        attr.kind = attr_kind_from_string(a.at("kind").get<std::string>());
        if (a.contains("group")) attr.group = attr_group_from_string(a["group"].get<std::string>());
        if (attr.kind == AttrKind::Categorical)
            attr.categories = a.at("categories").get<std::vector<std::string>>();
        else
            attr.support = a.at("support").get<std::vector<double>>();
        if (a.contains("parent") && !a["parent"].is_null()) {
            const std::string pname = a["parent"].get<std::string>();
            for (std::size_t j = 0; j < spec.attrs.size(); ++j)
                if (spec.attrs[j].name == pname) attr.parent = static_cast<Index>(j);
            if (attr.parent < 0)
                throw std::runtime_error("toy attribute parent '" + pname + "' not defined earlier");
        }
        const auto rows = a.at("cpt").get<std::vector<std::vector<double>>>();
        attr.cpt.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.at(0).size()));
        for (Index r = 0; r < attr.cpt.rows(); ++r)
            for (Index c = 0; c < attr.cpt.cols(); ++c)
                attr.cpt(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        spec.attrs.push_back(std::move(attr));
    }
    spec.validate();
    return spec;
}

std::string toy_spec_to_json(const ToyJointSpec& spec) {
    nlohmann::json doc;
    doc["attributes"] = nlohmann::json::array();
    for (const auto& a : spec.attrs) {
        nlohmann::json j;
        j["name"] = a.name;
        j["kind"] = to_string(a.kind);
        j["group"] = to_string(a.group);
        if (a.kind == AttrKind::Categorical)
            j["categories"] = a.categories;
        else
            j["support"] = a.support;
        if (a.parent >= 0) j["parent"] = spec.attrs[static_cast<std::size_t>(a.parent)].name;
        std::vector<std::vector<double>> rows;
        for (Index r = 0; r < a.cpt.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(a.cpt.cols()));
            for (Index c = 0; c < a.cpt.cols(); ++c) row[static_cast<std::size_t>(c)] = a.cpt(r, c);
            rows.push_back(std::move(row));
        }
        j["cpt"] = rows;
        doc["attributes"].push_back(std::move(j));
    }
    return doc.dump(2);
}

ToyJointSpec toy_chain_spec() {
    ToyJointSpec spec;
    ToyAttribute a;
    a.name = "Region";
    a.categories = {"North", "Middle", "South"};
    a.cpt = (Matrix(1, 3) << 0.5, 0.3, 0.2).finished();
    spec.attrs.push_back(a);

    ToyAttribute b;
    b.name = "Employment";
    b.categories = {"Employed", "Student", "Other"};
    b.parent = 0;
    b.cpt = (Matrix(3, 3) << 0.7, 0.2, 0.1, //
             0.5, 0.3, 0.2,                 //
             0.3, 0.3, 0.4)
                .finished();
    spec.attrs.push_back(b);

    ToyAttribute c;
    c.name = "CarOwner";
    c.categories = {"Yes", "No"};
    c.parent = 1;
    c.cpt = (Matrix(3, 2) << 0.8, 0.2, //
             0.3, 0.7,                 //
             0.5, 0.5)
                .finished();
    spec.attrs.push_back(c);
    spec.validate();
    return spec;
}

ToyJointSpec toy_travel_spec() {
    ToyJointSpec spec;
    ToyAttribute region;
    region.name = "Region";
    region.group = AttrGroup::Demographic;
    region.categories = {"Urban", "Suburban", "Rural"};
    region.cpt = (Matrix(1, 3) << 0.45, 0.35, 0.2).finished();
    spec.attrs.push_back(region);

    ToyAttribute employment;
    employment.name = "Employment";
    employment.group = AttrGroup::Demographic;
    employment.categories = {"Employed", "NotEmployed"};
    employment.parent = 0;
    employment.cpt = (Matrix(3, 2) << 0.75, 0.25, //
                      0.65, 0.35,                 //
                      0.55, 0.45)
                         .finished();
    spec.attrs.push_back(employment);

    ToyAttribute household;
    household.name = "HouseholdType";
    household.group = AttrGroup::Household;
    household.categories = {"Single", "Couple", "Family", "Shared"};
    household.parent = 0;
    household.cpt = (Matrix(3, 4) << 0.40, 0.25, 0.20, 0.15, //
                     0.25, 0.30, 0.35, 0.10,                 //
                     0.20, 0.35, 0.40, 0.05)
                        .finished();
    spec.attrs.push_back(household);

    // Transit use depends strongly on region: frequent in town, rare outside.
    ToyAttribute transit;
    transit.name = "TransitTrips";
    transit.kind = AttrKind::Numerical;
    transit.group = AttrGroup::Behavioral;
    transit.support = {0, 1, 2, 3, 4, 5, 6};
    transit.parent = 0;
    transit.cpt = (Matrix(3, 7) << 0.10, 0.10, 0.25, 0.25, 0.15, 0.10, 0.05, //
                   0.35, 0.20, 0.20, 0.15, 0.05, 0.03, 0.02,                 //
                   0.70, 0.15, 0.08, 0.04, 0.02, 0.007, 0.003)
                      .finished();
    spec.attrs.push_back(transit);

    ToyAttribute walking;
    walking.name = "WalkTrips";
    walking.kind = AttrKind::Numerical;
    walking.group = AttrGroup::Behavioral;
    walking.support = {0, 1, 2, 3, 4};
    walking.parent = 1;
    walking.cpt = (Matrix(2, 5) << 0.25, 0.30, 0.25, 0.15, 0.05, //
                   0.35, 0.30, 0.20, 0.10, 0.05)
                      .finished();
    spec.attrs.push_back(walking);
    spec.validate();
    return spec;
}

} // namespace semapop
