#pragma once

#include "semapop/population.hpp"
#include "semapop/schema.hpp"

#include <string>
#include <vector>

namespace semapop {

// One attribute of a toy joint: a categorical variable or an integer-valued
// numerical variable with finite support, conditioned on at most one earlier
// attribute. The factorized joint stays small enough to enumerate exactly,
// which gives desk-scale tests an analytic oracle.
struct ToyAttribute {
    std::string name;
    AttrKind kind = AttrKind::Categorical;
    AttrGroup group = AttrGroup::Demographic;
    std::vector<std::string> categories; // categorical labels
    std::vector<double> support;         // numerical support values, ascending
    Index parent = -1;                   // index of an earlier attribute, or -1
    Matrix cpt;                          // parent-support x own-support, rows sum to 1

    Index support_size() const {
        return kind == AttrKind::Categorical ? static_cast<Index>(categories.size())
                                             : static_cast<Index>(support.size());
    }
};

struct ToyJointSpec {
    std::vector<ToyAttribute> attrs;

    void validate() const;
    AttributeSchema schema() const;

    // Exact distributions, computed by enumerating the factorized joint.
    Vector marginal(Index j) const;
    Matrix pair_table(Index a, Index b) const;

    // Support-index value of attribute j as stored in a Population cell.
    double cell_value(Index j, Index support_idx) const;
    Index support_index(Index j, double cell_value) const;
};

// i.i.d. ancestral sampling from the toy joint; deterministic given seed.
Population make_toy_population(const ToyJointSpec& spec, Index n, std::uint64_t seed);

// Empirical pmfs over the toy support, for comparison against the oracle.
Vector empirical_support_marginal(const ToyJointSpec& spec, const Population& pop, Index j);
Matrix empirical_support_pair_table(const ToyJointSpec& spec, const Population& pop, Index a,
                                    Index b);

ToyJointSpec parse_toy_spec_json(const std::string& text);
std::string toy_spec_to_json(const ToyJointSpec& spec);

// Built-in fixtures.
ToyJointSpec toy_chain_spec();  // 3 categorical attributes in a chain
ToyJointSpec toy_travel_spec(); // 3 categorical + 2 numerical count attributes

} // namespace semapop
