#pragma once

#include "semapop/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace semapop {

enum class AttrKind { Categorical, Numerical };
enum class AttrGroup { Demographic, Household, Behavioral };

std::string to_string(AttrKind k);
std::string to_string(AttrGroup g);
AttrKind attr_kind_from_string(const std::string& s);
AttrGroup attr_group_from_string(const std::string& s);

// Standardization statistics for a numerical attribute, fit on the
// training split and frozen thereafter. min/max bound decoded values.
struct NumericStats {
    double mean = 0.0;
    double std = 1.0;
    double min = 0.0;
    double max = 0.0;
};

struct AttributeSpec {
    std::string name;
    AttrKind kind = AttrKind::Categorical;
    AttrGroup group = AttrGroup::Demographic;
    std::vector<std::string> categories; // categorical only, ordered
    bool integer_valued = false;         // numerical counts/times vs free reals
    std::optional<NumericStats> stats;   // numerical only, absent until fit

    Index category_index(const std::string& label) const; // -1 if unknown
    Index encoded_width() const {
        return kind == AttrKind::Categorical ? static_cast<Index>(categories.size()) : 1;
    }
};

struct AttributeSchema {
    std::vector<AttributeSpec> specs;

    Index size() const { return static_cast<Index>(specs.size()); }
    Index encoded_width() const;
    Index find(const std::string& name) const; // -1 if absent
    const AttributeSpec& at(const std::string& name) const;
    bool has_fitted_stats() const;

    // Column offset of attribute j in the encoded block layout.
    Index block_offset(Index j) const;

    std::vector<Index> categorical_indices() const;
    std::vector<Index> numerical_indices() const;

    void validate() const; // throws on invariant violations
};

AttributeSchema load_schema(const std::filesystem::path& path);
AttributeSchema parse_schema_json(const std::string& text);
std::string schema_to_json(const AttributeSchema& schema);
void save_schema(const AttributeSchema& schema, const std::filesystem::path& path);

// Stable content hash of the schema (attributes and fitted stats).
std::uint64_t schema_hash(const AttributeSchema& schema);

// Built-in 23-attribute schema mirroring the synthetic Swedish survey layout.
AttributeSchema default_schema();

} // namespace semapop
