#pragma once

#include "semapop/schema.hpp"
#include "semapop/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace semapop {

// Agent table, one row per agent and one column per schema attribute.
// Categorical cells hold the category index; numerical cells hold the value.
struct Population {
    Matrix values; // n x |J|

    Index n() const { return values.rows(); }
    bool empty() const { return values.rows() == 0; }
};

// Encoded design matrix: one-hot (or relaxed soft) categorical blocks and
// standardized numerical columns, laid out in schema order.
struct EncodedBatch {
    Matrix matrix; // B x encoded_width
};

void validate_population(const Population& pop, const AttributeSchema& schema);
void validate_encoded(const EncodedBatch& batch, const AttributeSchema& schema,
                      double simplex_tol = 1e-5);

Population load_population(const std::filesystem::path& path, const AttributeSchema& schema);
void save_population(const Population& pop, const AttributeSchema& schema,
                     const std::filesystem::path& path);

// Numerical specs gain mean/std (population formula, std floored at 1e-6)
// and min/max from the training split. Constant columns record a warning.
AttributeSchema fit_schema_stats(const AttributeSchema& schema, const Population& train,
                                 std::vector<std::string>* warnings = nullptr);

EncodedBatch encode(const Population& pop, const AttributeSchema& schema);

enum class DecodeMode { Hard };

// Categorical blocks decode by argmax (ties to the lowest category index);
// numerical columns are unstandardized, rounded when integer valued, and
// clipped to the training min/max.
Population decode(const EncodedBatch& batch, const AttributeSchema& schema,
                  DecodeMode mode = DecodeMode::Hard);

// Per stratum s, exactly round(n_s * fraction) agents drawn uniformly
// without replacement; deterministic given seed.
Population stratified_sample(const Population& pop, const AttributeSchema& schema,
                             const std::string& stratum_attr, double fraction,
                             std::uint64_t seed);

// Seeded shuffle split into |fractions| parts (fractions sum to <= 1;
// remainder goes to the last part when they sum to 1 exactly).
std::vector<Population> split_population(const Population& pop, const std::vector<double>& fractions,
                                         std::uint64_t seed);

Population take_rows(const Population& pop, const std::vector<Index>& rows);
Population concat_rows(const Population& a, const Population& b);

} // namespace semapop
