#include "semapop/schema.hpp"

#include "semapop/io_util.hpp"

#include <set>
#include <stdexcept>

#include "json.hpp"

namespace semapop {

std::string to_string(AttrKind k) {
    return k == AttrKind::Categorical ? "categorical" : "numerical";
}

std::string to_string(AttrGroup g) {
    switch (g) {
    case AttrGroup::Demographic: return "demographic";
    case AttrGroup::Household: return "household";
    case AttrGroup::Behavioral: return "behavioral";
    }
    return "demographic";
}

AttrKind attr_kind_from_string(const std::string& s) {
    if (s == "categorical") return AttrKind::Categorical;
    if (s == "numerical") return AttrKind::Numerical;
    throw std::runtime_error("unknown attribute kind: " + s);
}

AttrGroup attr_group_from_string(const std::string& s) {
    if (s == "demographic") return AttrGroup::Demographic;
    if (s == "household") return AttrGroup::Household;
    if (s == "behavioral") return AttrGroup::Behavioral;
    throw std::runtime_error("unknown attribute group: " + s);
}

Index AttributeSpec::category_index(const std::string& label) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
        if (categories[i] == label) return static_cast<Index>(i);
    return -1;
}

Index AttributeSchema::encoded_width() const {
    Index w = 0;
    for (const auto& s : specs) w += s.encoded_width();
    return w;
}

Index AttributeSchema::find(const std::string& name) const {
    for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].name == name) return static_cast<Index>(i);
    return -1;
}

const AttributeSpec& AttributeSchema::at(const std::string& name) const {
    Index j = find(name);
    if (j < 0) throw std::runtime_error("schema has no attribute named '" + name + "'");
    return specs[static_cast<std::size_t>(j)];
}

bool AttributeSchema::has_fitted_stats() const {
    for (const auto& s : specs)
        if (s.kind == AttrKind::Numerical && !s.stats.has_value()) return false;
    return true;
}

Index AttributeSchema::block_offset(Index j) const {
    Index off = 0;
    for (Index i = 0; i < j; ++i) off += specs[static_cast<std::size_t>(i)].encoded_width();
    return off;
}

std::vector<Index> AttributeSchema::categorical_indices() const {
    std::vector<Index> out;
    for (Index j = 0; j < size(); ++j)
        if (specs[static_cast<std::size_t>(j)].kind == AttrKind::Categorical) out.push_back(j);
    return out;
}

std::vector<Index> AttributeSchema::numerical_indices() const {
    std::vector<Index> out;
    for (Index j = 0; j < size(); ++j)
        if (specs[static_cast<std::size_t>(j)].kind == AttrKind::Numerical) out.push_back(j);
    return out;
}

void AttributeSchema::validate() const {
    if (specs.empty()) throw std::runtime_error("schema must contain at least one attribute");
    std::set<std::string> seen;
    for (const auto& s : specs) {
        if (s.name.empty()) throw std::runtime_error("schema attribute with empty name");
        if (s.name.find(',') != std::string::npos || s.name.find('\n') != std::string::npos)
            throw std::runtime_error("attribute name '" + s.name + "' contains a CSV delimiter");
        if (!seen.insert(s.name).second)
            throw std::runtime_error("duplicate attribute name: " + s.name);
        if (s.kind == AttrKind::Categorical) {
            if (s.categories.size() < 2)
                throw std::runtime_error("categorical attribute '" + s.name +
                                         "' must have at least 2 categories");
            std::set<std::string> labels;
            for (const auto& c : s.categories) {
                if (c.find(',') != std::string::npos || c.find('\n') != std::string::npos)
                    throw std::runtime_error("category label '" + c + "' contains a CSV delimiter");
                if (!labels.insert(c).second)
                    throw std::runtime_error("duplicate category '" + c + "' in attribute " + s.name);
            }
        } else if (s.stats.has_value() && s.stats->std <= 0.0) {
            throw std::runtime_error("attribute '" + s.name + "' has non-positive std");
        }
    }
}

AttributeSchema parse_schema_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed schema document: ") + e.what());
    }
    if (!doc.contains("attributes") || !doc["attributes"].is_array())
        throw std::runtime_error("schema document missing 'attributes' array");
    AttributeSchema schema;
    for (const auto& a : doc["attributes"]) {
        AttributeSpec spec;
        spec.name = a.at("name").get<std::string>();
        spec.kind = attr_kind_from_string(a.at("kind").get<std::string>());
        spec.group = attr_group_from_string(a.at("group").get<std::string>());
        if (spec.kind == AttrKind::Categorical) {
            if (!a.contains("categories"))
                throw std::runtime_error("categorical attribute '" + spec.name +
                                         "' missing 'categories'");
            spec.categories = a["categories"].get<std::vector<std::string>>();
        } else {
            spec.integer_valued = a.value("integer_valued", false);
            if (a.contains("stats")) {
                NumericStats st;
                st.mean = a["stats"].at("mean").get<double>();
                st.std = a["stats"].at("std").get<double>();
                st.min = a["stats"].at("min").get<double>();
                st.max = a["stats"].at("max").get<double>();
                spec.stats = st;
            }
        }
        schema.specs.push_back(std::move(spec));
    }
    schema.validate();
    return schema;
}

AttributeSchema load_schema(const std::filesystem::path& path) {
    return parse_schema_json(read_file(path));
}

std::string schema_to_json(const AttributeSchema& schema) {
    nlohmann::json doc;
    doc["attributes"] = nlohmann::json::array();
    for (const auto& s : schema.specs) {
        nlohmann::json a;
        a["name"] = s.name;
        a["kind"] = to_string(s.kind);
        a["group"] = to_string(s.group);
        if (s.kind == AttrKind::Categorical) {
            a["categories"] = s.categories;
        } else {
            a["integer_valued"] = s.integer_valued;
            if (s.stats) {
                a["stats"] = {{"mean", s.stats->mean},
                              {"std", s.stats->std},
                              {"min", s.stats->min},
                              {"max", s.stats->max}};
            }
        }
        doc["attributes"].push_back(std::move(a));
    }
    return doc.dump(2);
}

void save_schema(const AttributeSchema& schema, const std::filesystem::path& path) {
    write_file(path, schema_to_json(schema));
}

std::uint64_t schema_hash(const AttributeSchema& schema) {
    return fnv1a64(schema_to_json(schema));
}

namespace {

AttributeSpec cat(std::string name, AttrGroup g, std::vector<std::string> labels) {
    AttributeSpec s;
    s.name = std::move(name);
    s.kind = AttrKind::Categorical;
    s.group = g;
    s.categories = std::move(labels);
    return s;
}

AttributeSpec num(std::string name, AttrGroup g) {
    AttributeSpec s;
    s.name = std::move(name);
    s.kind = AttrKind::Numerical;
    s.group = g;
    s.integer_valued = true;
    return s;
}

} // namespace

AttributeSchema default_schema() {
    using G = AttrGroup;
    AttributeSchema schema;
    std::vector<std::string> muni;
    for (int i = 1; i <= 10; ++i) muni.push_back("Group" + std::to_string(i));
    schema.specs = {
        cat("Municipality_Categories", G::Demographic, muni),
        num("Age", G::Demographic),
        cat("Gender", G::Demographic, {"Male", "Female"}),
        cat("Marital_status", G::Demographic, {"Single", "Married", "Other"}),
        cat("Employment_status", G::Demographic, {"Employed", "NotEmployed"}),
        cat("Studenthood_status", G::Demographic, {"Student", "NotStudent"}),
        cat("Income_class", G::Demographic, {"Lowest", "Low", "Middle", "High", "Highest"}),
        cat("Household_Type", G::Household, {"SinglePerson", "Couple", "OtherHousehold"}),
        num("Household_Size", G::Household),
        num("Number_of_cars_of_person", G::Household),
        num("Number_of_children", G::Household),
        num("Number_of_cars_of_household", G::Household),
        num("Trips_of_Car", G::Behavioral),
        num("Trips_of_CarPassenger", G::Behavioral),
        num("Trips_of_PublicTransport", G::Behavioral),
        num("Trips_of_Walking", G::Behavioral),
        num("Trips_of_Bike", G::Behavioral),
        num("Activities_of_Home", G::Behavioral),
        num("Activities_of_Work", G::Behavioral),
        num("Activities_of_Other", G::Behavioral),
        num("Activities_of_School", G::Behavioral),
        num("First_Activity_Start_Time", G::Behavioral),
        num("Last_Activity_End_Time", G::Behavioral),
    };
    schema.validate();
    return schema;
}

} // namespace semapop
