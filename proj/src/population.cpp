#include "semapop/population.hpp"

#include "semapop/io_util.hpp"
#include "semapop/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace semapop {

void validate_population(const Population& pop, const AttributeSchema& schema) {
    if (pop.values.cols() != schema.size())
        throw std::runtime_error("population has " + std::to_string(pop.values.cols()) +
                                 " columns, schema expects " + std::to_string(schema.size()));
    for (Index j = 0; j < schema.size(); ++j) {
        const auto& spec = schema.specs[static_cast<std::size_t>(j)];
        for (Index i = 0; i < pop.n(); ++i) {
            const double v = pop.values(i, j);
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite cell at row " + std::to_string(i) +
                                         ", column " + spec.name);
            if (spec.kind == AttrKind::Categorical) {
                const auto k = static_cast<Index>(v);
                if (v != std::floor(v) || k < 0 || k >= spec.encoded_width())
                    throw std::runtime_error("invalid category index at row " + std::to_string(i) +
                                             ", column " + spec.name);
            } else if (spec.integer_valued && v != std::nearbyint(v)) {
                throw std::runtime_error("non-integer value " + format_real(v) +
                                         " in integer column " + spec.name + " at row " +
                                         std::to_string(i));
            }
        }
    }
}

void validate_encoded(const EncodedBatch& batch, const AttributeSchema& schema, double simplex_tol) {
    if (batch.matrix.cols() != schema.encoded_width())
        throw std::runtime_error("encoded batch width " + std::to_string(batch.matrix.cols()) +
                                 " does not match schema width " +
                                 std::to_string(schema.encoded_width()));
    if (!batch.matrix.allFinite()) throw std::runtime_error("encoded batch has non-finite entries");
    Index off = 0;
    for (const auto& spec : schema.specs) {
        const Index w = spec.encoded_width();
        if (spec.kind == AttrKind::Categorical) {
            for (Index i = 0; i < batch.matrix.rows(); ++i) {
                const auto row = batch.matrix.row(i).segment(off, w);
                if (row.minCoeff() < -simplex_tol || std::abs(row.sum() - 1.0) > simplex_tol)
                    throw std::runtime_error("categorical block for '" + spec.name +
                                             "' is not on the simplex at row " + std::to_string(i));
            }
        }
        off += w;
    }
}

Population load_population(const std::filesystem::path& path, const AttributeSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open population file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty population file: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (static_cast<Index>(header.size()) != schema.size())
        throw std::runtime_error("header has " + std::to_string(header.size()) +
                                 " columns, schema expects " + std::to_string(schema.size()));
    for (Index j = 0; j < schema.size(); ++j) {
        if (header[static_cast<std::size_t>(j)] != schema.specs[static_cast<std::size_t>(j)].name)
            throw std::runtime_error("missing or misplaced column '" +
                                     schema.specs[static_cast<std::size_t>(j)].name +
                                     "' (found '" + header[static_cast<std::size_t>(j)] + "')");
    }

    std::vector<std::vector<double>> rows;
    Index row_idx = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (static_cast<Index>(cells.size()) != schema.size())
            throw std::runtime_error("row " + std::to_string(row_idx) + " has " +
                                     std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(schema.size()));
        std::vector<double> parsed(static_cast<std::size_t>(schema.size()));
        for (Index j = 0; j < schema.size(); ++j) {
            const auto& spec = schema.specs[static_cast<std::size_t>(j)];
            const std::string& cell = cells[static_cast<std::size_t>(j)];
            if (spec.kind == AttrKind::Categorical) {
                const Index k = spec.category_index(cell);
                if (k < 0)
                    throw std::runtime_error("unknown category '" + cell + "' in column " +
                                             spec.name + " at row " + std::to_string(row_idx));
                parsed[static_cast<std::size_t>(j)] = static_cast<double>(k);
            } else {
                double v = 0.0;
                const char* begin = cell.data();
                const char* end = begin + cell.size();
                auto res = std::from_chars(begin, end, v);
                if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
                    throw std::runtime_error("non-numeric cell '" + cell + "' in column " +
                                             spec.name + " at row " + std::to_string(row_idx));
                parsed[static_cast<std::size_t>(j)] = v;
            }
        }
        rows.push_back(std::move(parsed));
        ++row_idx;
    }

    Population pop;
    pop.values.resize(static_cast<Index>(rows.size()), schema.size());
    for (Index i = 0; i < pop.values.rows(); ++i)
        for (Index j = 0; j < schema.size(); ++j)
            pop.values(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return pop;
}

void save_population(const Population& pop, const AttributeSchema& schema,
                     const std::filesystem::path& path) {
    validate_population(pop, schema);
    std::ostringstream out;
    for (Index j = 0; j < schema.size(); ++j) {
        if (j > 0) out << ',';
        out << schema.specs[static_cast<std::size_t>(j)].name;
    }
    out << '\n';
    for (Index i = 0; i < pop.n(); ++i) {
        for (Index j = 0; j < schema.size(); ++j) {
            const auto& spec = schema.specs[static_cast<std::size_t>(j)];
            if (j > 0) out << ',';
            const double v = pop.values(i, j);
            if (spec.kind == AttrKind::Categorical) {
                out << spec.categories[static_cast<std::size_t>(v)];
            } else if (spec.integer_valued) {
                out << static_cast<long long>(std::nearbyint(v));
            } else {
                out << format_real(v);
            }
        }
        out << '\n';
    }
    write_file(path, out.str());
}

AttributeSchema fit_schema_stats(const AttributeSchema& schema, const Population& train,
                                 std::vector<std::string>* warnings) {
    if (train.empty()) throw std::runtime_error("cannot fit schema stats on an empty population");
    validate_population(train, schema);
    AttributeSchema fitted = schema;
    const auto n = static_cast<double>(train.n());
    for (Index j = 0; j < schema.size(); ++j) {
        auto& spec = fitted.specs[static_cast<std::size_t>(j)];
        if (spec.kind != AttrKind::Numerical) continue;
        const auto col = train.values.col(j);
        NumericStats st;
        st.mean = col.mean();
        st.std = std::sqrt((col.array() - st.mean).square().sum() / n);
        st.min = col.minCoeff();
        st.max = col.maxCoeff();
        if (st.std < 1e-6) {
            st.std = 1e-6;
            if (warnings)
                warnings->push_back("attribute '" + spec.name +
                                    "' is constant on the training split; std floored at 1e-6");
        }
        spec.stats = st;
    }
    return fitted;
}

EncodedBatch encode(const Population& pop, const AttributeSchema& schema) {
    if (!schema.has_fitted_stats())
        throw std::runtime_error("encode requires fitted standardization stats");
    validate_population(pop, schema);
    EncodedBatch batch;
    batch.matrix.setZero(pop.n(), schema.encoded_width());
    Index off = 0;
    for (Index j = 0; j < schema.size(); ++j) {
        const auto& spec = schema.specs[static_cast<std::size_t>(j)];
        if (spec.kind == AttrKind::Categorical) {
            for (Index i = 0; i < pop.n(); ++i)
                batch.matrix(i, off + static_cast<Index>(pop.values(i, j))) = 1.0;
        } else {
            batch.matrix.col(off) = (pop.values.col(j).array() - spec.stats->mean) / spec.stats->std;
        }
        off += spec.encoded_width();
    }
    return batch;
}

Population decode(const EncodedBatch& batch, const AttributeSchema& schema, DecodeMode) {
    if (batch.matrix.cols() != schema.encoded_width())
        throw std::runtime_error("encoded batch width does not match schema");
    if (!batch.matrix.allFinite()) throw std::runtime_error("cannot decode non-finite batch");
    if (!schema.has_fitted_stats())
        throw std::runtime_error("decode requires fitted standardization stats");
    Population pop;
    pop.values.resize(batch.matrix.rows(), schema.size());
    Index off = 0;
    for (Index j = 0; j < schema.size(); ++j) {
        const auto& spec = schema.specs[static_cast<std::size_t>(j)];
        const Index w = spec.encoded_width();
        if (spec.kind == AttrKind::Categorical) {
            for (Index i = 0; i < batch.matrix.rows(); ++i) {
                Index best = 0;
                double best_v = batch.matrix(i, off);
                for (Index k = 1; k < w; ++k) {
                    if (batch.matrix(i, off + k) > best_v) {
                        best_v = batch.matrix(i, off + k);
                        best = k; // ties keep the lowest index
                    }
                }
                pop.values(i, j) = static_cast<double>(best);
            }
        } else {
            for (Index i = 0; i < batch.matrix.rows(); ++i) {
                double v = batch.matrix(i, off) * spec.stats->std + spec.stats->mean;
                if (spec.integer_valued) v = std::round(v);
                v = std::clamp(v, spec.stats->min, spec.stats->max);
                pop.values(i, j) = v;
            }
        }
        off += w;
    }
    return pop;
}

Population take_rows(const Population& pop, const std::vector<Index>& rows) {
    Population out;
    out.values.resize(static_cast<Index>(rows.size()), pop.values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.values.row(static_cast<Index>(i)) = pop.values.row(rows[i]);
    return out;
}

Population concat_rows(const Population& a, const Population& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.values.cols() != b.values.cols())
        throw std::runtime_error("cannot concatenate populations with different column counts");
    Population out;
    out.values.resize(a.n() + b.n(), a.values.cols());
    out.values.topRows(a.n()) = a.values;
    out.values.bottomRows(b.n()) = b.values;
    return out;
}

Population stratified_sample(const Population& pop, const AttributeSchema& schema,
                             const std::string& stratum_attr, double fraction,
                             std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::runtime_error("stratified_sample fraction must lie in (0, 1]");
    const Index j = schema.find(stratum_attr);
    if (j < 0 || schema.specs[static_cast<std::size_t>(j)].kind != AttrKind::Categorical)
        throw std::runtime_error("stratum attribute '" + stratum_attr +
                                 "' is not a categorical attribute");
    const auto& spec = schema.specs[static_cast<std::size_t>(j)];

    std::vector<std::vector<Index>> strata(spec.categories.size());
    for (Index i = 0; i < pop.n(); ++i)
        strata[static_cast<std::size_t>(pop.values(i, j))].push_back(i);

    Rng rng(Rng::derive(seed, "stratified_sample"));
    std::vector<Index> chosen;
    for (auto& members : strata) {
        const auto take = static_cast<std::size_t>(
            round_half_away(static_cast<double>(members.size()) * fraction));
        rng.shuffle(members);
        std::vector<Index> picked(members.begin(),
                                  members.begin() + static_cast<std::ptrdiff_t>(
                                                        std::min(take, members.size())));
        std::sort(picked.begin(), picked.end());
        chosen.insert(chosen.end(), picked.begin(), picked.end());
    }
    return take_rows(pop, chosen);
}

std::vector<Population> split_population(const Population& pop, const std::vector<double>& fractions,
                                         std::uint64_t seed) {
    double total = std::accumulate(fractions.begin(), fractions.end(), 0.0);
    if (fractions.empty() || total > 1.0 + 1e-9)
        throw std::runtime_error("split fractions must be non-empty and sum to at most 1");
    std::vector<Index> order(static_cast<std::size_t>(pop.n()));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(Rng::derive(seed, "split_population"));
    rng.shuffle(order);

    std::vector<Population> parts;
    std::size_t start = 0;
    for (std::size_t p = 0; p < fractions.size(); ++p) {
        std::size_t count;
        if (p + 1 == fractions.size() && std::abs(total - 1.0) < 1e-9) {
            count = order.size() - start; // absorb rounding remainder
        } else {
            count = static_cast<std::size_t>(
                round_half_away(fractions[p] * static_cast<double>(pop.n())));
            count = std::min(count, order.size() - start);
        }
        std::vector<Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                order.begin() + static_cast<std::ptrdiff_t>(start + count));
        std::sort(rows.begin(), rows.end());
        parts.push_back(take_rows(pop, rows));
        start += count;
    }
    return parts;
}

} // namespace semapop
