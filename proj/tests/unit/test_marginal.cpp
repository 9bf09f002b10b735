#include "doctest.h"

#include "helpers.hpp"

#include "semapop/marginal.hpp"
#include "semapop/toy.hpp"

#include <cmath>

using namespace semapop;
using testing::max_relative_error;

namespace {

MarginalSpec binary_spec(const Vector& reference) {
    MarginalSpec spec;
    MarginalVariable v;
    v.name = "B";
    v.kind = AttrKind::Categorical;
    v.reference = reference;
    spec.vars = {v};
    return spec;
}

} // namespace

TEST_CASE("categorical_marginal is the column mean of simplex rows") {
    Matrix block(2, 2);
    block << 1, 0, 0, 1;
    Vector m = categorical_marginal(block);
    CHECK(m(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m(1) == doctest::Approx(0.5).epsilon(1e-15));

    block << 0.6, 0.4, 0.2, 0.8;
    m = categorical_marginal(block);
    CHECK(m(0) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(m(1) == doctest::Approx(0.6).epsilon(1e-15));

    Matrix single(1, 3);
    single << 0, 0, 1;
    m = categorical_marginal(single);
    CHECK(m(2) == 1.0);

    Matrix bad(1, 2);
    bad << 0.7, 0.7;
    CHECK_THROWS(categorical_marginal(bad));
}

TEST_CASE("fit_bins: quantile midpoints and half-spacing bandwidth") {
    Rng rng(5);
    Vector values(4000);
    for (Index i = 0; i < values.size(); ++i) values(i) = rng.uniform();
    const auto [centers, sigma] = fit_bins(values, 2);
    REQUIRE(centers.size() == 2);
    CHECK(std::abs(centers(0) - 0.25) < 0.02);
    CHECK(std::abs(centers(1) - 0.75) < 0.02);
    CHECK(sigma == doctest::Approx(0.5 * (centers(1) - centers(0))).epsilon(1e-12));

    Vector constant = Vector::Constant(10, 3.0);
    CHECK_THROWS_WITH_AS(fit_bins(constant, 4),
                         "degenerate continuous variable: all values are identical",
                         std::runtime_error);
}

TEST_CASE("fit_bins collapses duplicate centers with a warning") {
    // two-valued sample: many quantiles coincide
    Vector values(100);
    for (Index i = 0; i < 100; ++i) values(i) = i < 50 ? 0.0 : 1.0;
    std::vector<std::string> warnings;
    const auto [centers, sigma] = fit_bins(values, 8, &warnings);
    CHECK(centers.size() < 8);
    CHECK(!warnings.empty());
    for (Index k = 1; k < centers.size(); ++k) CHECK(centers(k) > centers(k - 1));
    CHECK(sigma > 0.0);
}

TEST_CASE("soft_histogram fixtures") {
    Vector centers(2);
    centers << 0.25, 0.75;

    // sharp kernel: nearly all mass on the matching bin
    Vector at_center(1);
    at_center << 0.25;
    Vector p = soft_histogram(at_center, centers, 0.05);
    CHECK(p(0) >= 0.99);

    // midpoint of two centers splits mass exactly
    Vector mid(1);
    mid << 0.5;
    p = soft_histogram(mid, centers, 0.25);
    CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p(1) == doctest::Approx(0.5).epsilon(1e-15));

    // hand-computed two-point average: each point gives
    // softmax(0, -0.25/(2*0.0625)) = [1, e^-2] / (1 + e^-2)
    Vector pts(2);
    pts << 0.25, 0.75;
    p = soft_histogram(pts, centers, 0.25);
    const double hi = 1.0 / (1.0 + std::exp(-2.0));
    CHECK(hi == doctest::Approx(0.8807970779778823).epsilon(1e-12));
    CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-12));

    Vector single(1);
    single << 0.25;
    p = soft_histogram(single, centers, 0.25);
    CHECK(p(0) == doctest::Approx(hi).epsilon(1e-12));
    CHECK(p(1) == doctest::Approx(1.0 - hi).epsilon(1e-12));

    CHECK_THROWS(soft_histogram(pts, centers, 0.0));
}

TEST_CASE("soft_histogram converges to the nearest-center hard histogram as sigma -> 0") {
    Vector centers(3);
    centers << 0.0, 1.0, 2.0;
    Vector values(4);
    values << 0.1, 0.9, 1.2, 1.9; // no midpoint ties
    const Vector p = soft_histogram(values, centers, 0.01); // spacing / 100
    Vector hard = Vector::Zero(3);
    for (Index i = 0; i < values.size(); ++i) hard(nearest_center(values(i), centers)) += 0.25;
    CHECK((p - hard).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("soft_histogram outputs are simplex vectors") {
    Rng rng(9);
    Vector centers(5);
    centers << -2, -1, 0, 1, 2;
    for (int rep = 0; rep < 20; ++rep) {
        const Vector values = rng.normal_matrix(64, 1);
        const Vector p = soft_histogram(values, centers, 0.5);
        CHECK(p.minCoeff() >= 0.0);
        CHECK(std::abs(p.sum() - 1.0) < 1e-9);
    }
}

TEST_CASE("marginal_loss fixtures") {
    // exact match at eps = 0 is exactly zero
    {
        EncodedBatch gen;
        gen.matrix.resize(2, 2);
        gen.matrix << 1, 0, 0, 1;
        const double loss = marginal_loss(gen, binary_spec((Vector(2) << 0.5, 0.5).finished()), 0.0);
        CHECK(loss == 0.0);
    }
    // all mass on one category vs a fair reference
    {
        EncodedBatch gen;
        gen.matrix.resize(2, 2);
        gen.matrix << 1, 0, 1, 0;
        const double loss = marginal_loss(gen, binary_spec((Vector(2) << 0.5, 0.5).finished()), 0.0);
        CHECK(loss == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    }
    // eps floor: sqrt(eps) per variable
    {
        EncodedBatch gen;
        gen.matrix.resize(2, 2);
        gen.matrix << 0.5, 0.5, 0.5, 0.5;
        const double loss =
            marginal_loss(gen, binary_spec((Vector(2) << 0.5, 0.5).finished()), 1e-8);
        CHECK(loss == doctest::Approx(1e-4).epsilon(1e-9));
    }
    // support-size mismatch
    {
        EncodedBatch gen;
        gen.matrix.resize(1, 3);
        gen.matrix << 1, 0, 0;
        CHECK_THROWS(marginal_loss(gen, binary_spec((Vector(2) << 0.5, 0.5).finished()), 0.0));
    }
}

TEST_CASE("marginal_loss is zero at eps=0 iff every marginal matches") {
    EncodedBatch gen;
    gen.matrix.resize(4, 2);
    gen.matrix << 1, 0, 1, 0, 0, 1, 0, 1;
    const auto spec_match = binary_spec((Vector(2) << 0.5, 0.5).finished());
    const auto spec_off = binary_spec((Vector(2) << 0.25, 0.75).finished());
    CHECK(marginal_loss(gen, spec_match, 0.0) == 0.0);
    CHECK(marginal_loss(gen, spec_off, 0.0) > 0.0);
}

TEST_CASE("build_marginal_spec covers the schema in order with normalized references") {
    const ToyJointSpec toy = toy_travel_spec();
    auto schema = toy.schema();
    const Population pop = make_toy_population(toy, 3000, 8);
    schema = fit_schema_stats(schema, pop);
    const MarginalSpec spec = build_marginal_spec(pop, schema, 5);
    REQUIRE(spec.vars.size() == static_cast<std::size_t>(schema.size()));
    for (Index j = 0; j < schema.size(); ++j) {
        const auto& v = spec.vars[static_cast<std::size_t>(j)];
        CHECK(v.name == schema.specs[static_cast<std::size_t>(j)].name);
        CHECK(std::abs(v.reference.sum() - 1.0) < 1e-9);
    }
    // JSON round trip
    const MarginalSpec parsed = parse_marginal_spec_json(marginal_spec_to_json(spec));
    for (std::size_t j = 0; j < spec.vars.size(); ++j) {
        CHECK(parsed.vars[j].reference == spec.vars[j].reference);
        CHECK(parsed.vars[j].sigma == spec.vars[j].sigma);
    }
}

TEST_CASE("marginal loss graph matches the plain value and differentiates cleanly") {
    const ToyJointSpec toy = toy_travel_spec();
    auto schema = toy.schema();
    const Population pop = make_toy_population(toy, 400, 31);
    schema = fit_schema_stats(schema, pop);
    const MarginalSpec spec = build_marginal_spec(pop, schema, 4);

    EncodedBatch gen = encode(make_toy_population(toy, 64, 32), schema);
    ad::Tape tape;
    const ad::Val gen_leaf = tape.leaf(gen.matrix);
    const ad::Val loss = marginal_loss_graph(gen_leaf, spec, 1e-8);
    CHECK(loss.scalar() == doctest::Approx(marginal_loss(gen, spec, 1e-8)).epsilon(1e-12));

    // analytic gradient wrt the batch matches central finite differences of
    // the same graph evaluation
    const Matrix g = tape.gradients(loss, {gen_leaf})[0].v();
    auto eval = [&]() {
        ad::Tape t2;
        return marginal_loss_graph(t2.constant(gen.matrix), spec, 1e-8).scalar();
    };
    Rng rng(12);
    for (int probe = 0; probe < 10; ++probe) {
        const Index i = rng.uniform_index(gen.matrix.rows());
        const Index j = rng.uniform_index(gen.matrix.cols());
        const double orig = gen.matrix(i, j);
        const double h = 1e-6;
        gen.matrix(i, j) = orig + h;
        const double fp = eval();
        gen.matrix(i, j) = orig - h;
        const double fm = eval();
        gen.matrix(i, j) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        CHECK(g(i, j) == doctest::Approx(fd).epsilon(1e-4));
    }
}
