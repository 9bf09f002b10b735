#include "doctest.h"

#include "helpers.hpp"

#include "semapop/conditioning.hpp"

using namespace semapop;
using testing::finite_difference;
using testing::max_relative_error;

TEST_CASE("adapter output dimension and inference determinism") {
    Rng rng(3);
    const AdapterParams params = AdapterParams::init(20, 1024, 128, rng);
    const Matrix e = rng.normal_matrix(4, 20);
    const Matrix c1 = adapt(e, params, false, 1);
    const Matrix c2 = adapt(e, params, false, 2); // seed irrelevant at inference
    CHECK(c1.cols() == 128);
    CHECK(c1 == c2);

    // training mode applies dropout deterministically under the seed
    const Matrix t1 = adapt(e, params, true, 5);
    const Matrix t2 = adapt(e, params, true, 5);
    const Matrix t3 = adapt(e, params, true, 6);
    CHECK(t1 == t2);
    CHECK(t1 != t3);

    CHECK_THROWS(adapt(rng.normal_matrix(4, 21), params, false, 0));
}

TEST_CASE("adapter with zero parameters maps everything to zero") {
    AdapterParams params;
    params.l1 = nn::Affine::zeros(6, 8);
    params.l2 = nn::Affine::zeros(8, 4);
    Rng rng(4);
    const Matrix c = adapt(rng.normal_matrix(3, 6), params, false, 0);
    CHECK(c.isZero());
}

TEST_CASE("adapter output is bounded on bounded inputs") {
    Rng rng(9);
    const AdapterParams params = AdapterParams::init(10, 64, 16, rng);
    const double w1 = params.l1.W.cwiseAbs().colwise().sum().maxCoeff();
    const double w2 = params.l2.W.cwiseAbs().colwise().sum().maxCoeff();
    const Matrix e = rng.uniform_matrix(50, 10); // entries in [0, 1]
    const Matrix c = adapt(e, params, false, 0);
    // crude Lipschitz-style bound through the two affine maps
    const double bound = (10.0 * w1 + params.l1.b.cwiseAbs().maxCoeff()) * w2 * 64.0 +
                         params.l2.b.cwiseAbs().maxCoeff() + 1.0;
    CHECK(c.cwiseAbs().maxCoeff() < bound);
}

TEST_CASE("film at identity initialization is exact") {
    const FiLMLayerParams film_params = FiLMLayerParams::identity(5, 7);
    Rng rng(5);
    const Matrix h = rng.normal_matrix(6, 7);
    const Matrix c = rng.normal_matrix(6, 5);
    const Matrix out = film(h, c, film_params);
    CHECK(out == h); // bit-exact identity
}

TEST_CASE("film doubles features when gamma is one and beta is zero") {
    FiLMLayerParams p = FiLMLayerParams::identity(2, 2);
    p.gamma.b = Matrix::Ones(1, 2); // gamma(c) == [1, 1] for every c
    Matrix h(1, 2);
    h << 2, 3;
    const Matrix out = film(h, Matrix::Zero(1, 2), p);
    CHECK(out(0, 0) == 4.0);
    CHECK(out(0, 1) == 6.0);
}

TEST_CASE("film Jacobian wrt features is diag(1 + gamma(c))") {
    Rng rng(6);
    FiLMLayerParams p = FiLMLayerParams::identity(3, 4);
    p.gamma = nn::Affine::he(3, 4, rng);
    p.beta = nn::Affine::he(3, 4, rng);
    Matrix h = rng.normal_matrix(1, 4);
    const Matrix c = rng.normal_matrix(1, 3);

    const Matrix gamma = nn::affine_forward(c, p.gamma);
    for (Index j = 0; j < 4; ++j) {
        // directional finite difference along feature j
        Matrix probe = h;
        const double fd = finite_difference(probe, [&]() {
            return film(probe, c, p)(0, j);
        })(0, j);
        CHECK(fd == doctest::Approx(1.0 + gamma(0, j)).epsilon(1e-5));
    }
}

TEST_CASE("film(h, c) - beta(c) is linear in h") {
    Rng rng(7);
    FiLMLayerParams p = FiLMLayerParams::identity(3, 4);
    p.gamma = nn::Affine::he(3, 4, rng);
    p.beta = nn::Affine::he(3, 4, rng);
    const Matrix c = rng.normal_matrix(2, 3);
    const Matrix h1 = rng.normal_matrix(2, 4);
    const Matrix h2 = rng.normal_matrix(2, 4);
    const Matrix beta = nn::affine_forward(c, p.beta);

    const double a = 1.7, b = -0.4;
    const Matrix lhs = film(a * h1 + b * h2, c, p) - beta;
    const Matrix rhs = a * (film(h1, c, p) - beta) + b * (film(h2, c, p) - beta);
    CHECK(max_relative_error(lhs, rhs) < 1e-12);
}

TEST_CASE("build_initial_hidden concatenates noise first") {
    Matrix z(1, 1), c(1, 2);
    z << 1;
    c << 2, 3;
    const Matrix h = build_initial_hidden(z, c);
    CHECK(h.cols() == 3);
    CHECK(h(0, 0) == 1.0);
    CHECK(h(0, 1) == 2.0);
    CHECK(h(0, 2) == 3.0);

    // default dims: 128 noise + 128 conditioning = 256
    Rng rng(8);
    const Matrix h2 = build_initial_hidden(rng.normal_matrix(2, 128), rng.normal_matrix(2, 128));
    CHECK(h2.cols() == 256);
}

TEST_CASE("graph builders agree with the plain forward passes") {
    Rng rng(10);
    const AdapterParams ap = AdapterParams::init(12, 32, 8, rng);
    FiLMLayerParams fp = FiLMLayerParams::identity(8, 6);
    fp.gamma = nn::Affine::he(8, 6, rng);
    fp.beta = nn::Affine::he(8, 6, rng);
    const Matrix e = rng.normal_matrix(5, 12);
    const Matrix h = rng.normal_matrix(5, 6);

    ad::Tape tape;
    nn::Binder binder(tape, false);
    const ad::Val c_graph = adapt_graph(binder, tape.constant(e), ap, nullptr);
    CHECK(max_relative_error(c_graph.v(), adapt(e, ap, false, 0)) < 1e-14);

    const ad::Val film_out = film_graph(binder, tape.constant(h), c_graph, fp);
    CHECK(max_relative_error(film_out.v(), film(h, adapt(e, ap, false, 0), fp)) < 1e-14);
}
