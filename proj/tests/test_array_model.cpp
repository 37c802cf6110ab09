#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "doa/array_model.hpp"
#include "doa/rng.hpp"
#include "doa/signal_sim.hpp"

#include <random>

using namespace doa;

TEST_CASE("steering vector: full turn and zenith") {
    ArrayGeometry g;
    const CVector a = steering_vector(0.0, g);
    CHECK(std::abs(a[0] - cdouble(1.0, 0.0)) < 1e-12);

    g.elevation = kPi / 2;
    const CVector z = steering_vector(1.234, g);
    for (Eigen::Index m = 0; m < z.size(); ++m) CHECK(std::abs(z[m] - cdouble(1.0, 0.0)) < 1e-12);
}

TEST_CASE("steering vector matches a 40-digit evaluation") {
    // exp(-j 2 pi cos(60deg - 2 pi / 9)), evaluated with mpmath at 40 digits
    const cdouble expected(0.9290637857801697275461886729379838161334, 0.3699195614614329831904363346666866381628);
    const CVector a = steering_vector(60.0 * kPi / 180.0, ArrayGeometry{});
    CHECK(std::abs(a[1] - expected) < 1e-13);
}

TEST_CASE("steering vector has unit modulus everywhere") {
    Rng rng(7);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    ArrayGeometry g{12, 1.7, 0.3};
    for (int i = 0; i < 200; ++i) {
        const CVector a = steering_vector(u(rng), g);
        for (Eigen::Index m = 0; m < a.size(); ++m) CHECK(std::abs(std::abs(a[m]) - 1.0) < 1e-12);
    }
}

TEST_CASE("steering derivative matches finite differences") {
    ArrayGeometry g;
    const double t = 1.1, h = 1e-6;
    const CVector fd = (steering_vector(t + h, g) - steering_vector(t - h, g)) / (2 * h);
    CHECK((steering_derivative(t, g) - fd).norm() < 1e-8);
}

TEST_CASE("array manifold columns are steering vectors and permute with the angles") {
    ArrayGeometry g;
    RVector t(3);
    t << 0.2, 2.5, 4.0;
    const CMatrix a = array_manifold(t, g);
    for (int l = 0; l < 3; ++l) CHECK((a.col(l) - steering_vector(t[l], g)).norm() == 0.0);
    RVector p(3);
    p << 4.0, 0.2, 2.5;
    const CMatrix b = array_manifold(p, g);
    CHECK((b.col(0) - a.col(2)).norm() == 0.0);
    CHECK((b.col(1) - a.col(0)).norm() == 0.0);
}

TEST_CASE("model covariance: noise only, rank one, subarray consistency") {
    ArrayGeometry g;
    const auto sel = SubarraySelection::table2_scheme();
    RVector t(2);
    t << 0.5, 3.0;
    const CMatrix zero = CMatrix::Zero(2, 2);
    const CMatrix c0 = model_covariance(0, t, zero, 0.3, g, sel);
    CHECK((c0 - 0.3 * CMatrix::Identity(3, 3)).norm() < 1e-15);

    RVector one(1);
    one << 1.0;
    const CMatrix c1 = model_covariance(2, one, CMatrix::Identity(1, 1), 0.0, g, sel);
    CHECK(std::abs(c1.trace() - cdouble(3.0, 0.0)) < 1e-12);
    Eigen::SelfAdjointEigenSolver<CMatrix> es(c1);
    CHECK(es.eigenvalues()[0] > -1e-12);
    CHECK(std::abs(es.eigenvalues()[1]) < 1e-12);

    const CMatrix cs = source_covariance(CorrelationModel{0.6, RVector::Ones(2)});
    const auto full = SubarraySelection::fully_sampled(9);
    const CMatrix cf = model_covariance(0, t, cs, 0.1, g, full);
    for (int k = 0; k < sel.num_subarrays(); ++k) {
        const CMatrix ck = model_covariance(k, t, cs, 0.1, g, sel);
        CHECK((ck - ck.adjoint()).norm() < 1e-12);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const int a = sel.antenna_indices[k][i] - 1, b = sel.antenna_indices[k][j] - 1;
                CHECK(std::abs(ck(i, j) - cf(a, b)) < 1e-12);
            }
        Eigen::SelfAdjointEigenSolver<CMatrix> es2(ck);
        CHECK(es2.eigenvalues().minCoeff() >= 0.1 - 1e-9);
    }
}

TEST_CASE("model covariance rejects mismatched source covariance") {
    RVector t(2);
    t << 0.5, 3.0;
    CHECK_THROWS(model_covariance(0, t, CMatrix::Identity(3, 3), 0.1, ArrayGeometry{},
                                  SubarraySelection::table2_scheme()));
}

TEST_CASE("source covariance: identity pattern, rank one, PSD") {
    RVector p(3);
    p << 1.0, 0.5, 0.25;
    const CMatrix d = source_covariance(CorrelationModel{0.0, p});
    CHECK((d - CMatrix(p.cast<cdouble>().asDiagonal())).norm() == 0.0);

    const RMatrix ones = correlation_pattern(1.0, 3);
    CHECK((ones - RMatrix::Ones(3, 3)).norm() == 0.0);
    const CMatrix r1 = source_covariance(CorrelationModel{1.0, RVector::Ones(3)});
    Eigen::SelfAdjointEigenSolver<CMatrix> es(r1);
    CHECK(std::abs(es.eigenvalues()[0]) < 1e-10);
    CHECK(std::abs(es.eigenvalues()[1]) < 1e-10);
    CHECK(std::abs(es.eigenvalues()[2] - 3.0) < 1e-10);

    Rng rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        RVector q(4);
        for (int l = 0; l < 4; ++l) q[l] = 0.05 + u(rng);
        const CMatrix c = source_covariance(CorrelationModel{u(rng), q});
        Eigen::SelfAdjointEigenSolver<CMatrix> e(c);
        CHECK(e.eigenvalues().minCoeff() >= -1e-10);
    }
    CHECK_THROWS(source_covariance(CorrelationModel{1.5, p}));
    CHECK_THROWS(source_covariance(CorrelationModel{-0.1, p}));
}

TEST_CASE("correlation pattern follows the Toeplitz powers") {
    const RMatrix c = correlation_pattern(0.5, 3);
    CHECK(c(0, 1) == doctest::Approx(0.5));
    CHECK(c(0, 2) == doctest::Approx(0.25));
    CHECK(c(2, 1) == doctest::Approx(0.5));
}

TEST_CASE("geometry and selection validation") {
    CHECK_THROWS(ArrayGeometry{1, 1.0, 0.0}.validate());
    CHECK_THROWS(ArrayGeometry{9, 0.0, 0.0}.validate());
    CHECK_THROWS(ArrayGeometry{9, 1.0, 2.0}.validate());
    CHECK_NOTHROW(SubarraySelection::table2_scheme().validate(9));
    CHECK_THROWS(SubarraySelection{{{1, 1, 2}}}.validate(9));
    CHECK_THROWS(SubarraySelection{{{1, 2, 10}}}.validate(9));
    CHECK_THROWS(SubarraySelection{{{1, 2, 3}, {1, 2}}}.validate(9));
    const auto f = SubarraySelection::fully_sampled(9);
    CHECK(f.num_subarrays() == 1);
    CHECK(f.subarray_size() == 9);
}

TEST_CASE("angle wrapping") {
    CHECK(wrap_two_pi(-0.5) == doctest::Approx(kTwoPi - 0.5));
    CHECK(wrap_two_pi(kTwoPi) == 0.0);
    CHECK(wrap_pi(kPi) == doctest::Approx(-kPi));
    CHECK(wrap_pi(0.25) == doctest::Approx(0.25));
}
