#include "doa/array_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace doa {

double wrap_two_pi(double theta) {
    double w = std::fmod(theta, kTwoPi);
    if (w < 0.0) w += kTwoPi;
    // fmod of a tiny negative value can round up to exactly 2*pi
    if (w >= kTwoPi) w = 0.0;
    return w;
}

double wrap_pi(double theta) { return wrap_two_pi(theta + kPi) - kPi; }

void ArrayGeometry::validate() const {
    if (num_antennas < 2) throw std::invalid_argument("array needs at least 2 antennas");
    if (!(radius_over_wavelength > 0.0)) throw std::invalid_argument("radius/wavelength must be positive");
    if (!(elevation >= 0.0 && elevation <= kPi / 2)) throw std::invalid_argument("elevation must lie in [0, pi/2]");
}

void SubarraySelection::validate(int num_antennas) const {
    if (antenna_indices.empty()) throw std::invalid_argument("subarray selection is empty");
    const auto w = antenna_indices.front().size();
    if (w == 0) throw std::invalid_argument("subarray size must be positive");
    for (const auto& list : antenna_indices) {
        if (list.size() != w) throw std::invalid_argument("all subarrays must have the same size");
        std::set<int> seen;
        for (int idx : list) {
            if (idx < 1 || idx > num_antennas)
                throw std::invalid_argument("antenna index " + std::to_string(idx) + " out of range");
            if (!seen.insert(idx).second) throw std::invalid_argument("duplicate antenna index in subarray");
        }
    }
}

SubarraySelection SubarraySelection::fully_sampled(int num_antennas) {
    std::vector<int> all(static_cast<std::size_t>(num_antennas));
    for (int m = 0; m < num_antennas; ++m) all[static_cast<std::size_t>(m)] = m + 1;
    return SubarraySelection{{all}};
}

SubarraySelection SubarraySelection::table2_scheme() {
    return SubarraySelection{{{1, 2, 9}, {1, 3, 8}, {1, 4, 7}, {1, 5, 6}}};
}

void SourceScene::validate() const {
    const auto l = doas.size();
    if (source_cov.rows() != l || source_cov.cols() != l)
        throw std::invalid_argument("source covariance does not match number of sources");
    for (Eigen::Index i = 0; i < l; ++i) {
        if (!(doas[i] >= 0.0 && doas[i] < kTwoPi)) throw std::invalid_argument("DoA outside [0, 2pi)");
    }
    if (!(noise_power > 0.0)) throw std::invalid_argument("noise power must be positive");
    if (l > 0) {
        if ((source_cov - source_cov.adjoint()).norm() > 1e-10 * (1.0 + source_cov.norm()))
            throw std::invalid_argument("source covariance is not Hermitian");
        Eigen::SelfAdjointEigenSolver<CMatrix> es(source_cov, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-10) throw std::invalid_argument("source covariance is not PSD");
    }
}

CVector steering_vector(double theta, const ArrayGeometry& geom) {
    const int m_count = geom.num_antennas;
    const double scale = kTwoPi * geom.radius_over_wavelength * std::cos(geom.elevation);
    CVector a(m_count);
    for (int m = 0; m < m_count; ++m) {
        const double phase = -scale * std::cos(theta - kTwoPi * m / m_count);
        a[m] = cdouble(std::cos(phase), std::sin(phase));
    }
    return a;
}

CVector steering_derivative(double theta, const ArrayGeometry& geom) {
    const int m_count = geom.num_antennas;
    const double scale = kTwoPi * geom.radius_over_wavelength * std::cos(geom.elevation);
    CVector a = steering_vector(theta, geom);
    for (int m = 0; m < m_count; ++m) {
        a[m] *= cdouble(0.0, scale * std::sin(theta - kTwoPi * m / m_count));
    }
    return a;
}

CMatrix array_manifold(const RVector& doas, const ArrayGeometry& geom) {
    CMatrix a(geom.num_antennas, doas.size());
    for (Eigen::Index l = 0; l < doas.size(); ++l) a.col(l) = steering_vector(doas[l], geom);
    return a;
}

CMatrix select_rows(const CMatrix& full, const SubarraySelection& sel, int k) {
    const auto& idx = sel.antenna_indices.at(static_cast<std::size_t>(k));
    CMatrix out(static_cast<Eigen::Index>(idx.size()), full.cols());
    for (std::size_t w = 0; w < idx.size(); ++w) out.row(static_cast<Eigen::Index>(w)) = full.row(idx[w] - 1);
    return out;
}

CMatrix model_covariance(int k, const RVector& doas, const CMatrix& source_cov, double noise_power,
                         const ArrayGeometry& geom, const SubarraySelection& sel) {
    if (source_cov.rows() != doas.size() || source_cov.cols() != doas.size())
        throw std::invalid_argument("model_covariance: source covariance does not match DoA count");
    if (k < 0 || k >= sel.num_subarrays()) throw std::out_of_range("model_covariance: subarray index");
    const CMatrix a = select_rows(array_manifold(doas, geom), sel, k);
    CMatrix c = a * source_cov * a.adjoint();
    c.diagonal().array() += noise_power;
    return 0.5 * (c + c.adjoint());
}

std::vector<CMatrix> model_covariances(const SourceScene& scene, const ArrayGeometry& geom,
                                       const SubarraySelection& sel) {
    std::vector<CMatrix> out;
    out.reserve(static_cast<std::size_t>(sel.num_subarrays()));
    for (int k = 0; k < sel.num_subarrays(); ++k)
        out.push_back(model_covariance(k, scene.doas, scene.source_cov, scene.noise_power, geom, sel));
    return out;
}

RMatrix correlation_pattern(double rho, int num_sources) {
    RMatrix c(num_sources, num_sources);
    for (int i = 0; i < num_sources; ++i)
        for (int j = 0; j < num_sources; ++j) c(i, j) = std::pow(rho, std::abs(i - j));
    return c;
}

RMatrix psd_sqrt(const RMatrix& m) {
    Eigen::SelfAdjointEigenSolver<RMatrix> es(m);
    const RVector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    RMatrix s = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (s + s.transpose());
}

CMatrix psd_sqrt(const CMatrix& m) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(m);
    const RVector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    CMatrix s = es.eigenvectors() * d.cast<cdouble>().asDiagonal() * es.eigenvectors().adjoint();
    return 0.5 * (s + s.adjoint());
}

CMatrix source_covariance(const CorrelationModel& corr) {
    if (!(corr.rho >= 0.0 && corr.rho <= 1.0)) throw std::invalid_argument("correlation rho must lie in [0, 1]");
    const int l = static_cast<int>(corr.powers.size());
    if (corr.rho == 0.0) return corr.powers.cast<cdouble>().asDiagonal();
    const RMatrix s = psd_sqrt(correlation_pattern(corr.rho, l));
    RMatrix c = s * corr.powers.asDiagonal() * s;
    return (0.5 * (c + c.transpose())).cast<cdouble>();
}

}  // namespace doa
