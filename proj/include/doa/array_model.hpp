#pragma once

// Uniform circular array geometry, steering vectors, subarray switching
// patterns and the resulting per-subarray model covariances.

#include <Eigen/Dense>

#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace doa {

using cdouble = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using RVector = Eigen::VectorXd;
using RMatrix = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Wraps an angle into [0, 2*pi).
double wrap_two_pi(double theta);
// Wraps an angle into [-pi, pi).
double wrap_pi(double theta);

struct ArrayGeometry {
    int num_antennas = 9;
    double radius_over_wavelength = 1.0;
    double elevation = 0.0;  // radians, in [0, pi/2]

    void validate() const;
};

// K switching patterns, each a list of W distinct 1-based antenna indices.
struct SubarraySelection {
    std::vector<std::vector<int>> antenna_indices;

    int num_subarrays() const { return static_cast<int>(antenna_indices.size()); }
    int subarray_size() const {
        return antenna_indices.empty() ? 0 : static_cast<int>(antenna_indices.front().size());
    }

    void validate(int num_antennas) const;

    // K = 1, identity selection of all M antennas.
    static SubarraySelection fully_sampled(int num_antennas);
    // {1,2,9}, {1,3,8}, {1,4,7}, {1,5,6} on a 9-element UCA.
    static SubarraySelection table2_scheme();
};

struct SourceScene {
    RVector doas;        // L angles in [0, 2*pi)
    CMatrix source_cov;  // L x L Hermitian PSD
    double noise_power = 1.0;

    int num_sources() const { return static_cast<int>(doas.size()); }
    void validate() const;
};

struct CorrelationModel {
    double rho = 0.0;
    RVector powers;
};

// a_m(theta) = exp(-j 2 pi (R/lambda) cos(phi) cos(theta - 2 pi (m-1)/M))
CVector steering_vector(double theta, const ArrayGeometry& geom);

// d a_m / d theta
CVector steering_derivative(double theta, const ArrayGeometry& geom);

// M x L matrix whose columns are the steering vectors of `doas`.
CMatrix array_manifold(const RVector& doas, const ArrayGeometry& geom);

// Rows of `full` (M x L) picked by the 0-based subarray `k`.
CMatrix select_rows(const CMatrix& full, const SubarraySelection& sel, int k);

// G^(k) A C_s A^H G^(k),H + sigma^2 I_W for 0-based subarray k.
CMatrix model_covariance(int k, const RVector& doas, const CMatrix& source_cov,
                         double noise_power, const ArrayGeometry& geom,
                         const SubarraySelection& sel);

// Model covariances for all K subarrays.
std::vector<CMatrix> model_covariances(const SourceScene& scene, const ArrayGeometry& geom,
                                       const SubarraySelection& sel);

// Toeplitz correlation pattern (C_rho)_{ij} = rho^{|i-j|}.
RMatrix correlation_pattern(double rho, int num_sources);

// Symmetric PSD square root via eigendecomposition, negative eigenvalues clamped.
RMatrix psd_sqrt(const RMatrix& m);
CMatrix psd_sqrt(const CMatrix& m);

// C_s = C_rho^{1/2} diag(powers) C_rho^{1/2}.
CMatrix source_covariance(const CorrelationModel& corr);

}  // namespace doa
