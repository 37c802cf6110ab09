#pragma once

// Stochastic (Gaussian) negative log-likelihood of the subarray sample
// covariances, its analytic gradient, and gradient-descent refinement.

#include "doa/array_model.hpp"

#include <optional>
#include <vector>

namespace doa {

struct LikelihoodModel {
    ArrayGeometry geometry;
    SubarraySelection selection;
    int num_snapshots = 10;
};

// DoAs, log source powers, log noise power and an optional correlation
// coefficient (source covariance C_rho^{1/2} diag(p) C_rho^{1/2}).
struct MlParams {
    RVector doas;
    RVector log_powers;
    double log_noise = 0.0;
    std::optional<double> rho;

    int num_sources() const { return static_cast<int>(doas.size()); }
    CMatrix source_cov() const;
};

struct MlGradient {
    RVector doas;
    RVector log_powers;
    double log_noise = 0.0;
    double rho = 0.0;

    double norm() const;
};

// sum_k N [log det C_k + tr(C_k^{-1} Chat_k)], constants dropped.
double nll(const std::vector<CMatrix>& covs, const MlParams& params, const LikelihoodModel& model);

MlGradient nll_gradient(const std::vector<CMatrix>& covs, const MlParams& params, const LikelihoodModel& model);

struct RefineOptions {
    int max_iterations = 500;
    double gradient_tolerance = 1e-6;
    double armijo = 1e-4;
    int max_backtracks = 60;
    bool optimize_rho = false;
};

struct RefineResult {
    MlParams params;
    std::vector<double> nll_trace;  // accepted values, starting with the initial one
    int iterations = 0;
    int accepted_steps = 0;
    bool converged = false;

    const RVector& doas() const { return params.doas; }
};

// Noise from the smallest subarray eigenvalues, then a 1-d scan of one
// shared source power.
MlParams initialize_nuisance(const RVector& doas, const std::vector<CMatrix>& covs, const LikelihoodModel& model,
                             bool with_rho = false);

// Armijo-backtracking gradient descent over DoAs, log powers, log noise (and rho).
RefineResult refine_from(const MlParams& initial, const std::vector<CMatrix>& covs, const LikelihoodModel& model,
                         const RefineOptions& options = {});

RefineResult refine(const RVector& initial_doas, const std::vector<CMatrix>& covs, const LikelihoodModel& model,
                    const RefineOptions& options = {});

// Refinement initialised at the true DoAs and true nuisance values.
RefineResult genie_ml(const RVector& true_doas, const RVector& true_powers, double true_noise,
                      const std::vector<CMatrix>& covs, const LikelihoodModel& model,
                      const RefineOptions& options = {}, std::optional<double> true_rho = std::nullopt);

}  // namespace doa
