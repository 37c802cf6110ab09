#include "doa/likelihood.hpp"

#include "doa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace doa {

namespace {

// Largest correlation the optimiser may reach; the square-root derivative
// blows up at rho = 1.
constexpr double kRhoCeiling = 1.0 - 1e-6;

struct SqrtAndDerivative {
    RMatrix sqrt;
    RMatrix derivative;  // d sqrt(C_rho) / d rho
};

SqrtAndDerivative correlation_sqrt(double rho, int l) {
    const RMatrix c = correlation_pattern(rho, l);
    RMatrix dc = RMatrix::Zero(l, l);
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j) {
            const int d = std::abs(i - j);
            if (d > 0) dc(i, j) = d * std::pow(rho, d - 1);
        }
    Eigen::SelfAdjointEigenSolver<RMatrix> es(c);
    const RVector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const RMatrix& u = es.eigenvectors();
    RMatrix x = u.transpose() * dc * u;
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j) {
            const double denom = root[i] + root[j];
            x(i, j) = denom > 1e-12 ? x(i, j) / denom : 0.0;
        }
    SqrtAndDerivative out;
    out.sqrt = u * root.asDiagonal() * u.transpose();
    out.derivative = u * x * u.transpose();
    return out;
}

struct SubarrayTerm {
    CMatrix manifold;  // W x L
    CMatrix cov;       // W x W model covariance
    Eigen::LLT<CMatrix> llt;
};

SubarrayTerm subarray_term(const CMatrix& full_manifold, const CMatrix& source_cov, double noise,
                           const SubarraySelection& sel, int k) {
    SubarrayTerm t;
    t.manifold = select_rows(full_manifold, sel, k);
    t.cov = t.manifold * source_cov * t.manifold.adjoint();
    t.cov.diagonal().array() += noise;
    t.cov = 0.5 * (t.cov + t.cov.adjoint());
    t.llt.compute(t.cov);
    if (t.llt.info() != Eigen::Success) throw NumericalError("model covariance is not positive definite");
    return t;
}

void check_inputs(const std::vector<CMatrix>& covs, const MlParams& params, const LikelihoodModel& model) {
    if (static_cast<int>(covs.size()) != model.selection.num_subarrays())
        throw std::invalid_argument("nll: one sample covariance per subarray expected");
    if (params.log_powers.size() != params.doas.size()) throw std::invalid_argument("nll: power/DoA count mismatch");
}

}  // namespace

CMatrix MlParams::source_cov() const {
    const RVector p = log_powers.array().exp();
    if (!rho.has_value()) return p.cast<cdouble>().asDiagonal();
    const RMatrix s = correlation_sqrt(std::clamp(*rho, 0.0, 1.0), num_sources()).sqrt;
    return (s * p.asDiagonal() * s).cast<cdouble>();
}

double MlGradient::norm() const {
    return std::sqrt(doas.squaredNorm() + log_powers.squaredNorm() + log_noise * log_noise + rho * rho);
}

double nll(const std::vector<CMatrix>& covs, const MlParams& params, const LikelihoodModel& model) {
    check_inputs(covs, params, model);
    const CMatrix full = array_manifold(params.doas, model.geometry);
    const CMatrix cs = params.source_cov();
    const double noise = std::exp(params.log_noise);
    double total = 0.0;
    for (int k = 0; k < model.selection.num_subarrays(); ++k) {
        const SubarrayTerm t = subarray_term(full, cs, noise, model.selection, k);
        const CMatrix& l = t.llt.matrixL();
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i).real());
        const double trace = t.llt.solve(covs[static_cast<std::size_t>(k)]).trace().real();
        total += model.num_snapshots * (logdet + trace);
    }
    return total;
}

MlGradient nll_gradient(const std::vector<CMatrix>& covs, const MlParams& params, const LikelihoodModel& model) {
    check_inputs(covs, params, model);
    const int l = params.num_sources();
    const RVector powers = params.log_powers.array().exp();
    const double noise = std::exp(params.log_noise);

    RMatrix s = RMatrix::Identity(l, l);
    RMatrix ds = RMatrix::Zero(l, l);
    if (params.rho.has_value()) {
        const auto sd = correlation_sqrt(std::clamp(*params.rho, 0.0, 1.0), l);
        s = sd.sqrt;
        ds = sd.derivative;
    }
    const CMatrix cs = (s * powers.asDiagonal() * s).cast<cdouble>();
    const CMatrix full = array_manifold(params.doas, model.geometry);
    CMatrix full_deriv(model.geometry.num_antennas, l);
    for (int i = 0; i < l; ++i) full_deriv.col(i) = steering_derivative(params.doas[i], model.geometry);

    MlGradient g;
    g.doas = RVector::Zero(l);
    g.log_powers = RVector::Zero(l);
    const double n = model.num_snapshots;
    for (int k = 0; k < model.selection.num_subarrays(); ++k) {
        const SubarrayTerm t = subarray_term(full, cs, noise, model.selection, k);
        const auto w = t.cov.rows();
        const CMatrix cinv = t.llt.solve(CMatrix::Identity(w, w));
        const CMatrix gamma = cinv - cinv * covs[static_cast<std::size_t>(k)] * cinv;
        const CMatrix& a = t.manifold;
        const CMatrix d = select_rows(full_deriv, model.selection, k);

        const CMatrix pag = cs * a.adjoint() * gamma;  // L x W
        for (int i = 0; i < l; ++i) g.doas[i] += n * 2.0 * (pag.row(i) * d.col(i)).value().real();

        const CMatrix b = a.adjoint() * gamma * a;  // L x L
        const CMatrix sbs = s.cast<cdouble>() * b * s.cast<cdouble>();
        for (int i = 0; i < l; ++i) g.log_powers[i] += n * powers[i] * sbs(i, i).real();

        g.log_noise += n * noise * gamma.trace().real();

        if (params.rho.has_value()) {
            const CMatrix dp = (ds * powers.asDiagonal() * s + s * powers.asDiagonal() * ds).cast<cdouble>();
            g.rho += n * (b * dp).trace().real();
        }
    }
    return g;
}

MlParams initialize_nuisance(const RVector& doas, const std::vector<CMatrix>& covs, const LikelihoodModel& model,
                             bool with_rho) {
    double noise = 0.0;
    double mean_diag = 0.0;
    for (const auto& c : covs) {
        Eigen::SelfAdjointEigenSolver<CMatrix> es(c, Eigen::EigenvaluesOnly);
        noise += es.eigenvalues().minCoeff();
        mean_diag += c.diagonal().real().mean();
    }
    noise /= static_cast<double>(covs.size());
    mean_diag /= static_cast<double>(covs.size());
    noise = std::max(noise, 1e-6 * std::max(mean_diag, 1e-12));
    const double base = std::max(mean_diag, 1e-12);

    MlParams p;
    p.doas = doas.unaryExpr([](double t) { return wrap_two_pi(t); });
    p.log_noise = std::log(noise);
    if (with_rho) p.rho = 0.0;
    double best = std::numeric_limits<double>::infinity();
    double best_log_power = std::log(base);
    for (int db = -40; db <= 10; ++db) {
        const double lp = std::log(base) + db * std::log(10.0) / 10.0;
        p.log_powers = RVector::Constant(doas.size(), lp);
        const double value = nll(covs, p, model);
        if (std::isfinite(value) && value < best) {
            best = value;
            best_log_power = lp;
        }
    }
    p.log_powers = RVector::Constant(doas.size(), best_log_power);
    return p;
}

namespace {

MlParams take_step(const MlParams& x, const MlGradient& g, double t, bool with_rho) {
    MlParams y = x;
    y.doas = (x.doas - t * g.doas).unaryExpr([](double v) { return wrap_two_pi(v); });
    y.log_powers = x.log_powers - t * g.log_powers;
    y.log_noise = x.log_noise - t * g.log_noise;
    if (with_rho && y.rho.has_value()) y.rho = std::clamp(*x.rho - t * g.rho, 0.0, kRhoCeiling);
    return y;
}

}  // namespace

RefineResult refine_from(const MlParams& initial, const std::vector<CMatrix>& covs, const LikelihoodModel& model,
                         const RefineOptions& options) {
    RefineResult r;
    r.params = initial;
    r.params.doas = initial.doas.unaryExpr([](double v) { return wrap_two_pi(v); });
    if (!options.optimize_rho) r.params.rho.reset();
    else if (!r.params.rho.has_value()) r.params.rho = 0.0;
    else r.params.rho = std::clamp(*r.params.rho, 0.0, kRhoCeiling);

    double f = nll(covs, r.params, model);
    if (!std::isfinite(f)) throw NumericalError("non-finite likelihood at refinement start");
    r.nll_trace.push_back(f);

    double step = -1.0;
    for (; r.iterations < options.max_iterations; ++r.iterations) {
        MlGradient g = nll_gradient(covs, r.params, model);
        if (!options.optimize_rho) g.rho = 0.0;
        const double gnorm = g.norm();
        if (!std::isfinite(gnorm)) throw NumericalError("non-finite likelihood gradient");
        if (gnorm < options.gradient_tolerance) {
            r.converged = true;
            break;
        }
        if (step <= 0.0) step = 0.1 / gnorm;
        double t = step;
        bool accepted = false;
        for (int bt = 0; bt < options.max_backtracks; ++bt, t *= 0.5) {
            const MlParams candidate = take_step(r.params, g, t, options.optimize_rho);
            double fc = std::numeric_limits<double>::infinity();
            try {
                fc = nll(covs, candidate, model);
            } catch (const NumericalError&) {
                continue;
            }
            if (std::isfinite(fc) && fc <= f - options.armijo * t * gnorm * gnorm) {
                r.params = candidate;
                f = fc;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            r.converged = true;  // no descent possible at machine precision
            break;
        }
        r.nll_trace.push_back(f);
        ++r.accepted_steps;
        step = 2.0 * t;
    }
    return r;
}

RefineResult refine(const RVector& initial_doas, const std::vector<CMatrix>& covs, const LikelihoodModel& model,
                    const RefineOptions& options) {
    return refine_from(initialize_nuisance(initial_doas, covs, model, options.optimize_rho), covs, model, options);
}

RefineResult genie_ml(const RVector& true_doas, const RVector& true_powers, double true_noise,
                      const std::vector<CMatrix>& covs, const LikelihoodModel& model, const RefineOptions& options,
                      std::optional<double> true_rho) {
    MlParams p;
    p.doas = true_doas;
    p.log_powers = true_powers.array().log();
    p.log_noise = std::log(true_noise);
    if (options.optimize_rho) p.rho = true_rho.value_or(0.0);
    return refine_from(p, covs, model, options);
}

}  // namespace doa
