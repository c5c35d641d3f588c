#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <utility>

#include "dpcov/cg.hpp"
#include "dpcov/covariance.hpp"
#include "dpcov/denoiser.hpp"
#include "dpcov/operators.hpp"
#include "dpcov/signal.hpp"

namespace dpcov {

struct SolverStats {
    enum class Method { None, ClosedForm, Cg };
    Method method = Method::None;
    int cg_iterations = 0;
    double residual = 0.0; // final relative residual of the CG solve
};

struct GuidanceResult {
    Signal x0_hat; // conditional posterior mean approximation
    Signal v;      // kernel vector A^T (sigma^2 I + A Sigma A^T)^{-1} (y - A D)
    SolverStats stats;
};

struct GuidanceConfig {
    enum class Mode { TypeI, TypeII, Ddnm };
    Mode mode = Mode::TypeII;
    std::shared_ptr<const CovarianceModel> covariance;
    // Used above switch_sigma and whenever the primary covariance reports an
    // unstable conversion.
    std::shared_ptr<const CovarianceModel> fallback;
    double switch_sigma = std::numeric_limits<double>::infinity();
    std::optional<double> dps_zeta; // heuristic step size (Type I only)
    bool pigdm_adaptive_weight = false;
    CgOptions cg;
};

// Spatial plug-and-play variances are trustworthy only at low noise levels;
// transform-domain variances hold up longer.
inline double default_switch_sigma(const CovarianceModel& model) {
    if (dynamic_cast<const TransformDiagCovariance*>(&model)) return 1.0;
    if (dynamic_cast<const SpatialDiagCovariance*>(&model) ||
        dynamic_cast<const ConvertReverseCovariance*>(&model) ||
        dynamic_cast<const AnalyticCovariance*>(&model) ||
        dynamic_cast<const TmpdCovariance*>(&model))
        return 0.2;
    return std::numeric_limits<double>::infinity();
}

inline const CovarianceModel& select_covariance(const GuidanceConfig& cfg, double sigma_t) {
    if (!cfg.covariance) throw ValidationError("guidance: no covariance model configured");
    if (sigma_t < cfg.switch_sigma || !cfg.fallback) return *cfg.covariance;
    return *cfg.fallback;
}

namespace detail {

inline CovEval eval_covariance(const GuidanceConfig& cfg, const Denoiser& den,
                               const Signal& x_t, double s, double sigma_t) {
    CovEval e = select_covariance(cfg, sigma_t).eval(den, x_t, s, sigma_t);
    if (e.unstable && cfg.fallback) e = cfg.fallback->eval(den, x_t, s, sigma_t);
    return e;
}

} // namespace detail

// v = A^T (sigma^2 I + A Sigma A^T)^{-1} (y - A D). Isotropic covariances
// use the operator's closed form when it has one; anything else solves the
// measurement-space system by conjugate gradients and applies A^T.
inline std::pair<Signal, SolverStats> compute_v(const MeasurementModel& meas, const Signal& D,
                                                const CovEval& cov, const CgOptions& cg = {}) {
    const LinearOperator& A = *meas.op;
    Signal resid = meas.y - A.apply(D);
    const double sigma2 = meas.sigma * meas.sigma;

    if (cov.kind == CovEval::Kind::Iso) {
        if (sigma2 == 0.0 && cov.r2 == 0.0)
            throw SingularityError("compute_v: sigma = 0 with zero posterior covariance");
        if (auto v = A.closed_form_v(resid, sigma2, cov.r2)) {
            SolverStats st;
            st.method = SolverStats::Method::ClosedForm;
            return {std::move(*v), st};
        }
    }

    auto matvec = [&](const Signal& u) {
        Signal out = A.apply(apply_covariance(cov, A.adjoint(u)));
        if (sigma2 != 0.0) axpy(sigma2, u, out);
        return out;
    };
    CgResult r = conjugate_gradient(matvec, resid, cg);
    if (!r.converged)
        throw SolverError("compute_v: conjugate gradients did not reach tolerance",
                          r.relative_residual);
    SolverStats st;
    st.method = SolverStats::Method::Cg;
    st.cg_iterations = r.iterations;
    st.residual = r.relative_residual;
    return {A.adjoint(r.x), st};
}

// Type I guidance: x0_hat = D + s sigma_t^2 w * J_D^T v, the posterior mean
// drifted by the scaled likelihood score. With dps_zeta set, the likelihood
// score is replaced by the heuristic -zeta_t grad ||y - A D||^2 with
// zeta_t = zeta / ||y - A D||.
inline GuidanceResult type1_conditional_mean(const Signal& x_t, const Denoiser& den,
                                             const MeasurementModel& meas,
                                             const GuidanceConfig& cfg, double s,
                                             double sigma_t) {
    GuidanceResult out;
    Signal D = den.mean(x_t, s, sigma_t);

    if (cfg.dps_zeta) {
        Signal resid = meas.y - meas.op->apply(D);
        const double n = norm2(resid);
        if (n == 0.0) {
            out.x0_hat = std::move(D);
            out.v = Signal(x_t.shape);
            return out;
        }
        // -zeta_t grad ||y - A D||^2 = (2 zeta / ||resid||) J_D^T A^T resid
        Signal cot = (2.0 * *cfg.dps_zeta / n) * meas.op->adjoint(resid);
        Signal g = denoiser_vjp_or_fd(den, x_t, s, sigma_t, cot);
        out.x0_hat = std::move(D);
        axpy(s * sigma_t * sigma_t, g, out.x0_hat);
        out.v = std::move(cot);
        return out;
    }

    CovEval cov = detail::eval_covariance(cfg, den, x_t, s, sigma_t);
    auto [v, stats] = compute_v(meas, D, cov, cfg.cg);
    Signal g = denoiser_vjp_or_fd(den, x_t, s, sigma_t, v);
    const double w = cfg.pigdm_adaptive_weight ? r2_pigdm(sigma_t) : 1.0;
    out.x0_hat = std::move(D);
    axpy(s * sigma_t * sigma_t * w, g, out.x0_hat);
    out.v = std::move(v);
    out.stats = stats;
    return out;
}

// Type II guidance: x0_hat = D + Sigma v, the auto-weighted proximal
// solution in its Woodbury form.
inline GuidanceResult type2_conditional_mean(const Signal& x_t, const Denoiser& den,
                                             const MeasurementModel& meas,
                                             const GuidanceConfig& cfg, double s,
                                             double sigma_t) {
    GuidanceResult out;
    Signal D = den.mean(x_t, s, sigma_t);
    CovEval cov = detail::eval_covariance(cfg, den, x_t, s, sigma_t);
    auto [v, stats] = compute_v(meas, D, cov, cfg.cg);
    out.x0_hat = D + apply_covariance(cov, v);
    out.v = std::move(v);
    out.stats = stats;
    return out;
}

// Range/null-space solution A^dagger y + (I - A^dagger A) D. The null-space
// part is grouped first so the range cancellation is exact for selection
// operators (A x = y holds bit-exactly in the noiseless mask case).
inline Signal ddnm_solution(const Signal& D, const MeasurementModel& meas) {
    const LinearOperator& A = *meas.op;
    Signal null_part = D - A.pseudo_inverse(A.apply(D));
    return A.pseudo_inverse(meas.y) + null_part;
}

inline GuidanceResult guided_mean(const Signal& x_t, const Denoiser& den,
                                  const MeasurementModel& meas, const GuidanceConfig& cfg,
                                  double s, double sigma_t) {
    switch (cfg.mode) {
    case GuidanceConfig::Mode::TypeI:
        return type1_conditional_mean(x_t, den, meas, cfg, s, sigma_t);
    case GuidanceConfig::Mode::TypeII:
        return type2_conditional_mean(x_t, den, meas, cfg, s, sigma_t);
    case GuidanceConfig::Mode::Ddnm: {
        GuidanceResult out;
        out.x0_hat = ddnm_solution(den.mean(x_t, s, sigma_t), meas);
        out.v = Signal(x_t.shape);
        return out;
    }
    }
    throw ValidationError("guidance: unknown mode");
}

} // namespace dpcov
