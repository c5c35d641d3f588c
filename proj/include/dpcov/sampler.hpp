#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "dpcov/guidance.hpp"
#include "dpcov/rng.hpp"
#include "dpcov/schedule.hpp"
#include "dpcov/signal.hpp"

namespace dpcov {

struct ChurnParams {
    double s_churn = 0.0;
    double s_tmin = 0.0;
    double s_tmax = std::numeric_limits<double>::infinity();
    double s_noise = 1.0;
};

struct SamplerConfig {
    enum class Kind { HeunDet, HeunStoch, DdpmAncestral };
    Kind kind = Kind::HeunDet;
    int steps = 50;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    ChurnParams churn; // HeunStoch only
    uint64_t seed = 0;
    std::shared_ptr<const DdpmSchedule> ddpm; // DdpmAncestral only

    void validate() const {
        if (steps < 1) throw ValidationError("sampler: steps must be >= 1");
        if (!(sigma_min < sigma_max))
            throw ValidationError("sampler: sigma_min < sigma_max required");
        if (kind == Kind::DdpmAncestral && !ddpm)
            throw ValidationError("sampler: ancestral kind needs a DDPM schedule");
    }
};

// rho-spaced noise-level grid from sigma_max down to sigma_min, with a
// terminal zero entry (N+1 values).
inline std::vector<double> sigma_grid(const SamplerConfig& cfg) {
    cfg.validate();
    const int N = cfg.steps;
    std::vector<double> grid(static_cast<size_t>(N) + 1);
    const double inv_rho = 1.0 / cfg.rho;
    const double a = std::pow(cfg.sigma_max, inv_rho);
    const double b = std::pow(cfg.sigma_min, inv_rho);
    for (int i = 0; i < N; ++i) {
        double frac = (N == 1) ? 0.0 : static_cast<double>(i) / (N - 1);
        grid[static_cast<size_t>(i)] = std::pow(a + frac * (b - a), cfg.rho);
    }
    grid[static_cast<size_t>(N)] = 0.0;
    return grid;
}

// Provider of the (possibly guided) posterior-mean estimate at noise level t.
using MeanFn = std::function<Signal(const Signal& x, double t)>;

// Heun's 2nd-order deterministic step for dx = (x - x0_hat(x, t))/t dt.
// The corrector is skipped for the final step onto t = 0.
inline Signal heun_step(const Signal& x, double t_cur, double t_next, const MeanFn& mean_fn) {
    if (t_cur <= 0.0) throw DomainError("heun step: t_cur must be positive");
    if (t_next < 0.0 || t_next >= t_cur)
        throw DomainError("heun step: need t_cur > t_next >= 0");
    const double h = t_next - t_cur;
    Signal d = (1.0 / t_cur) * (x - mean_fn(x, t_cur));
    Signal x_next = x;
    axpy(h, d, x_next);
    if (t_next > 0.0) {
        Signal d2 = (1.0 / t_next) * (x_next - mean_fn(x_next, t_next));
        x_next = x;
        axpy(0.5 * h, d, x_next);
        axpy(0.5 * h, d2, x_next);
    }
    return x_next;
}

// Stochastic variant: inside [s_tmin, s_tmax] the noise level is inflated by
// gamma = min(s_churn/N, sqrt(2)-1), fresh noise is injected, and the Heun
// step restarts from the inflated level.
inline Signal heun_stochastic_step(const Signal& x, double t_cur, double t_next,
                                   const ChurnParams& churn, int n_steps, GaussianStream& rng,
                                   const MeanFn& mean_fn) {
    double gamma = 0.0;
    if (churn.s_churn > 0.0 && t_cur >= churn.s_tmin && t_cur <= churn.s_tmax)
        gamma = std::min(churn.s_churn / n_steps, std::sqrt(2.0) - 1.0);
    if (gamma == 0.0) return heun_step(x, t_cur, t_next, mean_fn);
    const double t_hat = t_cur * (1.0 + gamma);
    const double extra = std::sqrt(t_hat * t_hat - t_cur * t_cur) * churn.s_noise;
    Signal x_hat = x;
    for (double& v : x_hat.data) v += extra * rng.normal();
    return heun_step(x_hat, t_hat, t_next, mean_fn);
}

// One ancestral step x_t -> x_{t-1} with reverse mean mu_tilde(x_t, x0_hat)
// and reverse variance v^2 = beta_tilde_t + c_t^2 r2 (element-wise; a
// single-entry r2 is broadcast). The final step (t = 1) returns the mean
// without noise.
inline Signal ddpm_ancestral_step(const Signal& x_t, int t, const DdpmSchedule& sched,
                                  const Signal& posterior_mean, const std::vector<double>& r2,
                                  GaussianStream& rng) {
    if (r2.size() != x_t.data.size() && r2.size() != 1)
        throw DimensionError("ancestral step: variance array length mismatch");
    Signal m = sched.posterior_mean(x_t, posterior_mean, t);
    if (t == 1) return m;
    const double bt = sched.beta_tilde(t);
    const double c2 = sched.mean_coeff(t) * sched.mean_coeff(t);
    for (size_t i = 0; i < m.data.size(); ++i) {
        const double ri = r2.size() == 1 ? r2[0] : r2[i];
        m.data[i] += std::sqrt(bt + c2 * ri) * rng.normal();
    }
    return m;
}

namespace detail {

// Reverse noise for an evaluated covariance. For a transform-diagonal
// covariance the reverse covariance factors exactly through the orthonormal
// basis: beta_tilde I + c^2 Psi R Psi^T = Psi (beta_tilde + c^2 R) Psi^T.
inline Signal covariance_reverse_noise(const CovEval& cov, Shape shape, double bt, double c2,
                                       GaussianStream& rng) {
    Signal eps(shape);
    rng.fill_normal(eps);
    switch (cov.kind) {
    case CovEval::Kind::Iso:
        for (double& v : eps.data) v *= std::sqrt(bt + c2 * cov.r2);
        return eps;
    case CovEval::Kind::Diag:
        for (size_t i = 0; i < eps.data.size(); ++i)
            eps.data[i] *= std::sqrt(bt + c2 * cov.r2v[i]);
        return eps;
    case CovEval::Kind::TransformDiag:
        for (size_t i = 0; i < eps.data.size(); ++i)
            eps.data[i] *= std::sqrt(bt + c2 * cov.r2v[i]);
        return cov.basis->inverse(eps);
    }
    throw ValidationError("ancestral: unknown covariance kind");
}

} // namespace detail

struct StepStats {
    double t = 0.0;
    double sigma = 0.0;
    double meas_residual = 0.0; // ||y - A x0_hat|| at the predictor evaluation
    SolverStats solver;
};

struct Trajectory {
    std::vector<std::pair<double, Signal>> states; // (t, x_t) after each step
    Signal final;
    std::vector<StepStats> stats;
};

// Unconditional sampling: the configured sampler with the plain denoiser as
// mean provider. Ancestral sampling uses the DDPM default reverse variance
// (r2 = 0, i.e. v^2 = beta_tilde).
inline Trajectory sample_unconditional(const Denoiser& den, const SamplerConfig& cfg,
                                       Shape shape) {
    cfg.validate();
    Trajectory traj;
    if (cfg.kind == SamplerConfig::Kind::DdpmAncestral) {
        const DdpmSchedule& sched = *cfg.ddpm;
        GaussianStream init = named_stream(cfg.seed, "init");
        GaussianStream anc = named_stream(cfg.seed, "ancestral");
        const int T = sched.steps();
        const double std_T = std::sqrt(sched.beta_bar(T));
        Signal x = init.normal_signal(shape);
        for (double& v : x.data) v *= std_T;
        for (int t = T; t >= 1; --t) {
            Signal mean = den.mean(x, sched.scale(t), sched.sigma(t));
            x = ddpm_ancestral_step(x, t, sched, mean, {0.0}, anc);
            traj.states.emplace_back(t - 1, x);
        }
        traj.final = x;
        return traj;
    }

    GaussianStream init = named_stream(cfg.seed, "init");
    GaussianStream churn_rng = named_stream(cfg.seed, "churn");
    auto grid = sigma_grid(cfg);
    Signal x = init.normal_signal(shape);
    for (double& v : x.data) v *= grid[0];
    MeanFn mean_fn = [&](const Signal& xi, double t) { return den.mean(xi, 1.0, t); };
    for (size_t i = 0; i + 1 < grid.size(); ++i) {
        if (cfg.kind == SamplerConfig::Kind::HeunStoch)
            x = heun_stochastic_step(x, grid[i], grid[i + 1], cfg.churn, cfg.steps, churn_rng,
                                     mean_fn);
        else
            x = heun_step(x, grid[i], grid[i + 1], mean_fn);
        traj.states.emplace_back(grid[i + 1], x);
    }
    traj.final = x;
    return traj;
}

// Conditional sampling: substitutes the guided conditional posterior mean
// into the unconditional sampler. Guidance runs at both Heun sub-steps.
// Deterministic given (seed, config).
inline Trajectory solve_inverse_problem(const MeasurementModel& meas, const Denoiser& den,
                                        const GuidanceConfig& g_cfg,
                                        const SamplerConfig& s_cfg) {
    s_cfg.validate();
    Trajectory traj;

    if (s_cfg.kind == SamplerConfig::Kind::DdpmAncestral) {
        const DdpmSchedule& sched = *s_cfg.ddpm;
        GaussianStream init = named_stream(s_cfg.seed, "init");
        GaussianStream anc = named_stream(s_cfg.seed, "ancestral");
        const int T = sched.steps();
        Signal x = init.normal_signal(meas.op->input_shape());
        const double std_T = std::sqrt(sched.beta_bar(T));
        for (double& v : x.data) v *= std_T;
        for (int t = T; t >= 1; --t) {
            const double s = sched.scale(t);
            const double sigma = sched.sigma(t);
            GuidanceResult g = guided_mean(x, den, meas, g_cfg, s, sigma);
            StepStats st;
            st.t = t;
            st.sigma = sigma;
            st.meas_residual = norm2(meas.y - meas.op->apply(g.x0_hat));
            st.solver = g.stats;
            traj.stats.push_back(st);
            Signal m = sched.posterior_mean(x, g.x0_hat, t);
            if (t > 1) {
                CovEval cov = detail::eval_covariance(g_cfg, den, x, s, sigma);
                const double bt = sched.beta_tilde(t);
                const double c2 = sched.mean_coeff(t) * sched.mean_coeff(t);
                Signal noise = detail::covariance_reverse_noise(cov, x.shape, bt, c2, anc);
                m = m + noise;
            }
            x = std::move(m);
            traj.states.emplace_back(t - 1, x);
        }
        traj.final = x;
        return traj;
    }

    GaussianStream init = named_stream(s_cfg.seed, "init");
    GaussianStream churn_rng = named_stream(s_cfg.seed, "churn");
    auto grid = sigma_grid(s_cfg);
    Signal x = init.normal_signal(meas.op->input_shape());
    for (double& v : x.data) v *= grid[0];

    bool record_next = false; // stats are taken at the first (predictor) eval of each step
    MeanFn mean_fn = [&](const Signal& xi, double t) {
        GuidanceResult g = guided_mean(xi, den, meas, g_cfg, 1.0, t);
        if (record_next) {
            record_next = false;
            StepStats st;
            st.t = t;
            st.sigma = t;
            st.meas_residual = norm2(meas.y - meas.op->apply(g.x0_hat));
            st.solver = g.stats;
            traj.stats.push_back(st);
        }
        return g.x0_hat;
    };

    for (size_t i = 0; i + 1 < grid.size(); ++i) {
        record_next = true;
        if (s_cfg.kind == SamplerConfig::Kind::HeunStoch) {
            x = heun_stochastic_step(x, grid[i], grid[i + 1], s_cfg.churn, s_cfg.steps,
                                     churn_rng, mean_fn);
        } else {
            x = heun_step(x, grid[i], grid[i + 1], mean_fn);
        }
        traj.states.emplace_back(grid[i + 1], x);
    }
    traj.final = x;
    return traj;
}

} // namespace dpcov
