#pragma once

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "dpcov/signal.hpp"

namespace dpcov {

// DDPM discrete schedule with all derived quantities. Steps are 1-based
// (t in [1, T]); alpha_bar(0) = 1 and beta_bar(0) = 0 by convention, which
// forces beta_tilde(1) = 0. Arrays are validated eagerly at construction,
// so downstream code may assume the invariants.
class DdpmSchedule {
public:
    explicit DdpmSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
        const int T = static_cast<int>(beta_.size());
        if (T == 0) throw ValidationError("ddpm schedule: empty beta array");
        alpha_.resize(T);
        alpha_bar_.resize(T);
        beta_bar_.resize(T);
        beta_tilde_.resize(T);
        double prod = 1.0;
        for (int i = 0; i < T; ++i) {
            if (!(beta_[i] > 0.0 && beta_[i] < 1.0))
                throw ValidationError("ddpm schedule: beta must lie in (0,1)");
            alpha_[i] = 1.0 - beta_[i];
            prod *= alpha_[i];
            alpha_bar_[i] = prod;
            beta_bar_[i] = 1.0 - prod;
            double prev_beta_bar = (i == 0) ? 0.0 : beta_bar_[i - 1];
            beta_tilde_[i] = prev_beta_bar / beta_bar_[i] * beta_[i];
        }
        for (int i = 1; i < T; ++i) {
            if (!(alpha_bar_[i] < alpha_bar_[i - 1]))
                throw ValidationError("ddpm schedule: alpha_bar must be strictly decreasing");
            if (!(beta_bar_[i] > beta_bar_[i - 1]))
                throw ValidationError("ddpm schedule: beta_bar must be strictly increasing");
        }
        for (int i = 0; i < T; ++i) {
            if (!(alpha_bar_[i] > 0.0 && alpha_bar_[i] < 1.0))
                throw ValidationError("ddpm schedule: alpha_bar out of (0,1)");
            if (beta_tilde_[i] > beta_[i] + 1e-15)
                throw ValidationError("ddpm schedule: beta_tilde exceeds beta");
        }
    }

    int steps() const { return static_cast<int>(beta_.size()); }

    double beta(int t) const { return beta_[check(t)]; }
    double alpha(int t) const { return alpha_[check(t)]; }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_[check(t)]; }
    double beta_bar(int t) const { return t == 0 ? 0.0 : beta_bar_[check(t)]; }
    double beta_tilde(int t) const { return beta_tilde_[check(t)]; }
    // Forward-kernel variance; the DDPM process has lambda_t^2 = beta_tilde_t.
    double lambda2(int t) const { return beta_tilde_[check(t)]; }

    double scale(int t) const { return std::sqrt(alpha_bar(t)); }
    double sigma(int t) const { return std::sqrt(beta_bar(t) / alpha_bar(t)); }

    // Coefficient of the posterior-variance term in the optimal reverse
    // variance: v*^2 = beta_tilde_t + mean_coeff(t)^2 * r*^2.
    double mean_coeff(int t) const {
        check(t);
        return std::sqrt(alpha_bar(t - 1)) * beta(t) / beta_bar(t);
    }

    // Forward-posterior mean mu_tilde_t(x_t, x0) of q(x_{t-1} | x_t, x0).
    Signal posterior_mean(const Signal& x_t, const Signal& x0, int t) const {
        check(t);
        require_same_shape(x_t, x0, "ddpm posterior mean");
        const double a = std::sqrt(alpha_bar(t - 1));
        const double b = std::sqrt(beta_bar(t - 1) - lambda2(t));
        const double inv_sq = 1.0 / std::sqrt(beta_bar(t));
        const double sq_ab = std::sqrt(alpha_bar(t));
        Signal m(x_t.shape);
        for (int i = 0; i < m.size(); ++i)
            m[i] = a * x0[i] + b * (x_t[i] - sq_ab * x0[i]) * inv_sq;
        return m;
    }

private:
    int check(int t) const {
        if (t < 1 || t > steps()) throw RangeError("ddpm schedule: step index out of range");
        return t - 1;
    }

    std::vector<double> beta_, alpha_, alpha_bar_, beta_bar_, beta_tilde_;
};

inline DdpmSchedule ddpm_from_betas(std::vector<double> betas) {
    return DdpmSchedule(std::move(betas));
}

inline DdpmSchedule ddpm_linear(int T, double beta_min, double beta_max) {
    if (T < 1) throw ValidationError("ddpm schedule: T must be positive");
    std::vector<double> betas(static_cast<size_t>(T));
    for (int i = 0; i < T; ++i)
        betas[static_cast<size_t>(i)] =
            T == 1 ? beta_min : beta_min + (beta_max - beta_min) * i / (T - 1);
    return DdpmSchedule(std::move(betas));
}

// Perturbation-kernel parameterization p_t(x_t|x0) = N(s_t x0, s_t^2 sigma_t^2 I).
// Two variants: the identity mapping s_t = 1, sigma_t = t on [0, t_max], and
// the discrete variance-preserving mapping s_t = sqrt(alpha_bar_t),
// sigma_t = sqrt(beta_bar_t / alpha_bar_t).
class NoiseSchedule {
public:
    enum class Kind { Edm, VpDiscrete };

    static NoiseSchedule edm(double t_max = 80.0) {
        if (t_max <= 0.0) throw ValidationError("noise schedule: t_max must be positive");
        NoiseSchedule s;
        s.kind_ = Kind::Edm;
        s.t_max_ = t_max;
        return s;
    }

    static NoiseSchedule vp_discrete(std::shared_ptr<const DdpmSchedule> ddpm) {
        if (!ddpm) throw ValidationError("noise schedule: ddpm schedule is null");
        NoiseSchedule s;
        s.kind_ = Kind::VpDiscrete;
        s.ddpm_ = std::move(ddpm);
        return s;
    }

    Kind kind() const { return kind_; }
    const DdpmSchedule& ddpm() const { return *ddpm_; }

    double scale(double t) const {
        if (kind_ == Kind::Edm) return 1.0;
        return interp_on_grid(t, [&](int i) { return ddpm_->scale(i); });
    }

    double sigma(double t) const {
        if (kind_ == Kind::Edm) {
            if (t < 0.0) throw DomainError("noise schedule: negative time");
            return t;
        }
        return interp_on_grid(t, [&](int i) { return ddpm_->sigma(i); });
    }

    std::pair<double, double> sigma_range() const {
        if (kind_ == Kind::Edm) return {0.0, t_max_};
        return {ddpm_->sigma(1), ddpm_->sigma(ddpm_->steps())};
    }

    // Time at which this schedule reaches the requested noise level.
    // Discrete schedules use monotone binary search with linear
    // interpolation in sigma between grid points.
    double time_for_sigma(double sigma_target) const {
        if (kind_ == Kind::Edm) {
            if (sigma_target < 0.0 || sigma_target > t_max_)
                throw RangeError("noise schedule: sigma outside schedule range");
            return sigma_target;
        }
        const int T = ddpm_->steps();
        const double lo = ddpm_->sigma(1), hi = ddpm_->sigma(T);
        if (sigma_target < lo - 1e-12 || sigma_target > hi + 1e-12)
            throw RangeError("noise schedule: sigma outside schedule range");
        if (sigma_target <= lo) return 1.0;
        if (sigma_target >= hi) return static_cast<double>(T);
        int a = 1, b = T;
        while (b - a > 1) {
            int mid = (a + b) / 2;
            if (ddpm_->sigma(mid) <= sigma_target)
                a = mid;
            else
                b = mid;
        }
        double sa = ddpm_->sigma(a), sb = ddpm_->sigma(b);
        double frac = (sigma_target - sa) / (sb - sa);
        return a + frac;
    }

private:
    template <typename F>
    double interp_on_grid(double t, F&& value_at) const {
        const int T = ddpm_->steps();
        if (t < 1.0 || t > static_cast<double>(T))
            throw RangeError("noise schedule: discrete time out of range");
        int lo = static_cast<int>(std::floor(t));
        if (lo == T) return value_at(T);
        double frac = t - lo;
        return (1.0 - frac) * value_at(lo) + frac * value_at(lo + 1);
    }

    Kind kind_ = Kind::Edm;
    double t_max_ = 80.0;
    std::shared_ptr<const DdpmSchedule> ddpm_;
};

// EDM identity mapping (s_t, sigma_t) = (1, t).
inline std::pair<double, double> edm_sigma(double t) {
    if (t < 0.0) throw DomainError("edm_sigma: negative time");
    return {1.0, t};
}

struct KernelConversion {
    double t_prime;     // time in the source schedule with matching sigma
    double input_scale; // s_{t'} / s_tilde_t, multiplies the target-domain input
};

// Maps a target-schedule time onto the source schedule: finds t' with
// sigma_source(t') = sigma_target(t), so a solution trained under the
// source kernels can be evaluated at input_scale * x without retraining.
inline KernelConversion convert_between_kernels(double t, const NoiseSchedule& target,
                                                const NoiseSchedule& source) {
    const double sigma_t = target.sigma(t);
    const double t_prime = source.time_for_sigma(sigma_t);
    const double input_scale = source.scale(t_prime) / target.scale(t);
    return {t_prime, input_scale};
}

// Tweedie's formula: score = (s E[x0|x_t] - x_t) / (s^2 sigma^2). Feeding
// the conditional posterior mean instead yields the conditional score.
inline Signal tweedie_score(const Signal& x_t, const Signal& posterior_mean, double s,
                            double sigma) {
    require_same_shape(x_t, posterior_mean, "tweedie score");
    if (sigma == 0.0) throw SingularityError("tweedie score: sigma must be nonzero");
    const double inv = 1.0 / (s * s * sigma * sigma);
    Signal out(x_t.shape);
    for (int i = 0; i < out.size(); ++i) out[i] = (s * posterior_mean[i] - x_t[i]) * inv;
    return out;
}

} // namespace dpcov
