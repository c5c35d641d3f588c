#pragma once

#include <vector>

#include "dpcov/errors.hpp"
#include "dpcov/signal.hpp"

namespace dpcov {

// Supplier of D_t(x_t), the (approximate) posterior mean E[x0|x_t] under the
// perturbation kernel N(s x0, s^2 sigma^2 I). Optional capabilities expose
// per-pixel posterior variances, DDPM reverse variances, and
// vector-Jacobian products of the mean.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual Signal mean(const Signal& x_t, double s, double sigma_t) const = 0;

    virtual bool has_vjp() const { return false; }
    // Returns J^T cotangent where J = d mean / d x_t.
    virtual Signal vjp(const Signal& /*x_t*/, double /*s*/, double /*sigma_t*/,
                       const Signal& /*cotangent*/) const {
        throw CapabilityError("denoiser: vector-Jacobian product not supported");
    }

    virtual bool has_posterior_variance() const { return false; }
    // Per-element Var[x0_i | x_t].
    virtual std::vector<double> posterior_variance(const Signal& /*x_t*/, double /*s*/,
                                                   double /*sigma_t*/) const {
        throw CapabilityError("denoiser: posterior variance not supported");
    }

    virtual bool has_reverse_variance() const { return false; }
    // Per-element reverse-transition variance v_t^2(x_t) at discrete step t
    // of the denoiser's attached DDPM schedule; x_t is in VP scaling.
    virtual std::vector<double> reverse_variance(const Signal& /*x_t*/, int /*t*/) const {
        throw CapabilityError("denoiser: reverse variance not supported");
    }
};

// Central finite-difference fallback for the vector-Jacobian product of a
// black-box denoiser: gradient of <mean(x), cot> with cot held fixed.
inline Signal denoiser_vjp_fd(const Denoiser& den, const Signal& x_t, double s, double sigma_t,
                              const Signal& cot) {
    const double h = 1e-4 * (1.0 + norm_inf(x_t));
    Signal g(x_t.shape);
    Signal xp = x_t;
    for (int i = 0; i < x_t.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = dot(den.mean(xp, s, sigma_t), cot);
        xp[i] = orig - h;
        const double fm = dot(den.mean(xp, s, sigma_t), cot);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline Signal denoiser_vjp_or_fd(const Denoiser& den, const Signal& x_t, double s,
                                 double sigma_t, const Signal& cot) {
    if (den.has_vjp()) return den.vjp(x_t, s, sigma_t, cot);
    return denoiser_vjp_fd(den, x_t, s, sigma_t, cot);
}

} // namespace dpcov
