#pragma once

#include <functional>

#include "dpcov/signal.hpp"

namespace dpcov {

struct CgOptions {
    double tol = 1e-4; // relative residual
    int max_iter = 1000;
};

struct CgResult {
    Signal x;
    int iterations = 0;
    double relative_residual = 0.0;
    bool converged = true;
};

// Plain conjugate gradients for a symmetric positive-definite operator.
// Zero initial guess, no preconditioner.
inline CgResult conjugate_gradient(const std::function<Signal(const Signal&)>& matvec,
                                   const Signal& b, const CgOptions& opts = {}) {
    CgResult res;
    res.x = Signal(b.shape);
    const double b_norm = norm2(b);
    if (b_norm == 0.0) return res;

    Signal r = b;
    Signal p = r;
    double rho = dot(r, r);
    for (int it = 0; it < opts.max_iter; ++it) {
        Signal q = matvec(p);
        const double alpha = rho / dot(p, q);
        axpy(alpha, p, res.x);
        axpy(-alpha, q, r);
        const double rho_new = dot(r, r);
        res.iterations = it + 1;
        res.relative_residual = std::sqrt(rho_new) / b_norm;
        if (res.relative_residual <= opts.tol) return res;
        const double beta = rho_new / rho;
        rho = rho_new;
        p = r + beta * p;
    }
    res.converged = false;
    return res;
}

} // namespace dpcov
