#pragma once

#include <memory>
#include <vector>

#include "dpcov/signal.hpp"

namespace dpcov {

// Orthonormal basis Psi used to represent the posterior covariance as
// Psi diag(r^2) Psi^T. forward() computes analysis coefficients Psi^T x,
// inverse() synthesizes Psi theta; both preserve the l2 norm.
class TransformBasis {
public:
    virtual ~TransformBasis() = default;
    virtual Signal forward(const Signal& x) const = 0;
    virtual Signal inverse(const Signal& theta) const = 0;
    virtual std::string name() const = 0;
};

class IdentityBasis final : public TransformBasis {
public:
    Signal forward(const Signal& x) const override { return x; }
    Signal inverse(const Signal& theta) const override { return theta; }
    std::string name() const override { return "identity"; }
};

// Multi-level orthonormal Haar analysis, applied per channel. 2-D signals
// transform rows then columns of the shrinking approximation block; 1-D
// signals (h == 1) use the plain pyramid. Spatial dimensions must be
// divisible by 2^levels.
class HaarBasis final : public TransformBasis {
public:
    explicit HaarBasis(int levels) : levels_(levels) {
        if (levels < 1) throw ValidationError("haar basis: levels must be >= 1");
    }

    int levels() const { return levels_; }
    std::string name() const override { return "haar" + std::to_string(levels_); }

    Signal forward(const Signal& x) const override {
        check_dyadic(x.shape);
        Signal out = x;
        for (int c = 0; c < x.shape.c; ++c) {
            int ch = x.shape.h, cw = x.shape.w;
            for (int level = 0; level < levels_; ++level) {
                if (x.shape.h > 1) {
                    for (int y = 0; y < ch; ++y) analysis_row(out, c, y, cw);
                    for (int q = 0; q < cw; ++q) analysis_col(out, c, q, ch);
                    ch /= 2;
                    cw /= 2;
                } else {
                    for (int y = 0; y < 1; ++y) analysis_row(out, c, y, cw);
                    cw /= 2;
                }
            }
        }
        return out;
    }

    Signal inverse(const Signal& theta) const override {
        check_dyadic(theta.shape);
        Signal out = theta;
        std::vector<int> hs, ws;
        int ch = theta.shape.h, cw = theta.shape.w;
        for (int level = 0; level < levels_; ++level) {
            hs.push_back(ch);
            ws.push_back(cw);
            if (theta.shape.h > 1) ch /= 2;
            cw /= 2;
        }
        for (int c = 0; c < theta.shape.c; ++c) {
            for (int level = levels_ - 1; level >= 0; --level) {
                int bh = hs[static_cast<size_t>(level)], bw = ws[static_cast<size_t>(level)];
                if (theta.shape.h > 1) {
                    for (int q = 0; q < bw; ++q) synthesis_col(out, c, q, bh);
                    for (int y = 0; y < bh; ++y) synthesis_row(out, c, y, bw);
                } else {
                    synthesis_row(out, c, 0, bw);
                }
            }
        }
        return out;
    }

private:
    static constexpr double kInvSqrt2 = 0.70710678118654752440;

    void check_dyadic(const Shape& s) const {
        const int div = 1 << levels_;
        bool ok = (s.w % div == 0) && (s.h == 1 || s.h % div == 0);
        if (!ok) throw ValidationError("haar basis: dimensions not divisible by 2^levels");
    }

    void analysis_row(Signal& s, int c, int y, int n) const {
        std::vector<double> scratch(static_cast<size_t>(n));
        for (int i = 0; i < n / 2; ++i) {
            double a = s.at(c, y, 2 * i), b = s.at(c, y, 2 * i + 1);
            scratch[static_cast<size_t>(i)] = (a + b) * kInvSqrt2;
            scratch[static_cast<size_t>(n / 2 + i)] = (a - b) * kInvSqrt2;
        }
        for (int i = 0; i < n; ++i) s.at(c, y, i) = scratch[static_cast<size_t>(i)];
    }

    void analysis_col(Signal& s, int c, int q, int n) const {
        std::vector<double> scratch(static_cast<size_t>(n));
        for (int i = 0; i < n / 2; ++i) {
            double a = s.at(c, 2 * i, q), b = s.at(c, 2 * i + 1, q);
            scratch[static_cast<size_t>(i)] = (a + b) * kInvSqrt2;
            scratch[static_cast<size_t>(n / 2 + i)] = (a - b) * kInvSqrt2;
        }
        for (int i = 0; i < n; ++i) s.at(c, i, q) = scratch[static_cast<size_t>(i)];
    }

    void synthesis_row(Signal& s, int c, int y, int n) const {
        std::vector<double> scratch(static_cast<size_t>(n));
        for (int i = 0; i < n / 2; ++i) {
            double a = s.at(c, y, i), d = s.at(c, y, n / 2 + i);
            scratch[static_cast<size_t>(2 * i)] = (a + d) * kInvSqrt2;
            scratch[static_cast<size_t>(2 * i + 1)] = (a - d) * kInvSqrt2;
        }
        for (int i = 0; i < n; ++i) s.at(c, y, i) = scratch[static_cast<size_t>(i)];
    }

    void synthesis_col(Signal& s, int c, int q, int n) const {
        std::vector<double> scratch(static_cast<size_t>(n));
        for (int i = 0; i < n / 2; ++i) {
            double a = s.at(c, i, q), d = s.at(c, n / 2 + i, q);
            scratch[static_cast<size_t>(2 * i)] = (a + d) * kInvSqrt2;
            scratch[static_cast<size_t>(2 * i + 1)] = (a - d) * kInvSqrt2;
        }
        for (int i = 0; i < n; ++i) s.at(c, i, q) = scratch[static_cast<size_t>(i)];
    }

    int levels_;
};

} // namespace dpcov
