#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dpcov/denoiser.hpp"
#include "dpcov/oracle.hpp"
#include "dpcov/rng.hpp"
#include "dpcov/schedule.hpp"
#include "dpcov/signal.hpp"
#include "dpcov/transform.hpp"

namespace dpcov {

// Floor for variance entries. Reverse-variance conversion can produce
// negatives from estimation error; clamped values are additionally flagged
// through ConvertedVariance::unstable.
inline constexpr double kVarianceFloor = 1e-6;

// Isotropic posterior variance r_t^2 = sigma_t^2 / (1 + sigma_t^2), the
// heuristic choice assuming a standard-normal prior.
inline double r2_pigdm(double sigma_t) {
    if (sigma_t < 0.0) throw DomainError("pigdm variance: sigma must be >= 0");
    const double s2 = sigma_t * sigma_t;
    return s2 / (1.0 + s2);
}

// Isotropic posterior variance r_t^2 = sigma_t^2 / lambda.
inline double r2_diffpir(double sigma_t, double lambda) {
    if (lambda <= 0.0) throw DomainError("diffpir variance: lambda must be positive");
    return sigma_t * sigma_t / lambda;
}

struct ConvertedVariance {
    std::vector<double> r2;
    // True when v^2 - beta_tilde fell below the relative threshold for some
    // element; the conversion degenerates to a 0/0 limit there and callers
    // should fall back to a safer covariance.
    bool unstable = false;
};

// Posterior variances from DDPM reverse variances:
// r^2 = (v^2 - beta_tilde_t) / c_t^2 with c_t = sqrt(alpha_bar_{t-1}) beta_t / (1 - alpha_bar_t).
inline ConvertedVariance convert_reverse_variance(const std::vector<double>& v2, int t,
                                                  const DdpmSchedule& sched,
                                                  double floor = kVarianceFloor,
                                                  double rel_threshold = 1e-3) {
    const double bt = sched.beta_tilde(t);
    const double c = sched.mean_coeff(t);
    const double c2 = c * c;
    // usable region is where the upper and lower reverse-variance bounds
    // separate: beta_t vs beta_tilde_t
    const double gap = sched.beta(t) - bt;
    ConvertedVariance out;
    out.r2.resize(v2.size());
    for (size_t i = 0; i < v2.size(); ++i) {
        const double excess = v2[i] - bt;
        if (excess < rel_threshold * gap) out.unstable = true;
        out.r2[i] = std::max(excess / c2, floor);
    }
    return out;
}

// Time-indexed scalar variance table; lookups snap to the nearest grid time.
class VarianceTable {
public:
    VarianceTable() = default;
    VarianceTable(std::vector<double> times, std::vector<double> r2)
        : times_(std::move(times)), r2_(std::move(r2)) {
        if (times_.empty() || times_.size() != r2_.size())
            throw ValidationError("variance table: times/values mismatch");
        for (double v : r2_)
            if (v < 0.0) throw ValidationError("variance table: negative variance");
    }

    const std::vector<double>& times() const { return times_; }
    const std::vector<double>& values() const { return r2_; }

    double lookup(double t) const { return r2_[nearest(t)]; }

    size_t nearest(double t) const {
        size_t best = 0;
        double bd = std::abs(times_[0] - t);
        for (size_t i = 1; i < times_.size(); ++i) {
            double d = std::abs(times_[i] - t);
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        return best;
    }

private:
    std::vector<double> times_;
    std::vector<double> r2_;
};

// Per-time diagonal variance arrays (spatial or transform-domain).
class DiagTable {
public:
    DiagTable() = default;
    DiagTable(std::vector<double> times, std::vector<std::vector<double>> r2)
        : times_(std::move(times)), r2_(std::move(r2)) {
        if (times_.empty() || times_.size() != r2_.size())
            throw ValidationError("diag table: times/values mismatch");
    }

    const std::vector<double>& times() const { return times_; }
    const std::vector<std::vector<double>>& values() const { return r2_; }

    const std::vector<double>& lookup(double t) const {
        size_t best = 0;
        double bd = std::abs(times_[0] - t);
        for (size_t i = 1; i < times_.size(); ++i) {
            double d = std::abs(times_[i] - t);
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        return r2_[best];
    }

private:
    std::vector<double> times_;
    std::vector<std::vector<double>> r2_;
};

// Monte-Carlo estimate of the time-dependent scalar posterior variance
// r_t^2 = E||x0 - D_t(x_t)||^2 / d over a dataset of x0 draws.
inline VarianceTable estimate_analytic_variance(const Denoiser& den,
                                                const std::vector<Signal>& samples,
                                                const NoiseSchedule& sched,
                                                const std::vector<double>& grid_times,
                                                uint64_t seed) {
    if (samples.empty()) throw ValidationError("analytic variance: empty dataset");
    if (grid_times.empty()) throw ValidationError("analytic variance: empty time grid");
    std::vector<double> r2(grid_times.size(), 0.0);
    const double d = static_cast<double>(samples[0].size());
    for (size_t gi = 0; gi < grid_times.size(); ++gi) {
        const double t = grid_times[gi];
        const double s = sched.scale(t);
        const double sigma = sched.sigma(t);
        GaussianStream rng(substream_seed(seed, "analytic-var-" + std::to_string(gi)));
        double acc = 0.0;
        for (const Signal& x0 : samples) {
            Signal x_t(x0.shape);
            for (int i = 0; i < x_t.size(); ++i) x_t[i] = s * (x0[i] + sigma * rng.normal());
            Signal mean = den.mean(x_t, s, sigma);
            double err = 0.0;
            for (int i = 0; i < x_t.size(); ++i) {
                double e = x0[i] - mean[i];
                err += e * e;
            }
            acc += err / d;
        }
        r2[gi] = acc / static_cast<double>(samples.size());
    }
    return VarianceTable(std::vector<double>(grid_times), std::move(r2));
}

// Row-sum Jacobian approximation: diag Sigma ~= s sigma^2 * J^T 1, clamped
// to the variance floor.
inline std::vector<double> tmpd_diag(const Denoiser& den, const Signal& x_t, double s,
                                     double sigma_t, double floor = kVarianceFloor) {
    if (!den.has_vjp())
        throw CapabilityError("tmpd: denoiser has no vector-Jacobian product");
    Signal ones(x_t.shape, 1.0);
    Signal row_sums = den.vjp(x_t, s, sigma_t, ones);
    std::vector<double> out(static_cast<size_t>(x_t.size()));
    const double scale = s * sigma_t * sigma_t;
    for (int i = 0; i < x_t.size(); ++i) out[static_cast<size_t>(i)] = std::max(scale * row_sums[i], floor);
    return out;
}

struct SamplePair {
    Signal x0;
    Signal x_t;
};

inline std::vector<SamplePair> draw_noisy_pairs(const GmmPrior& prior, Shape shape, double s,
                                                double sigma, int n, GaussianStream& rng) {
    std::vector<SamplePair> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Signal x0 = prior.sample_signal(rng, shape);
        Signal x_t(shape);
        for (int j = 0; j < x_t.size(); ++j) x_t[j] = s * (x0[j] + sigma * rng.normal());
        out.push_back({std::move(x0), std::move(x_t)});
    }
    return out;
}

// Diagonal-Gaussian negative log-likelihood in the transform domain,
// sum_i [ err_i^2 / r_i^2 + log r_i^2 ] averaged over sample pairs. The
// per-time minimizer over r^2 is the mean squared coefficient error.
inline double transform_diag_nll(const Denoiser& den, const TransformBasis& basis,
                                 const std::vector<double>& r2,
                                 const std::vector<SamplePair>& pairs, double s, double sigma) {
    if (pairs.empty()) throw ValidationError("transform nll: no sample pairs");
    double acc = 0.0;
    for (const auto& p : pairs) {
        Signal err = basis.forward(p.x0 - den.mean(p.x_t, s, sigma));
        for (int i = 0; i < err.size(); ++i)
            acc += err[i] * err[i] / r2[static_cast<size_t>(i)] +
                   std::log(r2[static_cast<size_t>(i)]);
    }
    return acc / static_cast<double>(pairs.size());
}

// Closed-form stationary point of the transform-domain objective for a
// fixed denoiser: r_i^2 = E[(Psi^T x0 - Psi^T D_t(x_t))_i^2], estimated by
// Monte Carlo per grid time.
inline DiagTable fit_transform_variance(const GmmPrior& prior, const Denoiser& den,
                                        const TransformBasis& basis, Shape shape,
                                        const NoiseSchedule& sched,
                                        const std::vector<double>& grid_times, int n_samples,
                                        uint64_t seed, double floor = kVarianceFloor) {
    if (grid_times.empty()) throw ValidationError("transform variance: empty time grid");
    std::vector<std::vector<double>> all;
    all.reserve(grid_times.size());
    for (size_t gi = 0; gi < grid_times.size(); ++gi) {
        const double t = grid_times[gi];
        const double s = sched.scale(t);
        const double sigma = sched.sigma(t);
        GaussianStream rng(substream_seed(seed, "fit-var-" + std::to_string(gi)));
        auto pairs = draw_noisy_pairs(prior, shape, s, sigma, n_samples, rng);
        std::vector<double> r2(static_cast<size_t>(shape.size()), 0.0);
        for (const auto& p : pairs) {
            Signal err = basis.forward(p.x0 - den.mean(p.x_t, s, sigma));
            for (int i = 0; i < err.size(); ++i) r2[static_cast<size_t>(i)] += err[i] * err[i];
        }
        for (double& v : r2) v = std::max(v / n_samples, floor);
        all.push_back(std::move(r2));
    }
    return DiagTable(std::vector<double>(grid_times), std::move(all));
}

// Evaluated covariance handed to the guidance solvers. Isotropic models use
// the closed-form measurement solvers; diagonal and transform-diagonal
// models take the CG path.
struct CovEval {
    enum class Kind { Iso, Diag, TransformDiag };
    Kind kind = Kind::Iso;
    double r2 = 0.0;
    std::vector<double> r2v;
    std::shared_ptr<const TransformBasis> basis;
    bool unstable = false;
};

// Sigma * x for an evaluated covariance.
inline Signal apply_covariance(const CovEval& cov, const Signal& x) {
    switch (cov.kind) {
    case CovEval::Kind::Iso:
        return cov.r2 * x;
    case CovEval::Kind::Diag: {
        if (cov.r2v.size() != x.data.size())
            throw DimensionError("covariance: diagonal length mismatch");
        Signal out = x;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= cov.r2v[i];
        return out;
    }
    case CovEval::Kind::TransformDiag: {
        if (!cov.basis) throw ValidationError("covariance: missing transform basis");
        Signal theta = cov.basis->forward(x);
        if (cov.r2v.size() != theta.data.size())
            throw DimensionError("covariance: diagonal length mismatch");
        for (size_t i = 0; i < theta.data.size(); ++i) theta.data[i] *= cov.r2v[i];
        return cov.basis->inverse(theta);
    }
    }
    throw ValidationError("covariance: unknown kind");
}

// Posterior covariance model Sigma_t(x_t). Instances are immutable after
// construction and safe to share.
class CovarianceModel {
public:
    virtual ~CovarianceModel() = default;
    virtual CovEval eval(const Denoiser& den, const Signal& x_t, double s,
                         double sigma_t) const = 0;
    virtual std::string name() const = 0;
};

// r_t^2 -> 0 limit (DPS delta posterior).
class DeltaCovariance final : public CovarianceModel {
public:
    CovEval eval(const Denoiser&, const Signal&, double, double) const override {
        return CovEval{};
    }
    std::string name() const override { return "dps"; }
};

class PigdmCovariance final : public CovarianceModel {
public:
    CovEval eval(const Denoiser&, const Signal&, double, double sigma_t) const override {
        CovEval e;
        e.r2 = r2_pigdm(sigma_t);
        return e;
    }
    std::string name() const override { return "pigdm"; }
};

class DiffPirCovariance final : public CovarianceModel {
public:
    explicit DiffPirCovariance(double lambda) : lambda_(lambda) {
        if (lambda <= 0.0) throw DomainError("diffpir covariance: lambda must be positive");
    }
    double lambda() const { return lambda_; }
    CovEval eval(const Denoiser&, const Signal&, double, double sigma_t) const override {
        CovEval e;
        e.r2 = r2_diffpir(sigma_t, lambda_);
        return e;
    }
    std::string name() const override { return "diffpir"; }

private:
    double lambda_;
};

// Scalar Monte-Carlo table (nearest time); `sched` maps the sampler's
// sigma_t back onto the table's time axis.
class AnalyticCovariance final : public CovarianceModel {
public:
    AnalyticCovariance(VarianceTable table, NoiseSchedule sched = NoiseSchedule::edm())
        : table_(std::move(table)), sched_(std::move(sched)) {}
    CovEval eval(const Denoiser&, const Signal&, double, double sigma_t) const override {
        CovEval e;
        e.r2 = table_.lookup(sched_.time_for_sigma(sigma_t));
        return e;
    }
    std::string name() const override { return "analytic"; }

private:
    VarianceTable table_;
    NoiseSchedule sched_;
};

class SpatialDiagCovariance final : public CovarianceModel {
public:
    SpatialDiagCovariance(DiagTable table, NoiseSchedule sched = NoiseSchedule::edm())
        : table_(std::move(table)), sched_(std::move(sched)) {}
    CovEval eval(const Denoiser&, const Signal& x_t, double, double sigma_t) const override {
        CovEval e;
        e.kind = CovEval::Kind::Diag;
        e.r2v = table_.lookup(sched_.time_for_sigma(sigma_t));
        if (e.r2v.size() != x_t.data.size())
            throw DimensionError("spatial covariance: table dimension mismatch");
        return e;
    }
    std::string name() const override { return "spatial-diag"; }

private:
    DiagTable table_;
    NoiseSchedule sched_;
};

class TransformDiagCovariance final : public CovarianceModel {
public:
    TransformDiagCovariance(std::shared_ptr<const TransformBasis> basis, DiagTable table,
                            NoiseSchedule sched = NoiseSchedule::edm())
        : basis_(std::move(basis)), table_(std::move(table)), sched_(std::move(sched)) {
        if (!basis_) throw ValidationError("transform covariance: basis is null");
    }
    CovEval eval(const Denoiser&, const Signal& x_t, double, double sigma_t) const override {
        CovEval e;
        e.kind = basis_impl_is_identity() ? CovEval::Kind::Diag : CovEval::Kind::TransformDiag;
        e.r2v = table_.lookup(sched_.time_for_sigma(sigma_t));
        e.basis = basis_;
        if (e.r2v.size() != x_t.data.size())
            throw DimensionError("transform covariance: table dimension mismatch");
        return e;
    }
    std::string name() const override { return "transform-diag(" + basis_->name() + ")"; }

private:
    bool basis_impl_is_identity() const {
        return dynamic_cast<const IdentityBasis*>(basis_.get()) != nullptr;
    }
    std::shared_ptr<const TransformBasis> basis_;
    DiagTable table_;
    NoiseSchedule sched_;
};

// Signal-dependent diagonal from the denoiser Jacobian row sums.
class TmpdCovariance final : public CovarianceModel {
public:
    CovEval eval(const Denoiser& den, const Signal& x_t, double s,
                 double sigma_t) const override {
        CovEval e;
        e.kind = CovEval::Kind::Diag;
        e.r2v = tmpd_diag(den, x_t, s, sigma_t);
        return e;
    }
    std::string name() const override { return "tmpd"; }
};

// Converts the denoiser's DDPM reverse-variance prediction to posterior
// variances. The sampler's sigma_t is mapped to the nearest discrete VP
// step; the denoiser input is rescaled accordingly.
class ConvertReverseCovariance final : public CovarianceModel {
public:
    explicit ConvertReverseCovariance(std::shared_ptr<const DdpmSchedule> sched)
        : sched_(std::move(sched)) {
        if (!sched_) throw ValidationError("convert covariance: schedule is null");
    }

    CovEval eval(const Denoiser& den, const Signal& x_t, double s,
                 double sigma_t) const override {
        if (!den.has_reverse_variance())
            throw CapabilityError("convert covariance: denoiser has no reverse variances");
        NoiseSchedule vp = NoiseSchedule::vp_discrete(sched_);
        double t_cont = vp.time_for_sigma(sigma_t);
        int t = static_cast<int>(std::lround(t_cont));
        t = std::clamp(t, 1, sched_->steps());
        const double input_scale = sched_->scale(t) / s;
        Signal x_vp = input_scale * x_t;
        ConvertedVariance conv = convert_reverse_variance(den.reverse_variance(x_vp, t), t, *sched_);
        CovEval e;
        e.kind = CovEval::Kind::Diag;
        e.r2v = std::move(conv.r2);
        e.unstable = conv.unstable;
        return e;
    }
    std::string name() const override { return "convert"; }

private:
    std::shared_ptr<const DdpmSchedule> sched_;
};

} // namespace dpcov
