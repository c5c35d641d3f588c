#pragma once

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "dpcov/denoiser.hpp"
#include "dpcov/operators.hpp"
#include "dpcov/rng.hpp"
#include "dpcov/schedule.hpp"
#include "dpcov/signal.hpp"

namespace dpcov {

inline Eigen::VectorXd to_eigen(const Signal& x) {
    return Eigen::Map<const Eigen::VectorXd>(x.data.data(), x.size());
}

inline Signal from_eigen(const Eigen::VectorXd& v, Shape shape) {
    return Signal(std::vector<double>(v.data(), v.data() + v.size()), shape);
}

// Materializes an operator column by column. Intended for oracles and
// cross-checks at desk scale.
inline Eigen::MatrixXd dense_matrix(const LinearOperator& op) {
    const int d = op.input_dim();
    const int m = op.output_dim();
    Eigen::MatrixXd A(m, d);
    Signal e(op.input_shape());
    for (int j = 0; j < d; ++j) {
        std::fill(e.data.begin(), e.data.end(), 0.0);
        e[j] = 1.0;
        Signal col = op.apply(e);
        for (int i = 0; i < m; ++i) A(i, j) = col[i];
    }
    return A;
}

// Analytic Gaussian-mixture prior with exact posterior moments, scores and
// conditional means under the perturbation kernel N(s x0, s^2 sigma^2 I).
// Everything is dense and exists for correctness, not speed; dimensions are
// capped accordingly.
class GmmPrior {
public:
    static constexpr int kMaxDenseDim = 64;
    static constexpr double kLog2Pi = 1.8378770664093454836;

    struct Component {
        double weight;
        Eigen::VectorXd mean;
        Eigen::MatrixXd cov;
    };

    explicit GmmPrior(std::vector<Component> components) : comps_(std::move(components)) {
        if (comps_.empty()) throw ValidationError("gmm: no components");
        dim_ = static_cast<int>(comps_[0].mean.size());
        if (dim_ < 1) throw ValidationError("gmm: empty mean");
        if (dim_ > kMaxDenseDim) throw CapabilityError("gmm: dimension exceeds dense cap");
        double wsum = 0.0;
        for (auto& c : comps_) {
            if (c.weight <= 0.0) throw ValidationError("gmm: weights must be positive");
            if (c.mean.size() != dim_ || c.cov.rows() != dim_ || c.cov.cols() != dim_)
                throw DimensionError("gmm: component dimensions disagree");
            if (!c.cov.isApprox(c.cov.transpose(), 1e-12))
                throw ValidationError("gmm: covariance must be symmetric");
            wsum += c.weight;
        }
        if (std::abs(wsum - 1.0) > 1e-9) throw ValidationError("gmm: weights must sum to 1");
        // eigendecomposition gives a PSD-tolerant sampling factor
        sqrt_cov_.reserve(comps_.size());
        diagonal_ = true;
        for (auto& c : comps_) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.cov);
            if (es.eigenvalues().minCoeff() < -1e-10)
                throw ValidationError("gmm: covariance must be positive semi-definite");
            Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
            sqrt_cov_.push_back(es.eigenvectors() * ev.asDiagonal());
            for (int i = 0; i < dim_ && diagonal_; ++i)
                for (int j = 0; j < dim_; ++j)
                    if (i != j && c.cov(i, j) != 0.0) {
                        diagonal_ = false;
                        break;
                    }
        }
    }

    static GmmPrior single(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
        return GmmPrior({Component{1.0, std::move(mean), std::move(cov)}});
    }

    static GmmPrior standard_normal(int d) {
        return single(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
    }

    int dim() const { return dim_; }
    int components() const { return static_cast<int>(comps_.size()); }
    const Component& component(int k) const { return comps_[static_cast<size_t>(k)]; }
    bool diagonal() const { return diagonal_; }

    Eigen::VectorXd sample(GaussianStream& rng) const {
        double u = rng.uniform();
        size_t k = 0;
        double acc = 0.0;
        for (; k < comps_.size(); ++k) {
            acc += comps_[k].weight;
            if (u <= acc) break;
        }
        if (k == comps_.size()) k = comps_.size() - 1;
        Eigen::VectorXd z(dim_);
        for (int i = 0; i < dim_; ++i) z[i] = rng.normal();
        return comps_[k].mean + sqrt_cov_[k] * z;
    }

    Signal sample_signal(GaussianStream& rng, Shape shape) const {
        if (shape.size() != dim_) throw DimensionError("gmm: sample shape mismatch");
        return from_eigen(sample(rng), shape);
    }

    // Mixture responsibilities p(k | x_t), computed in the log domain.
    Eigen::VectorXd responsibilities(const Eigen::VectorXd& x_t, double s, double sigma) const {
        Eigen::VectorXd logw = log_component_weights(x_t, s, sigma);
        double mx = logw.maxCoeff();
        Eigen::VectorXd w = (logw.array() - mx).exp();
        return w / w.sum();
    }

    double log_marginal(const Eigen::VectorXd& x_t, double s, double sigma) const {
        if (sigma <= 0.0) throw SingularityError("gmm: log marginal needs sigma > 0");
        Eigen::VectorXd logw = log_component_weights(x_t, s, sigma);
        double mx = logw.maxCoeff();
        // account for the s-scaling of the state: x_t = s(x0 + sigma eps)
        return mx + std::log((logw.array() - mx).exp().sum()) - dim_ * std::log(s);
    }

    Eigen::VectorXd posterior_mean(const Eigen::VectorXd& x_t, double s, double sigma) const {
        const Eigen::VectorXd xt = x_t / s;
        if (sigma == 0.0) return xt;
        Eigen::VectorXd w = responsibilities(x_t, s, sigma);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim_);
        for (int k = 0; k < components(); ++k)
            mean += w[k] * component_posterior_mean(k, xt, sigma);
        return mean;
    }

    Signal posterior_mean(const Signal& x_t, double s, double sigma) const {
        return from_eigen(posterior_mean(to_eigen(x_t), s, sigma), x_t.shape);
    }

    // Exact mixture covariance Cov[x0 | x_t] by the law of total variance.
    Eigen::MatrixXd posterior_covariance(const Eigen::VectorXd& x_t, double s,
                                         double sigma) const {
        if (sigma == 0.0) return Eigen::MatrixXd::Zero(dim_, dim_);
        const Eigen::VectorXd xt = x_t / s;
        Eigen::VectorXd w = responsibilities(x_t, s, sigma);
        Eigen::MatrixXd second = Eigen::MatrixXd::Zero(dim_, dim_);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim_);
        const double sig2 = sigma * sigma;
        for (int k = 0; k < components(); ++k) {
            Eigen::MatrixXd B = posterior_gain(k, sigma);
            Eigen::VectorXd mk = comps_[static_cast<size_t>(k)].mean +
                                 B * (xt - comps_[static_cast<size_t>(k)].mean);
            Eigen::MatrixXd Ck = sig2 * B;
            second += w[k] * (Ck + mk * mk.transpose());
            mean += w[k] * mk;
        }
        return second - mean * mean.transpose();
    }

    std::vector<double> posterior_variance(const Eigen::VectorXd& x_t, double s,
                                           double sigma) const {
        Eigen::VectorXd d = posterior_covariance(x_t, s, sigma).diagonal();
        return std::vector<double>(d.data(), d.data() + d.size());
    }

    // Exact J^T c for J = d posterior_mean / d x_t, including the
    // responsibility derivatives of the mixture.
    Eigen::VectorXd posterior_vjp(const Eigen::VectorXd& x_t, double s, double sigma,
                                  const Eigen::VectorXd& cot) const {
        if (sigma == 0.0) return cot / s;
        const Eigen::VectorXd xt = x_t / s;
        Eigen::VectorXd w = responsibilities(x_t, s, sigma);
        const int K = components();
        std::vector<Eigen::VectorXd> g(static_cast<size_t>(K));
        std::vector<Eigen::VectorXd> m(static_cast<size_t>(K));
        Eigen::VectorXd gbar = Eigen::VectorXd::Zero(dim_);
        for (int k = 0; k < K; ++k) {
            const auto& c = comps_[static_cast<size_t>(k)];
            Eigen::MatrixXd S = c.cov + sigma * sigma * Eigen::MatrixXd::Identity(dim_, dim_);
            g[static_cast<size_t>(k)] = -S.ldlt().solve(xt - c.mean);
            m[static_cast<size_t>(k)] = component_posterior_mean(k, xt, sigma);
            gbar += w[k] * g[static_cast<size_t>(k)];
        }
        Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_);
        for (int k = 0; k < K; ++k) {
            Eigen::VectorXd bk = posterior_gain(k, sigma) * cot;
            double mc = m[static_cast<size_t>(k)].dot(cot);
            out += w[k] * (bk + mc * (g[static_cast<size_t>(k)] - gbar));
        }
        return out / s;
    }

    Signal posterior_vjp(const Signal& x_t, double s, double sigma, const Signal& cot) const {
        return from_eigen(posterior_vjp(to_eigen(x_t), s, sigma, to_eigen(cot)), x_t.shape);
    }

    // Exact posterior over x0 given a Gaussian measurement y = A x0 + n:
    // per-component conjugacy plus evidence reweighting yields another GMM.
    GmmPrior condition_on(const Eigen::MatrixXd& A, double sigma_y,
                          const Eigen::VectorXd& y) const {
        if (sigma_y <= 0.0)
            throw SingularityError("gmm: conditioning requires sigma_y > 0");
        if (A.cols() != dim_ || A.rows() != y.size())
            throw DimensionError("gmm: measurement dimensions mismatch");
        const int m = static_cast<int>(A.rows());
        std::vector<Component> out;
        out.reserve(comps_.size());
        Eigen::VectorXd logw(components());
        std::vector<Component> posts;
        for (int k = 0; k < components(); ++k) {
            const auto& c = comps_[static_cast<size_t>(k)];
            Eigen::MatrixXd S =
                sigma_y * sigma_y * Eigen::MatrixXd::Identity(m, m) + A * c.cov * A.transpose();
            Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
            Eigen::VectorXd resid = y - A * c.mean;
            double quad = resid.dot(ldlt.solve(resid));
            double logdet = ldlt.vectorD().array().max(1e-300).log().sum();
            logw[k] = std::log(c.weight) - 0.5 * (m * kLog2Pi + logdet + quad);
            Eigen::MatrixXd gain = c.cov * A.transpose() * ldlt.solve(Eigen::MatrixXd::Identity(m, m));
            Component pc;
            pc.mean = c.mean + gain * resid;
            Eigen::MatrixXd post_cov = c.cov - gain * A * c.cov;
            pc.cov = 0.5 * (post_cov + post_cov.transpose()); // enforce exact symmetry
            posts.push_back(std::move(pc));
        }
        double mx = logw.maxCoeff();
        Eigen::VectorXd w = (logw.array() - mx).exp();
        w /= w.sum();
        for (int k = 0; k < components(); ++k) {
            posts[static_cast<size_t>(k)].weight = std::max(w[k], 1e-300);
            out.push_back(std::move(posts[static_cast<size_t>(k)]));
        }
        return GmmPrior(std::move(out));
    }

    GmmPrior condition_on(const MeasurementModel& meas) const {
        return condition_on(dense_matrix(*meas.op), meas.sigma, to_eigen(meas.y));
    }

    // log p_t(y | x_t) = log sum_k w_k(x_t) N(y; A m_k, sigma_y^2 I + A C_k A^T).
    double log_likelihood_y(const Eigen::VectorXd& x_t, double s, double sigma,
                            const Eigen::MatrixXd& A, double sigma_y,
                            const Eigen::VectorXd& y) const {
        const Eigen::VectorXd xt = x_t / s;
        Eigen::VectorXd w = responsibilities(x_t, s, sigma);
        const int m = static_cast<int>(A.rows());
        const double sig2 = sigma * sigma;
        Eigen::VectorXd logp(components());
        for (int k = 0; k < components(); ++k) {
            Eigen::MatrixXd B = posterior_gain(k, sigma);
            Eigen::VectorXd mk = comps_[static_cast<size_t>(k)].mean +
                                 B * (xt - comps_[static_cast<size_t>(k)].mean);
            Eigen::MatrixXd S = sigma_y * sigma_y * Eigen::MatrixXd::Identity(m, m) +
                                A * (sig2 * B) * A.transpose();
            Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
            Eigen::VectorXd resid = y - A * mk;
            double quad = resid.dot(ldlt.solve(resid));
            double logdet = ldlt.vectorD().array().max(1e-300).log().sum();
            logp[k] = std::log(w[k]) - 0.5 * (m * kLog2Pi + logdet + quad);
        }
        double mx = logp.maxCoeff();
        return mx + std::log((logp.array() - mx).exp().sum());
    }

    // Optimal reverse variances v*^2 = beta_tilde_t + c_t^2 r*^2 at the VP
    // point of step t; x_t is in VP scaling.
    std::vector<double> reverse_variance(const Eigen::VectorXd& x_t, int t,
                                         const DdpmSchedule& sched) const {
        if (!diagonal_)
            throw CapabilityError("gmm: reverse variance requires a diagonal-covariance prior");
        const double s = sched.scale(t);
        const double sigma = sched.sigma(t);
        std::vector<double> r2 = posterior_variance(x_t, s, sigma);
        const double bt = sched.beta_tilde(t);
        const double c2 = sched.mean_coeff(t) * sched.mean_coeff(t);
        for (double& v : r2) v = bt + c2 * v;
        return r2;
    }

private:
    Eigen::VectorXd log_component_weights(const Eigen::VectorXd& x_t, double s,
                                          double sigma) const {
        if (x_t.size() != dim_) throw DimensionError("gmm: state dimension mismatch");
        const Eigen::VectorXd xt = x_t / s;
        const double sig2 = sigma * sigma;
        Eigen::VectorXd logw(components());
        for (int k = 0; k < components(); ++k) {
            const auto& c = comps_[static_cast<size_t>(k)];
            Eigen::MatrixXd S = c.cov + sig2 * Eigen::MatrixXd::Identity(dim_, dim_);
            Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
            Eigen::VectorXd r = xt - c.mean;
            double quad = r.dot(ldlt.solve(r));
            double logdet = ldlt.vectorD().array().max(1e-300).log().sum();
            logw[k] = std::log(c.weight) - 0.5 * (dim_ * kLog2Pi + logdet + quad);
        }
        return logw;
    }

    // B_k = Sigma0_k (Sigma0_k + sigma^2 I)^{-1}
    Eigen::MatrixXd posterior_gain(int k, double sigma) const {
        const auto& c = comps_[static_cast<size_t>(k)];
        Eigen::MatrixXd S = c.cov + sigma * sigma * Eigen::MatrixXd::Identity(dim_, dim_);
        return S.ldlt().solve(c.cov).transpose();
    }

    Eigen::VectorXd component_posterior_mean(int k, const Eigen::VectorXd& xt,
                                             double sigma) const {
        const auto& c = comps_[static_cast<size_t>(k)];
        return c.mean + posterior_gain(k, sigma) * (xt - c.mean);
    }

    std::vector<Component> comps_;
    std::vector<Eigen::MatrixXd> sqrt_cov_;
    int dim_ = 0;
    bool diagonal_ = true;
};

// Denoiser backed by the analytic GMM prior. Attach a DDPM schedule to
// expose reverse-variance predictions.
class GmmDenoiser final : public Denoiser {
public:
    explicit GmmDenoiser(std::shared_ptr<const GmmPrior> prior,
                         std::shared_ptr<const DdpmSchedule> ddpm = nullptr)
        : prior_(std::move(prior)), ddpm_(std::move(ddpm)) {
        if (!prior_) throw ValidationError("gmm denoiser: prior is null");
    }

    const GmmPrior& prior() const { return *prior_; }

    Signal mean(const Signal& x_t, double s, double sigma_t) const override {
        return prior_->posterior_mean(x_t, s, sigma_t);
    }

    bool has_vjp() const override { return true; }
    Signal vjp(const Signal& x_t, double s, double sigma_t, const Signal& cot) const override {
        return prior_->posterior_vjp(x_t, s, sigma_t, cot);
    }

    bool has_posterior_variance() const override { return true; }
    std::vector<double> posterior_variance(const Signal& x_t, double s,
                                           double sigma_t) const override {
        return prior_->posterior_variance(to_eigen(x_t), s, sigma_t);
    }

    bool has_reverse_variance() const override { return ddpm_ != nullptr; }
    std::vector<double> reverse_variance(const Signal& x_t, int t) const override {
        if (!ddpm_) throw CapabilityError("gmm denoiser: no DDPM schedule attached");
        return prior_->reverse_variance(to_eigen(x_t), t, *ddpm_);
    }

private:
    std::shared_ptr<const GmmPrior> prior_;
    std::shared_ptr<const DdpmSchedule> ddpm_;
};

} // namespace dpcov
