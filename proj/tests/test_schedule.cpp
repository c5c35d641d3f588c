#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dpcov/oracle.hpp"
#include "dpcov/rng.hpp"
#include "dpcov/schedule.hpp"

using namespace dpcov;

TEST_CASE("edm mapping is the identity in sigma") {
    CHECK(edm_sigma(0.0) == std::pair{1.0, 0.0});
    CHECK(edm_sigma(80.0) == std::pair{1.0, 80.0});
    CHECK(edm_sigma(0.05) == std::pair{1.0, 0.05});
    CHECK_THROWS_AS(edm_sigma(-1.0), DomainError);
}

TEST_CASE("ddpm derived arrays") {
    SECTION("single step forces beta_tilde_1 = 0") {
        DdpmSchedule s = ddpm_from_betas({0.5});
        CHECK(s.alpha_bar(1) == Catch::Approx(0.5));
        CHECK(s.beta_bar(1) == Catch::Approx(0.5));
        CHECK(s.beta_tilde(1) == 0.0);
    }
    SECTION("two-step schedule, scalar recomputation") {
        DdpmSchedule s = ddpm_from_betas({0.1, 0.2});
        CHECK(s.alpha_bar(1) == Catch::Approx(0.9).epsilon(1e-14));
        CHECK(s.alpha_bar(2) == Catch::Approx(0.72).epsilon(1e-14));
        CHECK(s.beta_bar(1) == Catch::Approx(0.1).epsilon(1e-14));
        CHECK(s.beta_bar(2) == Catch::Approx(0.28).epsilon(1e-14));
        // beta_tilde_2 = (beta_bar_1 / beta_bar_2) beta_2
        CHECK(s.beta_tilde(2) == Catch::Approx(0.1 / 0.28 * 0.2).epsilon(1e-14));
    }
    SECTION("linear schedule over T=1000 decays below 1e-4") {
        DdpmSchedule s = ddpm_linear(1000, 1e-4, 2e-2);
        // brute-force cumulative product as the oracle
        double prod = 1.0;
        for (int t = 1; t <= 1000; ++t) prod *= 1.0 - (1e-4 + (2e-2 - 1e-4) * (t - 1) / 999.0);
        CHECK(s.alpha_bar(1000) == Catch::Approx(prod).epsilon(1e-12));
        CHECK(s.alpha_bar(1000) < 1e-4);
    }
    SECTION("validation") {
        CHECK_THROWS_AS(ddpm_from_betas({0.0}), ValidationError);
        CHECK_THROWS_AS(ddpm_from_betas({1.0}), ValidationError);
        CHECK_THROWS_AS(ddpm_from_betas({}), ValidationError);
    }
    SECTION("invariants over a random-ish schedule") {
        DdpmSchedule s = ddpm_linear(50, 5e-3, 4e-2);
        for (int t = 2; t <= 50; ++t) {
            CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
            CHECK(s.beta_bar(t) > s.beta_bar(t - 1));
            CHECK(s.sigma(t) > s.sigma(t - 1));
            CHECK(s.beta_tilde(t) <= s.beta(t));
        }
    }
}

TEST_CASE("kernel conversion") {
    auto ddpm = std::make_shared<DdpmSchedule>(ddpm_linear(1000, 1e-4, 2e-2));
    NoiseSchedule vp = NoiseSchedule::vp_discrete(ddpm);
    NoiseSchedule edm = NoiseSchedule::edm(200.0);

    SECTION("identity conversion") {
        auto conv = convert_between_kernels(3.7, edm, edm);
        CHECK(conv.t_prime == Catch::Approx(3.7).margin(1e-12));
        CHECK(conv.input_scale == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("vp source hit exactly on a grid point") {
        const int t_idx = 500;
        const double sigma_target = ddpm->sigma(t_idx);
        auto conv = convert_between_kernels(sigma_target, edm, vp);
        CHECK(conv.t_prime == Catch::Approx(static_cast<double>(t_idx)).margin(1e-9));
        CHECK(conv.input_scale == Catch::Approx(ddpm->scale(t_idx)).epsilon(1e-12));
    }
    SECTION("round trip is the identity up to interpolation tolerance") {
        for (double t : {0.5, 1.0, 5.0, 17.3}) {
            auto fwd = convert_between_kernels(t, edm, vp);
            auto bwd = convert_between_kernels(fwd.t_prime, vp, edm);
            CHECK(std::abs(bwd.t_prime - t) <= 1e-6);
            CHECK(std::abs(fwd.input_scale * bwd.input_scale - 1.0) <= 1e-6);
        }
    }
    SECTION("out-of-range sigma is rejected") {
        CHECK_THROWS_AS(convert_between_kernels(200.0, edm, vp), RangeError);
    }
}

TEST_CASE("tweedie score") {
    SECTION("posterior mean at the fixed point gives zero score") {
        Signal x({0.3, -1.2, 4.0});
        Signal score = tweedie_score(x, x, 1.0, 0.7);
        for (int i = 0; i < 3; ++i) CHECK(score[i] == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("sigma = 0 is singular") {
        Signal x({1.0});
        CHECK_THROWS_AS(tweedie_score(x, x, 1.0, 0.0), SingularityError);
    }
    SECTION("standard normal prior reproduces the analytic marginal score") {
        GmmPrior prior = GmmPrior::standard_normal(3);
        const double sigma = 0.8;
        Signal x({0.4, -2.0, 1.1});
        Signal mean = prior.posterior_mean(x, 1.0, sigma);
        Signal score = tweedie_score(x, mean, 1.0, sigma);
        for (int i = 0; i < 3; ++i)
            CHECK(score[i] == Catch::Approx(-x[i] / (1.0 + sigma * sigma)).epsilon(1e-12));
    }
    SECTION("gmm prior matches finite differences of the log marginal") {
        GaussianStream rng(7);
        std::vector<GmmPrior::Component> comps;
        Eigen::Vector2d m1(1.0, -0.5), m2(-1.2, 0.3), m3(0.2, 1.4);
        Eigen::Matrix2d c1, c2, c3;
        c1 << 0.5, 0.1, 0.1, 0.3;
        c2 << 0.8, -0.2, -0.2, 0.6;
        c3 << 0.4, 0.0, 0.0, 0.9;
        comps.push_back({0.5, m1, c1});
        comps.push_back({0.3, m2, c2});
        comps.push_back({0.2, m3, c3});
        GmmPrior prior(std::move(comps));

        for (double s : {1.0, 0.9}) {
            for (double sigma : {0.3, 1.0}) {
                Signal x({rng.normal(), rng.normal()});
                Signal mean = prior.posterior_mean(x, s, sigma);
                Signal score = tweedie_score(x, mean, s, sigma);
                const double h = 1e-5;
                for (int i = 0; i < 2; ++i) {
                    Signal xp = x, xm = x;
                    xp[i] += h;
                    xm[i] -= h;
                    double fd = (prior.log_marginal(to_eigen(xp), s, sigma) -
                                 prior.log_marginal(to_eigen(xm), s, sigma)) /
                                (2 * h);
                    CHECK(score[i] == Catch::Approx(fd).margin(1e-6));
                }
            }
        }
    }
    SECTION("conditional tweedie holds for the gaussian-prior oracle") {
        Eigen::Vector3d mu(0.2, -0.1, 0.5);
        Eigen::Matrix3d cov = Eigen::Vector3d(0.9, 0.4, 1.5).asDiagonal();
        GmmPrior prior = GmmPrior::single(mu, cov);
        Eigen::MatrixXd A(2, 3);
        A << 1, 0, 0, 0, 1, 1;
        Eigen::Vector2d y(0.7, -0.4);
        const double sigma_y = 0.25, s = 1.0, sigma_t = 0.6;

        GmmPrior cond = prior.condition_on(A, sigma_y, y);
        Signal x({0.3, 0.1, -0.9});
        Signal cond_mean = cond.posterior_mean(x, s, sigma_t);
        Signal score = tweedie_score(x, cond_mean, s, sigma_t);

        // conjugacy oracle: x_t | y ~ N(s mu_y, s^2 (Sigma_y + sigma_t^2 I))
        const auto& c = cond.component(0);
        Eigen::Matrix3d S =
            s * s * (c.cov + sigma_t * sigma_t * Eigen::Matrix3d::Identity());
        Eigen::Vector3d expected = -S.ldlt().solve(to_eigen(x) - s * c.mean);
        for (int i = 0; i < 3; ++i) CHECK(score[i] == Catch::Approx(expected[i]).margin(1e-8));
    }
}
