#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "attnpca/attention.hpp"
#include "attnpca/covariance.hpp"
#include "attnpca/optim.hpp"
#include "attnpca/parallel.hpp"
#include "attnpca/risk.hpp"
#include "attnpca/rng.hpp"
#include "test_oracles.hpp"

using namespace attnpca;

namespace {

CovarianceModel cov_diag21() {
    return CovarianceModel::from_matrix(Mat::diagonal({2.0, 1.0}));
}

struct RandomInstance {
    CovarianceModel cov;
    Vec mu;
    double lambda;
};

RandomInstance random_instance(std::size_t index) {
    RngStream rng = RngStream(777, 0).derive(index);
    const std::size_t d = 2 + index % 5;  // 2..6
    CovarianceModel cov = build_experiment_covariance(d, rng.derive(1));
    Vec mu = sample_unit_sphere(d, rng.derive(2));
    for (double& m : mu) m *= 0.5 + rng.derive(3).uniform01();
    const double lambda = 0.05 + 0.3 * rng.derive(4).uniform01();
    return {std::move(cov), std::move(mu), lambda};
}

}  // namespace

TEST_CASE("risk_soft_inf pinned values") {
    const CovarianceModel cov = cov_diag21();

    // μ = 0: value tr(Σ), gradient 0.
    const RiskEval at_zero = risk_soft_inf(AttnParam(zeros(2), 1.0), cov);
    CHECK(at_zero.value == doctest::Approx(3.0));
    CHECK(norm(*at_zero.gradient) == doctest::Approx(0.0));

    // μ = (1,0): a = 2, b = 4, value = 3 − 8 + 8 = 3.
    CHECK(risk_soft_inf(AttnParam({1.0, 0.0}, 1.0), cov).value == doctest::Approx(3.0));

    // μ* = u₁/√(λσ₁): value = tr(Σ) − σ₁ = 1.
    const Vec mu_star = {1.0 / std::sqrt(2.0), 0.0};
    CHECK(risk_soft_inf(AttnParam(mu_star, 1.0), cov).value ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("risk_lin_finite pinned values") {
    const CovarianceModel cov = cov_diag21();

    CHECK(risk_lin_finite(AttnParam(zeros(2), 0.01), cov, 6).value == doctest::Approx(3.0));

    // Σ=diag(2,1), λ=0.01, L=6, μ=(1,0): a=2, b=4 plugged into the closed form.
    const double lambda = 0.01, L = 6.0, tr = 3.0, a = 2.0, b = 4.0;
    const double expected = tr - 2.0 * lambda / L * tr * a -
                            2.0 * lambda * (L + 1.0) / L * b +
                            lambda * lambda / (L * L) * (L + 2.0) * tr * a * a +
                            lambda * lambda / (L * L) * (L + 2.0) * (L + 3.0) * a * b;
    CHECK(risk_lin_finite(AttnParam({1.0, 0.0}, lambda), cov, 6).value ==
          doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("risk_lin_finite closed form agrees with Monte Carlo of the defining risk") {
    // E‖X₁ − T_L^lin(X)₁‖² estimated over fresh prompts.
    const CovarianceModel cov = cov_diag21();
    const double lambda = 0.01;
    const std::size_t L = 6;
    const AttnParam param({1.0, 0.0}, lambda);
    const double closed_form = risk_lin_finite(param, cov, L).value;

    RngStream rng(88, 0);
    const std::size_t n = 1000000;
    std::vector<double> sums(4, 0.0), sqs(4, 0.0);
    parallel_for(4, default_workers(), [&](std::size_t c) {
        RngStream sub = rng.derive(c);
        double s = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n / 4; ++i) {
            const Prompt prompt = sample_prompt(cov, L, sub.derive(i));
            const Vec out = linear_attention(prompt, param, 0).value;
            const double loss = norm_sq(sub2(prompt.token_vec(0), out));
            s += loss;
            sq += loss * loss;
        }
        sums[c] = s;
        sqs[c] = sq;
    });
    double total = 0.0, total_sq = 0.0;
    for (int c = 0; c < 4; ++c) {
        total += sums[c];
        total_sq += sqs[c];
    }
    const double mean = total / static_cast<double>(n);
    const double var = total_sq / static_cast<double>(n) - mean * mean;
    const double se = std::sqrt(var / static_cast<double>(n));
    CHECK(std::abs(mean - closed_form) <= 3.0 * se);
}

TEST_CASE("linear critical points from the characterization have zero gradient") {
    const CovarianceModel cov = cov_diag21();
    const double lambda = 0.01;
    const std::size_t L = 6;
    const double tr = 3.0;

    for (std::size_t i = 0; i < 2; ++i) {
        const double si = cov.eigenvalue(i);
        const double gamma = std::sqrt((tr + 7.0 * si) /
                                       ((lambda / 6.0) * si * 8.0 * (tr + 9.0 * si)));
        const Vec mu = scaled(cov.eigenvector(i), gamma);
        const RiskEval eval = risk_lin_finite(AttnParam(mu, lambda), cov, L);
        CHECK(norm(*eval.gradient) < 1e-10);
    }
}

TEST_CASE("gradients and Hessians match central finite differences on random instances") {
    for (std::size_t idx = 0; idx < 20; ++idx) {
        const RandomInstance inst = random_instance(idx);
        const double step = 1e-6 * (1.0 + norm(inst.mu));

        const auto soft_value = [&](const Vec& m) {
            return risk_soft_inf(AttnParam(m, inst.lambda), inst.cov).value;
        };
        const auto soft_grad = [&](const Vec& m) {
            return *risk_soft_inf(AttnParam(m, inst.lambda), inst.cov).gradient;
        };
        const RiskEval soft = risk_soft_inf(AttnParam(inst.mu, inst.lambda), inst.cov);
        CHECK(oracles::rel_error_vec(*soft.gradient,
                                     oracles::fd_gradient(soft_value, inst.mu, step)) < 1e-6);
        CHECK(soft.hessian->is_symmetric(1e-10));
        const Mat soft_h_fd =
            oracles::fd_jacobian(soft_grad, inst.mu, 10.0 * step).symmetrized();
        CHECK(oracles::rel_error_mat(*soft.hessian, soft_h_fd) < 1e-5);

        const std::size_t L = 3 + idx % 10;
        const auto lin_value = [&](const Vec& m) {
            return risk_lin_finite(AttnParam(m, inst.lambda), inst.cov, L).value;
        };
        const auto lin_grad = [&](const Vec& m) {
            return *risk_lin_finite(AttnParam(m, inst.lambda), inst.cov, L).gradient;
        };
        const RiskEval lin = risk_lin_finite(AttnParam(inst.mu, inst.lambda), inst.cov, L);
        CHECK(oracles::rel_error_vec(*lin.gradient,
                                     oracles::fd_gradient(lin_value, inst.mu, step)) < 1e-6);
        CHECK(lin.hessian->is_symmetric(1e-10));
        const Mat lin_h_fd =
            oracles::fd_jacobian(lin_grad, inst.mu, 10.0 * step).symmetrized();
        CHECK(oracles::rel_error_mat(*lin.hessian, lin_h_fd) < 1e-5);
    }
}

TEST_CASE("risk_soft_inf_mc: trivial and pinned targets") {
    const CovarianceModel cov = cov_diag21();

    const RiskEval at_zero =
        risk_soft_inf_mc(AttnParam(zeros(2), 1.0), cov, 200000, RngStream(5, 5));
    CHECK(std::abs(at_zero.value - 3.0) <= 3.0 * *at_zero.mc_std_error);

    const RiskEval at_e1 =
        risk_soft_inf_mc(AttnParam({1.0, 0.0}, 1.0), cov, 1000000, RngStream(6, 6));
    CHECK(std::abs(at_e1.value - 3.0) <= 3.0 * *at_e1.mc_std_error);

    const Vec mu_star = {1.0 / std::sqrt(2.0), 0.0};
    const RiskEval at_star =
        risk_soft_inf_mc(AttnParam(mu_star, 1.0), cov, 1000000, RngStream(7, 7));
    CHECK(std::abs(at_star.value - 1.0) <= 3.0 * *at_star.mc_std_error);
}

TEST_CASE("risk_soft_inf closed form vs MC on random instances (4 SE)") {
    std::vector<double> dev(20, 0.0);
    parallel_for(20, default_workers(), [&](std::size_t idx) {
        const RandomInstance inst = random_instance(idx);
        const RiskEval closed = risk_soft_inf(AttnParam(inst.mu, inst.lambda), inst.cov);
        const RiskEval mc = risk_soft_inf_mc(AttnParam(inst.mu, inst.lambda), inst.cov,
                                             200000, RngStream(909, idx));
        dev[idx] = std::abs(mc.value - closed.value) / *mc.mc_std_error;
    });
    for (std::size_t idx = 0; idx < 20; ++idx) {
        INFO("instance ", idx);
        CHECK(dev[idx] <= 4.0);
    }
}

TEST_CASE("risk_soft_finite_mc: mu = 0 matches tr(Sigma)(1 - 1/L) for identity covariance") {
    const CovarianceModel cov = CovarianceModel::from_matrix(Mat::identity(3));
    const std::size_t L = 10;
    const RiskEval eval = risk_soft_finite_mc(AttnParam(zeros(3), 0.1), cov, L, 60000,
                                              RngStream(44, 0), default_workers());
    const double expected = 3.0 * (1.0 - 1.0 / static_cast<double>(L));
    CHECK(std::abs(eval.value - expected) <= 3.0 * *eval.mc_std_error);
}

TEST_CASE("risk_soft_finite_mc: seed-split self-consistency within 4 SE") {
    const CovarianceModel cov = build_experiment_covariance(5, RngStream(55, 1));
    const Vec mu = sample_unit_sphere(5, RngStream(55, 2));
    const AttnParam param(mu, 0.1);
    const RiskEval a = risk_soft_finite_mc(param, cov, 100, 20000, RngStream(1000, 1),
                                           default_workers());
    const RiskEval b = risk_soft_finite_mc(param, cov, 100, 20000, RngStream(2000, 2),
                                           default_workers());
    const double se = std::hypot(*a.mc_std_error, *b.mc_std_error);
    CHECK(std::abs(a.value - b.value) <= 4.0 * se);
}

TEST_CASE("risk_soft_finite_mc result does not depend on the worker count") {
    const CovarianceModel cov = build_experiment_covariance(3, RngStream(66, 1));
    const AttnParam param(sample_unit_sphere(3, RngStream(66, 2)), 0.2);
    const RiskEval serial = risk_soft_finite_mc(param, cov, 20, 512, RngStream(3, 3), 1);
    const RiskEval threaded = risk_soft_finite_mc(param, cov, 20, 512, RngStream(3, 3), 4);
    CHECK(serial.value == threaded.value);
    CHECK(*serial.mc_std_error == *threaded.mc_std_error);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK((*serial.gradient)[i] == (*threaded.gradient)[i]);
}

TEST_CASE("per-batch empirical softmax gradient matches finite differences on the frozen batch") {
    const CovarianceModel cov = build_experiment_covariance(2, RngStream(77, 1));
    const double lambda = 0.3;
    const std::size_t L = 12, B = 64;

    // Freeze one batch of prompts; the empirical risk is then a fixed smooth
    // function of μ.
    std::vector<Prompt> prompts;
    for (std::size_t b = 0; b < B; ++b)
        prompts.push_back(sample_prompt(cov, L, RngStream(78, b)));

    const auto batch_value = [&](const Vec& m) {
        const AttnParam p(m, lambda);
        double acc = 0.0;
        for (const Prompt& prompt : prompts)
            acc += norm_sq(sub2(prompt.token_vec(0), softmax_attention(prompt, p, 0).value));
        return acc / static_cast<double>(B);
    };
    const auto batch_grad = [&](const Vec& m) {
        const AttnParam p(m, lambda);
        Vec total(2, 0.0), g(2);
        for (const Prompt& prompt : prompts) {
            soft_prompt_loss_grad(prompt, p, g);
            axpy(1.0 / static_cast<double>(B), g, total);
        }
        return total;
    };

    RngStream mu_rng(79, 0);
    for (int trial = 0; trial < 5; ++trial) {
        Vec mu = sample_unit_sphere(2, mu_rng.derive(trial));
        for (double& m : mu) m *= 0.8;
        const Vec analytic = batch_grad(mu);
        const Vec fd = oracles::fd_gradient(batch_value, mu, 1e-5);
        CHECK(oracles::rel_error_vec(analytic, fd) < 1e-4);
    }
}

TEST_CASE("per-prompt linear gradient matches finite differences") {
    const CovarianceModel cov = build_experiment_covariance(3, RngStream(97, 1));
    const double lambda = 0.05;
    const Prompt prompt = sample_prompt(cov, 9, RngStream(98, 2));

    const auto value = [&](const Vec& m) {
        return norm_sq(sub2(prompt.token_vec(0),
                            linear_attention(prompt, AttnParam(m, lambda), 0).value));
    };
    Vec mu = sample_unit_sphere(3, RngStream(99, 3));
    Vec grad(3);
    lin_prompt_loss_grad(prompt, AttnParam(mu, lambda), grad);
    CHECK(oracles::rel_error_vec(grad, oracles::fd_gradient(value, mu, 1e-6)) < 1e-6);
}

TEST_CASE("even symmetry: all four risks invariant under mu -> -mu") {
    const RandomInstance inst = random_instance(3);
    const Vec neg = scaled(inst.mu, -1.0);

    CHECK(risk_soft_inf(AttnParam(inst.mu, inst.lambda), inst.cov).value ==
          risk_soft_inf(AttnParam(neg, inst.lambda), inst.cov).value);
    CHECK(risk_lin_finite(AttnParam(inst.mu, inst.lambda), inst.cov, 8).value ==
          risk_lin_finite(AttnParam(neg, inst.lambda), inst.cov, 8).value);
    const RiskEval mc_plus = risk_soft_finite_mc(AttnParam(inst.mu, inst.lambda), inst.cov,
                                                 10, 256, RngStream(1, 9));
    const RiskEval mc_minus = risk_soft_finite_mc(AttnParam(neg, inst.lambda), inst.cov,
                                                  10, 256, RngStream(1, 9));
    CHECK(mc_plus.value == mc_minus.value);
    const RiskEval inf_plus =
        risk_soft_inf_mc(AttnParam(inst.mu, inst.lambda), inst.cov, 4096, RngStream(2, 9));
    const RiskEval inf_minus =
        risk_soft_inf_mc(AttnParam(neg, inst.lambda), inst.cov, 4096, RngStream(2, 9));
    CHECK(inf_plus.value == inf_minus.value);
}

TEST_CASE("coercivity probe: risk grows along rays past the critical radius") {
    const RandomInstance inst = random_instance(7);
    const Vec direction = normalized(inst.mu);
    double previous = -HUGE_VAL;
    for (double t : {10.0, 100.0, 1000.0}) {
        const double value =
            risk_soft_inf(AttnParam(scaled(direction, t), inst.lambda), inst.cov).value;
        CHECK(value > previous);
        previous = value;
    }
}

TEST_CASE("MC estimator preconditions") {
    const CovarianceModel cov = cov_diag21();
    const AttnParam param({1.0, 0.0}, 1.0);
    CHECK_THROWS_AS(risk_soft_finite_mc(param, cov, 10, 1, RngStream(0, 0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(risk_soft_inf_mc(param, cov, 1, RngStream(0, 0)),
                    std::invalid_argument);
}
