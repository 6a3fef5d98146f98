// Reconstruction risks for rank-one attention, finite and infinite prompt.
//
// Closed forms (a = μᵀΣμ, b = μᵀΣ²μ):
//   R_soft,∞(μ) = tr(Σ) − 2λb + λ²ab
//   R_lin,L(μ)  = tr(Σ) − (2λ/L)tr(Σ)a − (2λ(L+1)/L)b
//                 + (λ²/L²)(L+2)tr(Σ)a² + (λ²/L²)(L+2)(L+3)ab
// with analytic gradients and Hessians.  The finite softmax risk has no
// closed form; it is estimated by Monte Carlo with an analytic per-prompt
// gradient obtained by chain rule through the softmax weights.  The risk is
// always evaluated at the first token (query index 0), which by
// exchangeability determines the full objective.

#pragma once

#include <optional>

#include "attnpca/attention.hpp"
#include "attnpca/covariance.hpp"
#include "attnpca/linalg.hpp"
#include "attnpca/rng.hpp"

namespace attnpca {

struct RiskEval {
    double value{0.0};
    std::optional<Vec> gradient;
    std::optional<Mat> hessian;
    std::optional<double> mc_std_error;
};

RiskEval risk_soft_inf(const AttnParam& param, const CovarianceModel& cov);

RiskEval risk_lin_finite(const AttnParam& param, const CovarianceModel& cov,
                         std::size_t L);

// Batch-mean estimate of R_soft,L with standard error (sample std / √B) and
// the batch-averaged analytic per-prompt gradient.  Reductions use a
// deterministic pairwise sum, and prompt b draws from rng.derive(b), so the
// result is independent of the worker count.
RiskEval risk_soft_finite_mc(const AttnParam& param, const CovarianceModel& cov,
                             std::size_t L, std::size_t batches, RngStream rng,
                             unsigned workers = 1);

// Monte Carlo estimate of R_soft,∞ = E‖X − λΣμμᵀX‖²; the sampling oracle
// that validates the closed form.
RiskEval risk_soft_inf_mc(const AttnParam& param, const CovarianceModel& cov,
                          std::size_t samples, RngStream rng, unsigned workers = 1);

// Per-prompt loss ‖X₀ − T_L(X)₀‖² and its analytic μ-gradient, for the
// softmax and linear operators.  Used by the stochastic optimizers.
double soft_prompt_loss_grad(const Prompt& prompt, const AttnParam& param,
                             Vec& grad_out);
double lin_prompt_loss_grad(const Prompt& prompt, const AttnParam& param,
                            Vec& grad_out);

namespace detail {

// Raw-buffer version; workspace must hold 2L doubles, grad_out d doubles.
double soft_loss_grad_query0(const double* tokens, std::size_t L, std::size_t d,
                             const double* mu, double lambda, double* workspace,
                             double* grad_out);
double lin_loss_grad_query0(const double* tokens, std::size_t L, std::size_t d,
                            const double* mu, double lambda, double* workspace,
                            double* grad_out);

}  // namespace detail

}  // namespace attnpca
