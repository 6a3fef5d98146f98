// Rank-one attention operators on Gaussian prompts.
//
// The trainable parameter is a single vector μ with inverse temperature λ:
//   softmax:  T_L(X)_ℓ = Σ_k softmax_k(λ ⟨X_ℓ,μ⟩⟨X_k,μ⟩) X_k
//   linear:   T_L(X)_ℓ = (λ/L) Σ_k ⟨X_ℓ,μ⟩⟨X_k,μ⟩ X_k
//   limit:    T_∞(x)    = λ Σ μ μᵀ x
// The query token always participates in its own sum (k runs over all L
// tokens).  Query positions are 0-based; the first token is index 0.

#pragma once

#include "attnpca/covariance.hpp"
#include "attnpca/linalg.hpp"

namespace attnpca {

struct AttnParam {
    Vec mu;
    double lambda{1.0};  // must be > 0

    AttnParam(Vec mu_in, double lambda_in);
};

struct AttnOutput {
    Vec value;
    std::size_t query_index{0};
};

// Softmax weights at the given query, computed with max-logit subtraction.
// Weights are nonnegative and sum to 1 up to rounding.
Vec softmax_weights(const Prompt& prompt, const AttnParam& param,
                    std::size_t query_index);

AttnOutput softmax_attention(const Prompt& prompt, const AttnParam& param,
                             std::size_t query_index);

AttnOutput linear_attention(const Prompt& prompt, const AttnParam& param,
                            std::size_t query_index);

// Infinite-prompt limit λ Σ μ μᵀ x shared by both finite operators.
Vec infinite_attention(const Vec& x, const AttnParam& param,
                       const CovarianceModel& cov);

namespace detail {

// Allocation-free softmax output at query 0 over raw token storage; used by
// the Monte Carlo estimators.  `proj` and `weights` must hold L doubles,
// `out` d doubles.
void softmax_output_query0(const double* tokens, std::size_t L, std::size_t d,
                           const double* mu, double lambda, double* proj,
                           double* weights, double* out);

}  // namespace detail

}  // namespace attnpca
