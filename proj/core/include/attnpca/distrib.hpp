// Output-distribution diagnostics for the attention encoding.
//
// The trained infinite-prompt operator maps N(0, Σ) to N(0, Γ(μ)) with
// Γ(μ) = λ²(μᵀΣμ)(Σμ)(Σμ)ᵀ, rank one; at μ* = u₁/√(λσ₁) this is σ₁u₁u₁ᵀ.
// Finite-prompt output laws are compared against the limit through a
// Bures–Wasserstein surrogate on second moments plus an exact 1-D projected
// W₂², and a coupled-sampling concentration sweep tracks
// E‖D^k T_L − D^k T_∞‖² against the bound ψ_k(L) = L^{−ε_k}(1+ln L)^{1−ε_k},
// ε_k = 1/(16(k+3)²λ²(μᵀΣμ)² + 1).

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "attnpca/attention.hpp"
#include "attnpca/covariance.hpp"
#include "attnpca/linalg.hpp"
#include "attnpca/rng.hpp"

namespace attnpca {

struct CenteredGaussian {
    Mat covariance;  // symmetric PSD within 1e-10; tiny negatives clamp to 0

    explicit CenteredGaussian(Mat cov);
};

// Γ(μ) = λ²(μᵀΣμ)(Σμ)(Σμ)ᵀ.
CenteredGaussian gamma_of(const Vec& mu, const CovarianceModel& cov, double lambda);

// W₂² between centered Gaussians:
// tr(C₁) + tr(C₂) − 2 tr((C₁^{1/2} C₂ C₁^{1/2})^{1/2}).
double bures_w2(const CenteredGaussian& g1, const CenteredGaussian& g2);

// Empirical second-moment matrix of T_L(X)₁ over independent prompts (the
// law is asymptotically centered, so the mean is not subtracted).
CenteredGaussian empirical_output_law(const CovarianceModel& cov, const AttnParam& param,
                                      std::size_t L, std::size_t n_samples, RngStream rng);

struct ConcentrationRow {
    std::size_t L{0};
    double estimate{0.0};   // MC estimate of E‖D^k T_L − D^k T_∞‖_F²
    double std_error{0.0};
    double bound{0.0};      // ψ_k(L), constant matched at the smallest L
};

struct ConcentrationTable {
    int derivative_level{0};
    std::vector<ConcentrationRow> rows;
    double fitted_slope{0.0};  // log-log slope of estimate vs L
    double epsilon{0.0};       // ε_k for the bound curve
};

// Coupled sampling: the same token stream feeds both operators, and prompts
// at smaller L are prefixes of the prompts at larger L.  Derivative levels
// k = 1, 2 are finite-differenced in μ on the coupled outputs.
ConcentrationTable concentration_sweep(const CovarianceModel& cov, const AttnParam& param,
                                       const std::vector<std::size_t>& L_list,
                                       std::size_t n_samples, RngStream rng,
                                       int derivative_level = 0);

struct W2ProbeRow {
    std::size_t L{0};
    double bures_surrogate{0.0};  // Gaussian-surrogate W₂² on second moments
    double w2_1d{0.0};            // exact empirical W₂² of ⟨T_L, u₁⟩ vs N(0, σ₁)
    double bound{0.0};            // L^{−ε}(1+ln L)^{1−ε}, ε = 1/(144λ²a²+1)
};

// Evaluated at μ* = u₁/√(λσ₁) unless μ is supplied.
std::vector<W2ProbeRow> w2_convergence_probe(const CovarianceModel& cov, double lambda,
                                             const std::vector<std::size_t>& L_list,
                                             std::size_t n_samples, RngStream rng,
                                             const std::optional<Vec>& mu = std::nullopt);

// Standard normal quantile function (Wichura's AS241, double precision).
double normal_quantile(double p);

}  // namespace attnpca
