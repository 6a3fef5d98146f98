// Spiked-Wishart in-context setting.
//
// The covariance is random, Σ ~ W_d(V, n) with V = ξ²I + θvvᵀ, ‖v‖ = 1.
// Averaging the fixed-Σ infinite-prompt risk over Σ gives a closed form in
// (r², α²) with r = ‖μ‖ and α = ⟨μ, v⟩:
//   R_∞(μ) = n tr(V) − 2λn[(n+1)μᵀV²μ + tr(V)μᵀVμ]
//            + λ²n(n+2)[(n+3)(μᵀVμ)(μᵀV²μ) + (μᵀVμ)² tr(V)]
// whose gradient is 2(A(r,α)μ + B(r,α)αv) with A = a₁r² + a₂α² − a₃,
// B = b₁r² + b₂α² − b₃ and coefficients polynomial in (ξ², θ, λ, n, d).
// The global minimizers are ±α*v with α* = √((a₃+b₃)/(a₁+2a₂+b₂)).

#pragma once

#include <cstddef>
#include <vector>

#include "attnpca/covariance.hpp"
#include "attnpca/landscape.hpp"
#include "attnpca/linalg.hpp"
#include "attnpca/optim.hpp"
#include "attnpca/risk.hpp"
#include "attnpca/rng.hpp"

namespace attnpca {

class SpikedWishartModel {
public:
    // Requires ξ² > 0, θ > 0, n ≥ 1, ‖v‖ = 1 within 1e-12.
    SpikedWishartModel(double xi2, double theta, Vec spike, std::size_t dof);

    double xi2() const { return xi2_; }
    double theta() const { return theta_; }
    const Vec& spike() const { return spike_; }
    std::size_t dof() const { return dof_; }
    std::size_t dim() const { return spike_.size(); }

    double trace_v() const;        // tr(V) = dξ² + θ
    Mat scale_matrix() const;      // V = ξ²I + θvvᵀ
    Vec apply_v(const Vec& x) const;
    // μᵀVμ and μᵀV²μ through (r², α²).
    double quad_v(const Vec& mu) const;
    double quad_v2(const Vec& mu) const;
    // N(0, V) draw via V^{1/2} = ξI + (√(ξ²+θ) − ξ)vvᵀ.
    void sample_gaussian(RngStream& rng, double* out) const;

private:
    double xi2_;
    double theta_;
    Vec spike_;
    std::size_t dof_;
};

// Σ as the sum of n outer products of i.i.d. N(0, V) draws.  Warns on
// stderr when n < d (Σ is then singular almost surely).
CovarianceModel wishart_sample(const SpikedWishartModel& model, RngStream rng);

struct WishartMoments {
    double m1;  // E[tr Σ] = n tr V
    double m2;  // E[μᵀΣ²μ] = n(n+1)μᵀV²μ + n tr(V) μᵀVμ
    double m3;  // E[(μᵀΣμ)(μᵀΣ²μ)] = n(n+2)[(n+3)(μᵀVμ)(μᵀV²μ) + (μᵀVμ)² tr V]
};

WishartMoments wishart_moments(const SpikedWishartModel& model, const Vec& mu);

struct IclCoefficients {
    double a1, a2, a3, b1, b2, b3;  // all > 0; b1 == a2 identically
};

IclCoefficients icl_coefficients(const SpikedWishartModel& model, double lambda);

// Closed-form infinite-prompt ICL risk with gradient and Hessian.
RiskEval risk_icl_inf(const Vec& mu, const SpikedWishartModel& model, double lambda);

// α* = √((a₃+b₃)/(a₁+2a₂+b₂)); ±α*v are the global minimizers.
double alpha_star(const IclCoefficients& coeffs);

struct IclRate {
    double exact;                // Hessian σ_min at ±α*v
    double small_xi_asymptotic;  // 2λn(n²+5n+2)θξ²/(n+4)
};

IclRate predicted_rate_icl(const SpikedWishartModel& model, double lambda);

// Critical families: origin (max), ±α*v (minima), and 2(d−1) canonical
// representatives of the orthogonal sphere r² = a₃/a₁ (saddles with d−2 zero
// Hessian eigenvalues, labeled strict_saddle with the zeros recorded).
struct IclCriticalSet {
    CriticalPoint origin;
    CriticalPoint aligned_plus;
    CriticalPoint aligned_minus;
    std::vector<CriticalPoint> orthogonal;
};

IclCriticalSet icl_landscape(const SpikedWishartModel& model, double lambda);

// Nested Monte Carlo for R_L^ICL: n_sigma Wishart draws, n_prompt prompts
// each.  Standard error is computed at the outer (Σ) level and only when
// n_sigma ≥ 2; n_sigma = 1 reduces to the fixed-Σ finite risk.
RiskEval risk_icl_finite_mc(const Vec& mu, const SpikedWishartModel& model,
                            double lambda, std::size_t L, std::size_t n_sigma,
                            std::size_t n_prompt, RngStream rng, unsigned workers = 1);

// SGD on the finite-prompt ICL risk: each batch element draws a fresh Σ and
// one prompt from it.  Alignment is tracked against the spike direction.
OptTrace icl_sgd(const SpikedWishartModel& model, double lambda,
                 const OptimizerConfig& config);

Objective make_icl_inf_objective(const SpikedWishartModel& model, double lambda);

}  // namespace attnpca
