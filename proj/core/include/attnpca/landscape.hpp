// Critical-point enumeration and classification for the closed-form risks,
// predicted local convergence rates, and an empirical check that the
// finite-prompt landscape tracks the infinite-prompt one.
//
// Softmax, infinite prompt: crit = {0} ∪ {±u_j/√(λσ_j)}, with Hessian
// eigenvalues 8λσ_i² along u_i and 2λσ_j(σ_i−σ_j) along u_j≠i.
// Linear, finite prompt: crit = {0} ∪ {±γ*_i u_i} with
//   γ*_i = √[(tr Σ + (L+1)σ_i) / ((λ/L) σ_i (L+2)(tr Σ + (L+3)σ_i))].

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "attnpca/covariance.hpp"
#include "attnpca/linalg.hpp"
#include "attnpca/rng.hpp"

namespace attnpca {

enum class CriticalKind { local_max, strict_saddle, local_min, degenerate };

const char* to_string(CriticalKind kind);

struct CriticalPoint {
    Vec location;
    CriticalKind kind{CriticalKind::degenerate};
    Vec hessian_spectrum;  // ascending
    std::optional<std::size_t> associated_eigenindex;  // 0-based, none at the origin
};

// Classify from Hessian eigenvalue signs with tolerance 1e-8 · max|eigenvalue|.
CriticalKind classify_spectrum(const Vec& spectrum_ascending);

// All 2d+1 critical points of R_soft,∞. Requires a simple spectrum.
std::vector<CriticalPoint> critical_points_soft_inf(const CovarianceModel& cov,
                                                    double lambda);

// All 2d+1 critical points of R_lin,L. Requires a simple spectrum.
std::vector<CriticalPoint> critical_points_lin(const CovarianceModel& cov,
                                               double lambda, std::size_t L);

// s̃ = 2λ min{σ₂(σ₁−σ₂), σ_d(σ₁−σ_d)}: the smallest Hessian eigenvalue at the
// minimizer and the predicted iterate convergence rate.  Requires d ≥ 2.
double predicted_rate_soft_inf(const CovarianceModel& cov, double lambda);

// Finite-prompt landscape verification: from each infinite-prompt critical
// point, root-find on the gradient of a frozen Monte Carlo batch (common
// random numbers per L) and report displacement and classification.
struct FinitePointReport {
    CriticalPoint reference;   // infinite-prompt point
    bool converged{false};
    Vec located;               // root-find result (valid when converged)
    double displacement{0.0};  // ‖μ_L* − μ_∞*‖
    CriticalKind finite_kind{CriticalKind::degenerate};
    bool classification_agrees{false};
    std::string diagnostic;
};

struct FiniteLandscapeReport {
    struct PerLength {
        std::size_t L{0};
        std::vector<FinitePointReport> points;
    };
    std::vector<PerLength> lengths;
};

FiniteLandscapeReport verify_finite_prompt_landscape(
    const CovarianceModel& cov, double lambda, const std::vector<std::size_t>& L_list,
    double radius, std::size_t batch, RngStream rng);

}  // namespace attnpca
