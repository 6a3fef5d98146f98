// Closed-form Gaussian moment identities (Isserlis' theorem) for
// X_1, X_2 i.i.d. N(0, Σ) and a direction μ.  These serve as ground truth
// for the Monte Carlo machinery everywhere else.

#pragma once

#include "attnpca/covariance.hpp"
#include "attnpca/linalg.hpp"

namespace attnpca {

enum class GaussianMoment : int {
    // E[‖X₁‖²] = tr(Σ)
    squared_norm = 1,
    // E[⟨X₁,μ⟩²] = μᵀΣμ
    projection_sq = 2,
    // E[⟨X₁,X₂⟩⟨X₁,μ⟩⟨X₂,μ⟩] = μᵀΣ²μ
    paired_projection = 3,
    // E[⟨X₁,X₂⟩⟨X₁,μ⟩³⟨X₂,μ⟩] = 3(μᵀΣμ)(μᵀΣ²μ)
    paired_cubic_projection = 4,
    // E[⟨X₁,μ⟩²‖X₁‖²] = tr(Σ)(μᵀΣμ) + 2 μᵀΣ²μ
    projection_sq_norm_sq = 5,
    // E[⟨X₁,μ⟩⁴‖X₁‖²] = 3 tr(Σ)(μᵀΣμ)² + 12 (μᵀΣμ)(μᵀΣ²μ)
    projection_quartic_norm_sq = 6,
};

// Throws std::invalid_argument on an unknown kind id.
GaussianMoment gaussian_moment_from_int(int kind);

double gaussian_moment_oracle(GaussianMoment kind, const CovarianceModel& cov,
                              const Vec& mu);
double gaussian_moment_oracle(int kind, const CovarianceModel& cov, const Vec& mu);

}  // namespace attnpca
