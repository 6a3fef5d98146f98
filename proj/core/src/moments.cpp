#include "attnpca/moments.hpp"

#include <stdexcept>
#include <string>

namespace attnpca {

GaussianMoment gaussian_moment_from_int(int kind) {
    if (kind < 1 || kind > 6)
        throw std::invalid_argument("gaussian_moment_oracle: unknown moment kind " +
                                    std::to_string(kind) + " (expected 1..6)");
    return static_cast<GaussianMoment>(kind);
}

double gaussian_moment_oracle(GaussianMoment kind, const CovarianceModel& cov,
                              const Vec& mu) {
    if (mu.size() != cov.dim())
        throw std::invalid_argument("gaussian_moment_oracle: mu dimension mismatch");
    const auto [a, b] = cov.quadratic_forms(mu);
    const double tr = cov.trace();
    switch (kind) {
        case GaussianMoment::squared_norm: return tr;
        case GaussianMoment::projection_sq: return a;
        case GaussianMoment::paired_projection: return b;
        case GaussianMoment::paired_cubic_projection: return 3.0 * a * b;
        case GaussianMoment::projection_sq_norm_sq: return tr * a + 2.0 * b;
        case GaussianMoment::projection_quartic_norm_sq:
            return 3.0 * tr * a * a + 12.0 * a * b;
    }
    throw std::invalid_argument("gaussian_moment_oracle: unknown moment kind");
}

double gaussian_moment_oracle(int kind, const CovarianceModel& cov, const Vec& mu) {
    return gaussian_moment_oracle(gaussian_moment_from_int(kind), cov, mu);
}

}  // namespace attnpca
