#include "attnpca/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "attnpca/risk.hpp"

namespace attnpca {

const char* to_string(CriticalKind kind) {
    switch (kind) {
        case CriticalKind::local_max: return "local_max";
        case CriticalKind::strict_saddle: return "strict_saddle";
        case CriticalKind::local_min: return "local_min";
        case CriticalKind::degenerate: return "degenerate";
    }
    return "unknown";
}

CriticalKind classify_spectrum(const Vec& spectrum_ascending) {
    double max_abs = 0.0;
    for (double v : spectrum_ascending) max_abs = std::max(max_abs, std::abs(v));
    const double tol = 1e-8 * max_abs;

    bool has_pos = false, has_neg = false, has_zero = false;
    for (double v : spectrum_ascending) {
        if (v > tol)
            has_pos = true;
        else if (v < -tol)
            has_neg = true;
        else
            has_zero = true;
    }
    if (has_zero) return CriticalKind::degenerate;
    if (has_pos && has_neg) return CriticalKind::strict_saddle;
    if (has_pos) return CriticalKind::local_min;
    return CriticalKind::local_max;
}

namespace {

void require_simple_spectrum(const CovarianceModel& cov, const char* where) {
    if (!cov.simple_spectrum())
        throw std::invalid_argument(std::string(where) +
                                    ": spectrum is not simple (relative gap <= 1e-8); "
                                    "critical-point formulas assume distinct eigenvalues");
}

CriticalPoint make_point(Vec location, Vec spectrum,
                         std::optional<std::size_t> eigenindex) {
    std::sort(spectrum.begin(), spectrum.end());
    CriticalPoint p;
    p.kind = classify_spectrum(spectrum);
    p.location = std::move(location);
    p.hessian_spectrum = std::move(spectrum);
    p.associated_eigenindex = eigenindex;
    return p;
}

}  // namespace

std::vector<CriticalPoint> critical_points_soft_inf(const CovarianceModel& cov,
                                                    double lambda) {
    require_simple_spectrum(cov, "critical_points_soft_inf");
    const std::size_t d = cov.dim();
    std::vector<CriticalPoint> points;
    points.reserve(2 * d + 1);

    // Origin: ∇² = −4λΣ².
    Vec origin_spec(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double s = cov.eigenvalue(j);
        origin_spec[j] = -4.0 * lambda * s * s;
    }
    points.push_back(make_point(zeros(d), origin_spec, std::nullopt));

    for (std::size_t i = 0; i < d; ++i) {
        const double si = cov.eigenvalue(i);
        const double radius = 1.0 / std::sqrt(lambda * si);
        Vec spectrum(d);
        for (std::size_t j = 0; j < d; ++j) {
            spectrum[j] = (j == i) ? 8.0 * lambda * si * si
                                   : 2.0 * lambda * cov.eigenvalue(j) * (si - cov.eigenvalue(j));
        }
        const Vec u = cov.eigenvector(i);
        points.push_back(make_point(scaled(u, radius), spectrum, i));
        points.push_back(make_point(scaled(u, -radius), spectrum, i));
    }
    return points;
}

std::vector<CriticalPoint> critical_points_lin(const CovarianceModel& cov,
                                               double lambda, std::size_t L) {
    require_simple_spectrum(cov, "critical_points_lin");
    if (L == 0) throw std::invalid_argument("critical_points_lin: L must be >= 1");
    const std::size_t d = cov.dim();
    const double len = static_cast<double>(L);
    const double tr = cov.trace();
    std::vector<CriticalPoint> points;
    points.reserve(2 * d + 1);

    // Origin: ∇² = −4(λ/L) Σ (tr(Σ) I + (L+1) Σ).
    Vec origin_spec(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double s = cov.eigenvalue(j);
        origin_spec[j] = -4.0 * (lambda / len) * s * (tr + (len + 1.0) * s);
    }
    points.push_back(make_point(zeros(d), origin_spec, std::nullopt));

    for (std::size_t i = 0; i < d; ++i) {
        const double si = cov.eigenvalue(i);
        const double gamma = std::sqrt((tr + (len + 1.0) * si) /
                                       ((lambda / len) * si * (len + 2.0) *
                                        (tr + (len + 3.0) * si)));
        Vec spectrum(d);
        for (std::size_t j = 0; j < d; ++j) {
            if (j == i) {
                spectrum[j] = 8.0 * (lambda / len) * si * (tr + (len + 1.0) * si);
            } else {
                const double sj = cov.eigenvalue(j);
                spectrum[j] = 2.0 * (lambda / len) * sj * (si - sj) *
                              ((len - 1.0) * tr + (len + 1.0) * (len + 3.0) * si) /
                              (tr + (len + 3.0) * si);
            }
        }
        const Vec u = cov.eigenvector(i);
        points.push_back(make_point(scaled(u, gamma), spectrum, i));
        points.push_back(make_point(scaled(u, -gamma), spectrum, i));
    }
    return points;
}

double predicted_rate_soft_inf(const CovarianceModel& cov, double lambda) {
    if (cov.dim() < 2)
        throw std::invalid_argument(
            "predicted_rate_soft_inf: d must be >= 2 (the rate references sigma_2)");
    require_simple_spectrum(cov, "predicted_rate_soft_inf");
    const double s1 = cov.eigenvalue(0);
    const double s2 = cov.eigenvalue(1);
    const double sd = cov.eigenvalue(cov.dim() - 1);
    return 2.0 * lambda * std::min(s2 * (s1 - s2), sd * (s1 - sd));
}

namespace {

// Gradient of the frozen-batch empirical softmax risk; a fixed smooth
// function of μ once the batch is frozen.
class FrozenBatchGradient {
public:
    FrozenBatchGradient(const CovarianceModel& cov, double lambda, std::size_t L,
                        std::size_t batch, RngStream rng)
        : dim_(cov.dim()), L_(L), lambda_(lambda), tokens_(batch * L * cov.dim()) {
        // Substream per prompt, so prompts for smaller L are prefixes of the
        // prompts drawn for larger L from the same parent stream.
        for (std::size_t b = 0; b < batch; ++b) {
            RngStream sub = rng.derive(b);
            sample_tokens_into(cov, L, sub, tokens_.data() + b * L * cov.dim());
        }
        batch_ = batch;
    }

    Vec gradient(const Vec& mu) const {
        Vec total(dim_, 0.0);
        Vec grad(dim_);
        Vec workspace(2 * L_);
        for (std::size_t b = 0; b < batch_; ++b) {
            detail::soft_loss_grad_query0(tokens_.data() + b * L_ * dim_, L_, dim_,
                                          mu.data(), lambda_, workspace.data(),
                                          grad.data());
            for (std::size_t i = 0; i < dim_; ++i) total[i] += grad[i];
        }
        const double inv = 1.0 / static_cast<double>(batch_);
        for (double& v : total) v *= inv;
        return total;
    }

    Mat hessian_fd(const Vec& mu) const {
        const double h = 1e-5 * (1.0 + norm(mu));
        Mat hess(dim_, dim_);
        Vec probe = mu;
        for (std::size_t j = 0; j < dim_; ++j) {
            probe[j] = mu[j] + h;
            const Vec gp = gradient(probe);
            probe[j] = mu[j] - h;
            const Vec gm = gradient(probe);
            probe[j] = mu[j];
            for (std::size_t i = 0; i < dim_; ++i)
                hess(i, j) = (gp[i] - gm[i]) / (2.0 * h);
        }
        return hess.symmetrized();
    }

private:
    std::size_t dim_;
    std::size_t L_;
    double lambda_;
    std::vector<double> tokens_;
    std::size_t batch_{0};
};

}  // namespace

FiniteLandscapeReport verify_finite_prompt_landscape(
    const CovarianceModel& cov, double lambda, const std::vector<std::size_t>& L_list,
    double radius, std::size_t batch, RngStream rng) {
    if (batch < 2)
        throw std::invalid_argument("verify_finite_prompt_landscape: batch must be >= 2");

    const std::vector<CriticalPoint> references = critical_points_soft_inf(cov, lambda);

    FiniteLandscapeReport report;
    for (std::size_t li = 0; li < L_list.size(); ++li) {
        const std::size_t L = L_list[li];
        FrozenBatchGradient frozen(cov, lambda, L, batch, rng);

        FiniteLandscapeReport::PerLength per_length;
        per_length.L = L;
        for (const CriticalPoint& ref : references) {
            if (norm(ref.location) > radius) continue;

            FinitePointReport point_report;
            point_report.reference = ref;

            // Damped Newton on the sampled gradient, 50-iteration cap.
            Vec mu = ref.location;
            bool converged = false;
            const double tol = 1e-10 * (1.0 + std::abs(cov.trace()));
            for (int iter = 0; iter < 50; ++iter) {
                const Vec g = frozen.gradient(mu);
                const double gnorm = norm(g);
                if (gnorm < tol) {
                    converged = true;
                    break;
                }
                const Mat hess = frozen.hessian_fd(mu);
                SymmetricEigen eig = jacobi_eigendecompose(hess);
                double max_abs_eig = 0.0;
                for (double v : eig.eigenvalues)
                    max_abs_eig = std::max(max_abs_eig, std::abs(v));
                if (max_abs_eig == 0.0) {
                    point_report.diagnostic = "singular sampled Hessian";
                    break;
                }
                // step = H⁻¹ g through the eigenbasis.
                Vec coeffs = eig.eigenvectors.matvec_transposed(g);
                bool singular = false;
                for (std::size_t j = 0; j < coeffs.size(); ++j) {
                    if (std::abs(eig.eigenvalues[j]) < 1e-12 * max_abs_eig) {
                        singular = true;
                        break;
                    }
                    coeffs[j] /= eig.eigenvalues[j];
                }
                if (singular) {
                    point_report.diagnostic = "near-singular sampled Hessian";
                    break;
                }
                Vec step = eig.eigenvectors.matvec(coeffs);

                double damping = 1.0;
                bool improved = false;
                for (int halving = 0; halving < 30; ++halving) {
                    Vec candidate = mu;
                    axpy(-damping, step, candidate);
                    if (norm(frozen.gradient(candidate)) < gnorm) {
                        mu = std::move(candidate);
                        improved = true;
                        break;
                    }
                    damping *= 0.5;
                }
                if (!improved) {
                    point_report.diagnostic = "damped Newton stalled";
                    break;
                }
            }

            point_report.converged = converged;
            if (converged) {
                point_report.located = mu;
                point_report.displacement = norm(sub(mu, ref.location));
                Vec spectrum = jacobi_eigendecompose(frozen.hessian_fd(mu)).eigenvalues;
                std::sort(spectrum.begin(), spectrum.end());
                point_report.finite_kind = classify_spectrum(spectrum);
                point_report.classification_agrees = point_report.finite_kind == ref.kind;
            } else if (point_report.diagnostic.empty()) {
                point_report.diagnostic = "root-find did not converge within 50 iterations";
            }
            per_length.points.push_back(std::move(point_report));
        }
        report.lengths.push_back(std::move(per_length));
    }
    return report;
}

}  // namespace attnpca
