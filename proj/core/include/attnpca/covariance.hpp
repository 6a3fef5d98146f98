// Token covariance model and Gaussian prompt sampling.
//
// CovarianceModel owns a symmetric positive definite Σ together with its
// cached eigendecomposition Σ = Σ_j σ_j u_j u_jᵀ (σ_1 ≥ … ≥ σ_d > 0).  All
// products Σv and Σ²v go through the cached factors, so no matrix power is
// ever materialized.  Prompts are ordered batches of L i.i.d. N(0, Σ) tokens
// drawn as X = U diag(√σ) Z.

#pragma once

#include <cstdint>
#include <cstddef>

#include "attnpca/linalg.hpp"
#include "attnpca/rng.hpp"

namespace attnpca {

class CovarianceModel {
public:
    // Validates symmetry (1e-12 relative) and strict positive definiteness.
    static CovarianceModel from_matrix(const Mat& sigma);

    // PSD-tolerant factory for empirical matrices (e.g. rank-deficient
    // Wishart draws): eigenvalues within rounding of zero are clamped to 0.
    static CovarianceModel from_matrix_psd(const Mat& sigma);

    std::size_t dim() const { return dim_; }
    const Mat& matrix() const { return sigma_; }
    const Vec& eigenvalues() const { return eigenvalues_; }
    const Mat& eigenvectors() const { return eigenvectors_; }
    double eigenvalue(std::size_t j) const { return eigenvalues_.at(j); }
    Vec eigenvector(std::size_t j) const { return eigenvectors_.col(j); }
    double trace() const { return trace_; }

    // Σv and Σ²v through the cached eigendecomposition, O(d²) each.
    Vec apply(const Vec& v) const;
    Vec apply_squared(const Vec& v) const;
    // Σ^{1/2} v.
    Vec apply_sqrt(const Vec& v) const;

    // True iff min_j (σ_j − σ_{j+1}) / σ_1 > 1e-8.
    bool simple_spectrum() const;

    // a = μᵀΣμ, b = μᵀΣ²μ.
    struct QuadraticForms {
        double a;
        double b;
    };
    QuadraticForms quadratic_forms(const Vec& mu) const;

    // U diag(√σ): maps standard normals to N(0, Σ).
    const Mat& sampling_factor() const { return sample_factor_; }

private:
    CovarianceModel() = default;
    static CovarianceModel build(const Mat& sigma, bool allow_psd);

    std::size_t dim_{0};
    Mat sigma_;
    Vec eigenvalues_;
    Mat eigenvectors_;
    Mat sample_factor_;
    double trace_{0.0};
};

// Σ = AAᵀ + 0.1 I with A having i.i.d. standard Gaussian entries.
CovarianceModel build_experiment_covariance(std::size_t d, RngStream rng);

// An ordered batch of L tokens in R^d, stored contiguously row-per-token.
struct Prompt {
    std::size_t length{0};
    std::size_t dim{0};
    std::vector<double> data;  // length * dim
    std::uint64_t seed_tag_seed{0};
    std::uint64_t seed_tag_stream{0};

    const double* token(std::size_t l) const { return data.data() + l * dim; }
    double* token(std::size_t l) { return data.data() + l * dim; }
    Vec token_vec(std::size_t l) const {
        return Vec(token(l), token(l) + dim);
    }
};

Prompt sample_prompt(const CovarianceModel& cov, std::size_t L, RngStream rng);

// Hot path: writes L*d doubles into `out` without allocating.
void sample_tokens_into(const CovarianceModel& cov, std::size_t L, RngStream& rng,
                        double* out);

}  // namespace attnpca
