#include "attnpca/covariance.hpp"

#include <cmath>
#include <stdexcept>

namespace attnpca {

CovarianceModel CovarianceModel::build(const Mat& sigma, bool allow_psd) {
    if (sigma.rows() != sigma.cols() || sigma.rows() == 0)
        throw std::invalid_argument("CovarianceModel: matrix must be square and nonempty");
    if (!sigma.is_symmetric(1e-12))
        throw std::invalid_argument("CovarianceModel: matrix not symmetric within 1e-12");

    CovarianceModel model;
    model.sigma_ = sigma.symmetrized();
    model.dim_ = sigma.rows();

    SymmetricEigen eig = jacobi_eigendecompose(model.sigma_);
    if (allow_psd) {
        const double tol = 1e-10 * std::max(eig.eigenvalues.front(), 1.0);
        for (double& v : eig.eigenvalues) {
            if (v < -tol)
                throw std::invalid_argument("CovarianceModel: matrix not positive semidefinite");
            if (v < 0.0) v = 0.0;
        }
    } else if (eig.eigenvalues.back() <= 0.0) {
        throw std::invalid_argument("CovarianceModel: matrix not positive definite");
    }

    model.eigenvalues_ = std::move(eig.eigenvalues);
    model.eigenvectors_ = std::move(eig.eigenvectors);
    model.trace_ = model.sigma_.trace();

    model.sample_factor_ = model.eigenvectors_;
    for (std::size_t j = 0; j < model.dim_; ++j) {
        const double root = std::sqrt(model.eigenvalues_[j]);
        for (std::size_t i = 0; i < model.dim_; ++i) model.sample_factor_(i, j) *= root;
    }
    return model;
}

CovarianceModel CovarianceModel::from_matrix(const Mat& sigma) {
    return build(sigma, false);
}

CovarianceModel CovarianceModel::from_matrix_psd(const Mat& sigma) {
    return build(sigma, true);
}

Vec CovarianceModel::apply(const Vec& v) const {
    Vec t = eigenvectors_.matvec_transposed(v);
    for (std::size_t j = 0; j < dim_; ++j) t[j] *= eigenvalues_[j];
    return eigenvectors_.matvec(t);
}

Vec CovarianceModel::apply_squared(const Vec& v) const {
    Vec t = eigenvectors_.matvec_transposed(v);
    for (std::size_t j = 0; j < dim_; ++j) t[j] *= eigenvalues_[j] * eigenvalues_[j];
    return eigenvectors_.matvec(t);
}

Vec CovarianceModel::apply_sqrt(const Vec& v) const {
    Vec t = eigenvectors_.matvec_transposed(v);
    for (std::size_t j = 0; j < dim_; ++j) t[j] *= std::sqrt(eigenvalues_[j]);
    return eigenvectors_.matvec(t);
}

bool CovarianceModel::simple_spectrum() const {
    if (dim_ == 1) return true;
    double min_gap = eigenvalues_[0] - eigenvalues_[1];
    for (std::size_t j = 1; j + 1 < dim_; ++j)
        min_gap = std::min(min_gap, eigenvalues_[j] - eigenvalues_[j + 1]);
    return min_gap / eigenvalues_[0] > 1e-8;
}

CovarianceModel::QuadraticForms CovarianceModel::quadratic_forms(const Vec& mu) const {
    Vec t = eigenvectors_.matvec_transposed(mu);
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
        const double tj2 = t[j] * t[j];
        a += eigenvalues_[j] * tj2;
        b += eigenvalues_[j] * eigenvalues_[j] * tj2;
    }
    return {a, b};
}

CovarianceModel build_experiment_covariance(std::size_t d, RngStream rng) {
    if (d == 0) throw std::invalid_argument("build_experiment_covariance: d must be >= 1");
    Mat a(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) a(i, j) = rng.normal();

    Mat sigma(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += a(i, k) * a(j, k);
            sigma(i, j) = s;
            sigma(j, i) = s;
        }
        sigma(i, i) += 0.1;
    }
    return CovarianceModel::from_matrix(sigma);
}

Prompt sample_prompt(const CovarianceModel& cov, std::size_t L, RngStream rng) {
    if (L == 0) throw std::invalid_argument("sample_prompt: L must be >= 1");
    Prompt prompt;
    prompt.length = L;
    prompt.dim = cov.dim();
    prompt.data.resize(L * cov.dim());
    prompt.seed_tag_seed = rng.seed();
    prompt.seed_tag_stream = rng.stream_id();
    sample_tokens_into(cov, L, rng, prompt.data.data());
    return prompt;
}

void sample_tokens_into(const CovarianceModel& cov, std::size_t L, RngStream& rng,
                        double* out) {
    const std::size_t d = cov.dim();
    const Mat& factor = cov.sampling_factor();
    double z[512];
    if (d > 512) throw std::invalid_argument("sample_tokens_into: dimension too large");
    for (std::size_t l = 0; l < L; ++l) {
        rng.fill_normal(z, d);
        double* x = out + l * d;
        for (std::size_t i = 0; i < d; ++i) {
            const double* frow = factor.row(i);
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += frow[j] * z[j];
            x[i] = s;
        }
    }
}

}  // namespace attnpca
