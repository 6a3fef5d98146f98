// Dense double-precision vectors and matrices sized for d up to a few
// hundred, plus a cyclic Jacobi eigensolver for symmetric matrices.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace attnpca {

using Vec = std::vector<double>;

double dot(const Vec& x, const Vec& y);
double norm_sq(const Vec& x);
double norm(const Vec& x);
Vec scaled(const Vec& x, double alpha);
Vec add(const Vec& x, const Vec& y);
Vec sub(const Vec& x, const Vec& y);
// y += alpha * x
void axpy(double alpha, const Vec& x, Vec& y);
Vec normalized(const Vec& x);
Vec zeros(std::size_t n);
Vec unit_vector(std::size_t n, std::size_t index);

// Sums values in deterministic pairwise order; the result does not depend on
// how the work that produced `values` was scheduled.
double pairwise_sum(const double* values, std::size_t n);
double pairwise_sum(const Vec& values);
double pairwise_mean(const Vec& values);

// Row-major dense matrix.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Mat identity(std::size_t n);
    static Mat diagonal(const Vec& entries);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    Vec matvec(const Vec& x) const;
    // yᵀ = xᵀ M, i.e. Mᵀ x without forming the transpose.
    Vec matvec_transposed(const Vec& x) const;
    Mat matmul(const Mat& other) const;
    Mat transposed() const;

    Vec col(std::size_t j) const;
    void set_col(std::size_t j, const Vec& v);

    Mat& operator+=(const Mat& other);
    Mat& operator-=(const Mat& other);
    Mat& operator*=(double alpha);

    double frobenius_norm() const;
    double trace() const;
    double max_abs() const;
    bool is_symmetric(double rel_tol) const;
    // Enforce exact symmetry: (M + Mᵀ)/2.
    Mat symmetrized() const;

    const std::vector<double>& data() const { return data_; }

private:
    std::size_t rows_{0};
    std::size_t cols_{0};
    std::vector<double> data_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(Mat a, double alpha);
Mat outer(const Vec& x, const Vec& y);

struct SymmetricEigen {
    Vec eigenvalues;   // descending
    Mat eigenvectors;  // orthonormal columns, matching order
};

// Cyclic Jacobi rotations on a symmetric matrix.  Eigenvalues come back in
// descending order; each eigenvector is sign-fixed so its entry of largest
// magnitude is positive.
SymmetricEigen jacobi_eigendecompose(const Mat& symmetric, int max_sweeps = 64);

// Eigenvalues of a symmetric matrix in ascending order (no vectors).
Vec symmetric_eigenvalues_ascending(const Mat& symmetric);

std::string format_vec(const Vec& v);

}  // namespace attnpca
