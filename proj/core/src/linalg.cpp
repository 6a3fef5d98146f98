#include "attnpca/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace attnpca {

double dot(const Vec& x, const Vec& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double norm_sq(const Vec& x) { return dot(x, x); }

double norm(const Vec& x) { return std::sqrt(norm_sq(x)); }

Vec scaled(const Vec& x, double alpha) {
    Vec out(x);
    for (double& v : out) v *= alpha;
    return out;
}

Vec add(const Vec& x, const Vec& y) {
    Vec out(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return out;
}

Vec sub(const Vec& x, const Vec& y) {
    Vec out(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    return out;
}

void axpy(double alpha, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

Vec normalized(const Vec& x) {
    const double n = norm(x);
    if (n == 0.0) throw std::invalid_argument("normalized: zero vector");
    return scaled(x, 1.0 / n);
}

Vec zeros(std::size_t n) { return Vec(n, 0.0); }

Vec unit_vector(std::size_t n, std::size_t index) {
    Vec e(n, 0.0);
    e.at(index) = 1.0;
    return e;
}

double pairwise_sum(const double* values, std::size_t n) {
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += values[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(values, half) + pairwise_sum(values + half, n - half);
}

double pairwise_sum(const Vec& values) { return pairwise_sum(values.data(), values.size()); }

double pairwise_mean(const Vec& values) {
    if (values.empty()) throw std::invalid_argument("pairwise_mean: empty input");
    return pairwise_sum(values) / static_cast<double>(values.size());
}

Mat Mat::identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::diagonal(const Vec& entries) {
    Mat m(entries.size(), entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) m(i, i) = entries[i];
    return m;
}

Vec Mat::matvec(const Vec& x) const {
    if (x.size() != cols_) throw std::invalid_argument("matvec: dimension mismatch");
    Vec y(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
        const double* r = row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < cols_; ++j) s += r[j] * x[j];
        y[i] = s;
    }
    return y;
}

Vec Mat::matvec_transposed(const Vec& x) const {
    if (x.size() != rows_) throw std::invalid_argument("matvec_transposed: dimension mismatch");
    Vec y(cols_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
        const double* r = row(i);
        const double xi = x[i];
        for (std::size_t j = 0; j < cols_; ++j) y[j] += r[j] * xi;
    }
    return y;
}

Mat Mat::matmul(const Mat& other) const {
    if (cols_ != other.rows_) throw std::invalid_argument("matmul: dimension mismatch");
    Mat out(rows_, other.cols_);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t k = 0; k < cols_; ++k) {
            const double aik = (*this)(i, k);
            if (aik == 0.0) continue;
            const double* br = other.row(k);
            double* orow = out.row(i);
            for (std::size_t j = 0; j < other.cols_; ++j) orow[j] += aik * br[j];
        }
    }
    return out;
}

Mat Mat::transposed() const {
    Mat out(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
    return out;
}

Vec Mat::col(std::size_t j) const {
    Vec v(rows_);
    for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
    return v;
}

void Mat::set_col(std::size_t j, const Vec& v) {
    if (v.size() != rows_) throw std::invalid_argument("set_col: dimension mismatch");
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
}

Mat& Mat::operator+=(const Mat& other) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Mat& Mat::operator-=(const Mat& other) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Mat& Mat::operator*=(double alpha) {
    for (double& v : data_) v *= alpha;
    return *this;
}

double Mat::frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

double Mat::trace() const {
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) s += (*this)(i, i);
    return s;
}

double Mat::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

bool Mat::is_symmetric(double rel_tol) const {
    if (rows_ != cols_) return false;
    const double scale = std::max(max_abs(), 1e-300);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = i + 1; j < cols_; ++j)
            if (std::abs((*this)(i, j) - (*this)(j, i)) > rel_tol * scale) return false;
    return true;
}

Mat Mat::symmetrized() const {
    Mat out(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j)
            out(i, j) = 0.5 * ((*this)(i, j) + (*this)(j, i));
    return out;
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(Mat a, double alpha) { return a *= alpha; }

Mat outer(const Vec& x, const Vec& y) {
    Mat out(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) out(i, j) = x[i] * y[j];
    return out;
}

namespace {

double off_diagonal_norm(const Mat& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
}

}  // namespace

SymmetricEigen jacobi_eigendecompose(const Mat& symmetric, int max_sweeps) {
    if (symmetric.rows() != symmetric.cols())
        throw std::invalid_argument("jacobi_eigendecompose: matrix not square");
    if (!symmetric.is_symmetric(1e-12))
        throw std::invalid_argument("jacobi_eigendecompose: matrix not symmetric");

    const std::size_t n = symmetric.rows();
    Mat a = symmetric.symmetrized();
    Mat v = Mat::identity(n);

    const double frob = std::max(a.frobenius_norm(), 1e-300);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (off_diagonal_norm(a) <= 1e-15 * frob) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);

                const double h = t * apq;
                a(p, p) -= h;
                a(q, q) += h;
                a(p, q) = 0.0;
                a(q, p) = 0.0;

                for (std::size_t j = 0; j < n; ++j) {
                    if (j == p || j == q) continue;
                    const double ajp = a(j, p);
                    const double ajq = a(j, q);
                    a(j, p) = ajp - s * (ajq + tau * ajp);
                    a(p, j) = a(j, p);
                    a(j, q) = ajq + s * (ajp - tau * ajq);
                    a(q, j) = a(j, q);
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const double vjp = v(j, p);
                    const double vjq = v(j, q);
                    v(j, p) = vjp - s * (vjq + tau * vjp);
                    v(j, q) = vjq + s * (vjp - tau * vjq);
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Vec diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return diag[i] > diag[j]; });

    SymmetricEigen out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Mat(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        out.eigenvalues[k] = diag[order[k]];
        Vec column = v.col(order[k]);
        // Sign convention: largest-magnitude entry positive.
        std::size_t arg = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (std::abs(column[i]) > std::abs(column[arg])) arg = i;
        if (column[arg] < 0.0)
            for (double& x : column) x = -x;
        out.eigenvectors.set_col(k, column);
    }
    return out;
}

Vec symmetric_eigenvalues_ascending(const Mat& symmetric) {
    Vec vals = jacobi_eigendecompose(symmetric).eigenvalues;
    std::reverse(vals.begin(), vals.end());
    return vals;
}

std::string format_vec(const Vec& v) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ", ";
        os << v[i];
    }
    os << "]";
    return os.str();
}

}  // namespace attnpca
