// Independent oracles used by the test suites.  Everything here is written
// against the definitions, not against the library implementation paths it
// checks: a classic threshold-Jacobi eigensolver, straight-line long-double
// re-implementations of the attention operators, central finite differences,
// and small statistics helpers.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "attnpca/covariance.hpp"
#include "attnpca/linalg.hpp"

namespace oracles {

using attnpca::CovarianceModel;
using attnpca::Mat;
using attnpca::Prompt;
using attnpca::Vec;

// ---------------------------------------------------------------------------
// Threshold Jacobi eigensolver (Numerical-Recipes style sweep schedule),
// independent of the library's cyclic solver.  Returns eigenvalues ascending.
inline std::vector<double> jacobi_eigenvalues_ascending(Mat a) {
    const std::size_t n = a.rows();
    std::vector<double> b(n), d(n), z(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) b[i] = d[i] = a(i, i);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += std::abs(a(p, q));
        if (off == 0.0) break;
        const double thresh = sweep < 3 ? 0.2 * off / static_cast<double>(n * n) : 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double g = 100.0 * std::abs(a(p, q));
                if (sweep > 3 && std::abs(d[p]) + g == std::abs(d[p]) &&
                    std::abs(d[q]) + g == std::abs(d[q])) {
                    a(p, q) = 0.0;
                } else if (std::abs(a(p, q)) > thresh) {
                    double h = d[q] - d[p];
                    double t;
                    if (std::abs(h) + g == std::abs(h)) {
                        t = a(p, q) / h;
                    } else {
                        const double theta = 0.5 * h / a(p, q);
                        t = 1.0 / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                        if (theta < 0.0) t = -t;
                    }
                    const double c = 1.0 / std::sqrt(1.0 + t * t);
                    const double s = t * c;
                    const double tau = s / (1.0 + c);
                    h = t * a(p, q);
                    z[p] -= h;
                    z[q] += h;
                    d[p] -= h;
                    d[q] += h;
                    a(p, q) = 0.0;
                    const auto rotate = [&](std::size_t i, std::size_t j, std::size_t k,
                                            std::size_t l) {
                        const double gij = a(i, j);
                        const double gkl = a(k, l);
                        a(i, j) = gij - s * (gkl + gij * tau);
                        a(k, l) = gkl + s * (gij - gkl * tau);
                    };
                    for (std::size_t j = 0; j < p; ++j) rotate(j, p, j, q);
                    for (std::size_t j = p + 1; j < q; ++j) rotate(p, j, j, q);
                    for (std::size_t j = q + 1; j < n; ++j) rotate(p, j, q, j);
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = 0.0;
        }
    }
    std::sort(d.begin(), d.end());
    return d;
}

// ---------------------------------------------------------------------------
// Straight-line textbook evaluations of the attention operators in extended
// precision, query token included in the sum.
inline Vec softmax_attention_reference(const Prompt& prompt, const Vec& mu,
                                       double lambda, std::size_t query) {
    const std::size_t L = prompt.length;
    const std::size_t d = prompt.dim;
    std::vector<long double> logits(L);
    long double qproj = 0.0L;
    for (std::size_t i = 0; i < d; ++i)
        qproj += static_cast<long double>(prompt.token(query)[i]) * mu[i];
    for (std::size_t k = 0; k < L; ++k) {
        long double kproj = 0.0L;
        for (std::size_t i = 0; i < d; ++i)
            kproj += static_cast<long double>(prompt.token(k)[i]) * mu[i];
        logits[k] = static_cast<long double>(lambda) * qproj * kproj;
    }
    long double denom = 0.0L;
    for (std::size_t k = 0; k < L; ++k) denom += std::exp(logits[k]);
    Vec out(d, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
        const long double w = std::exp(logits[k]) / denom;
        for (std::size_t i = 0; i < d; ++i)
            out[i] += static_cast<double>(w * prompt.token(k)[i]);
    }
    return out;
}

inline Vec linear_attention_reference(const Prompt& prompt, const Vec& mu, double lambda,
                                      std::size_t query) {
    const std::size_t L = prompt.length;
    const std::size_t d = prompt.dim;
    std::vector<long double> out(d, 0.0L);
    long double qproj = 0.0L;
    for (std::size_t i = 0; i < d; ++i)
        qproj += static_cast<long double>(prompt.token(query)[i]) * mu[i];
    for (std::size_t k = 0; k < L; ++k) {
        long double kproj = 0.0L;
        for (std::size_t i = 0; i < d; ++i)
            kproj += static_cast<long double>(prompt.token(k)[i]) * mu[i];
        const long double w = static_cast<long double>(lambda) /
                              static_cast<long double>(L) * qproj * kproj;
        for (std::size_t i = 0; i < d; ++i)
            out[i] += w * static_cast<long double>(prompt.token(k)[i]);
    }
    Vec result(d);
    for (std::size_t i = 0; i < d; ++i) result[i] = static_cast<double>(out[i]);
    return result;
}

// ---------------------------------------------------------------------------
// Central finite differences.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                       double step) {
    Vec grad(x.size());
    Vec probe = x;
    for (std::size_t j = 0; j < x.size(); ++j) {
        probe[j] = x[j] + step;
        const double fp = f(probe);
        probe[j] = x[j] - step;
        const double fm = f(probe);
        probe[j] = x[j];
        grad[j] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& g, const Vec& x,
                       double step) {
    const Vec g0 = g(x);
    Mat jac(g0.size(), x.size());
    Vec probe = x;
    for (std::size_t j = 0; j < x.size(); ++j) {
        probe[j] = x[j] + step;
        const Vec gp = g(probe);
        probe[j] = x[j] - step;
        const Vec gm = g(probe);
        probe[j] = x[j];
        for (std::size_t i = 0; i < g0.size(); ++i)
            jac(i, j) = (gp[i] - gm[i]) / (2.0 * step);
    }
    return jac;
}

inline double rel_error(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double rel_error_vec(const Vec& got, const Vec& want) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    return std::sqrt(num) / std::max(1.0, std::sqrt(den));
}

inline double rel_error_mat(const Mat& got, const Mat& want) {
    Mat diff = got;
    diff -= want;
    return diff.frobenius_norm() / std::max(1.0, want.frobenius_norm());
}

// ---------------------------------------------------------------------------
// Monte Carlo helpers.
struct McEstimate {
    double mean{0.0};
    double std_error{0.0};
};

inline McEstimate mc_mean(const std::vector<double>& samples) {
    McEstimate est;
    est.mean = std::accumulate(samples.begin(), samples.end(), 0.0) /
               static_cast<double>(samples.size());
    double var = 0.0;
    for (double v : samples) var += (v - est.mean) * (v - est.mean);
    var /= static_cast<double>(samples.size() - 1);
    est.std_error = std::sqrt(var / static_cast<double>(samples.size()));
    return est;
}

inline bool within_se(const McEstimate& est, double target, double n_se) {
    return std::abs(est.mean - target) <= n_se * std::max(est.std_error, 1e-300);
}

// Spearman rank correlation (average ranks for ties).
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    const auto ranks = [&](const std::vector<double>& v) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return v[a] < v[b];
        });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> rx = ranks(x), ry = ranks(y);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    return num / std::sqrt(dx * dy);
}

}  // namespace oracles
