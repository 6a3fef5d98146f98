#include "attnpca/distrib.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace attnpca {

CenteredGaussian::CenteredGaussian(Mat cov) : covariance(std::move(cov)) {
    if (covariance.rows() != covariance.cols())
        throw std::invalid_argument("CenteredGaussian: covariance must be square");
    if (!covariance.is_symmetric(1e-10))
        throw std::invalid_argument("CenteredGaussian: covariance not symmetric within 1e-10");
}

CenteredGaussian gamma_of(const Vec& mu, const CovarianceModel& cov, double lambda) {
    if (mu.size() != cov.dim())
        throw std::invalid_argument("gamma_of: dimension mismatch");
    const auto [a, b] = cov.quadratic_forms(mu);
    (void)b;
    const Vec sigma_mu = cov.apply(mu);
    Mat gamma = outer(sigma_mu, sigma_mu);
    gamma *= lambda * lambda * a;
    return CenteredGaussian(std::move(gamma));
}

namespace {

// U diag(√max(σ,0)) Uᵀ
Mat psd_sqrt(const Mat& m) {
    SymmetricEigen eig = jacobi_eigendecompose(m);
    Mat scaled_u = eig.eigenvectors;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        const double root = std::sqrt(std::max(eig.eigenvalues[j], 0.0));
        for (std::size_t i = 0; i < m.rows(); ++i) scaled_u(i, j) *= root;
    }
    return scaled_u.matmul(eig.eigenvectors.transposed());
}

double trace_of_psd_sqrt(const Mat& m) {
    const Vec eigs = jacobi_eigendecompose(m.symmetrized()).eigenvalues;
    double tr = 0.0;
    for (double v : eigs) tr += std::sqrt(std::max(v, 0.0));
    return tr;
}

}  // namespace

double bures_w2(const CenteredGaussian& g1, const CenteredGaussian& g2) {
    if (g1.covariance.rows() != g2.covariance.rows())
        throw std::invalid_argument("bures_w2: dimension mismatch");
    const Mat root1 = psd_sqrt(g1.covariance);
    const Mat inner = root1.matmul(g2.covariance).matmul(root1);
    const double cross = trace_of_psd_sqrt(inner);
    return g1.covariance.trace() + g2.covariance.trace() - 2.0 * cross;
}

CenteredGaussian empirical_output_law(const CovarianceModel& cov, const AttnParam& param,
                                      std::size_t L, std::size_t n_samples,
                                      RngStream rng) {
    const std::size_t d = cov.dim();
    if (n_samples < d + 1)
        throw std::invalid_argument("empirical_output_law: need n_samples >= d + 1");

    Mat second_moment(d, d);
    std::vector<double> tokens(L * d), proj(L), weights(L), out(d);
    for (std::size_t s = 0; s < n_samples; ++s) {
        RngStream sub = rng.derive(s);
        sample_tokens_into(cov, L, sub, tokens.data());
        detail::softmax_output_query0(tokens.data(), L, d, param.mu.data(), param.lambda,
                                      proj.data(), weights.data(), out.data());
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) second_moment(i, j) += out[i] * out[j];
    }
    second_moment *= 1.0 / static_cast<double>(n_samples);
    return CenteredGaussian(std::move(second_moment));
}

namespace {

double psi_bound(double L, double eps) {
    return std::pow(L, -eps) * std::pow(1.0 + std::log(L), 1.0 - eps);
}

struct SlopeFit {
    double slope{0.0};
};

double log_log_slope(const std::vector<ConcentrationRow>& rows) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(rows.size());
    for (const auto& r : rows) {
        const double x = std::log(static_cast<double>(r.L));
        const double y = std::log(std::max(r.estimate, 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ‖T_L(X)₀ − T_∞(X₀)‖² on one coupled sample, as a function of μ (used
// directly for k = 0 and finite-differenced in μ for k = 1, 2).
double coupled_output_gap(const double* tokens, std::size_t L, std::size_t d,
                          const CovarianceModel& cov, const Vec& mu, double lambda,
                          std::vector<double>& proj, std::vector<double>& weights,
                          std::vector<double>& out) {
    detail::softmax_output_query0(tokens, L, d, mu.data(), lambda, proj.data(),
                                  weights.data(), out.data());
    const Vec sigma_mu = cov.apply(mu);
    double x0_mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) x0_mu += tokens[i] * mu[i];
    double gap = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = out[i] - lambda * x0_mu * sigma_mu[i];
        gap += diff * diff;
    }
    return gap;
}

// Frobenius² distance between the finite and infinite operator derivative
// tensors of order k at the coupled sample, via central differences in μ.
double coupled_derivative_gap(const double* tokens, std::size_t L, std::size_t d,
                              const CovarianceModel& cov, const Vec& mu, double lambda,
                              int k, std::vector<double>& proj,
                              std::vector<double>& weights, std::vector<double>& out) {
    const double h = 1e-4 * (1.0 + norm(mu));

    const auto pair_outputs = [&](const Vec& m, Vec& finite, Vec& infinite) {
        detail::softmax_output_query0(tokens, L, d, m.data(), lambda, proj.data(),
                                      weights.data(), out.data());
        finite.assign(out.begin(), out.end());
        const Vec sigma_mu = cov.apply(m);
        double x0_mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) x0_mu += tokens[i] * m[i];
        infinite = scaled(sigma_mu, lambda * x0_mu);
    };

    if (k == 1) {
        double gap = 0.0;
        Vec probe = mu, fp(d), ip(d), fm(d), im(d);
        for (std::size_t j = 0; j < d; ++j) {
            probe[j] = mu[j] + h;
            pair_outputs(probe, fp, ip);
            probe[j] = mu[j] - h;
            pair_outputs(probe, fm, im);
            probe[j] = mu[j];
            for (std::size_t i = 0; i < d; ++i) {
                const double diff =
                    ((fp[i] - fm[i]) - (ip[i] - im[i])) / (2.0 * h);
                gap += diff * diff;
            }
        }
        return gap;
    }
    // k == 2: D²T ≈ (T(μ+h e_a+h e_b) − T(μ+h e_a−h e_b) − …)/(4h²) per pair.
    double gap = 0.0;
    Vec probe = mu, fpp(d), ipp(d), fpm(d), ipm(d), fmp(d), imp(d), fmm(d), imm(d);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
            probe[a] += h; probe[b] += h;
            pair_outputs(probe, fpp, ipp);
            probe[b] -= 2.0 * h;
            pair_outputs(probe, fpm, ipm);
            probe[a] -= 2.0 * h; probe[b] += 2.0 * h;
            pair_outputs(probe, fmp, imp);
            probe[b] -= 2.0 * h;
            pair_outputs(probe, fmm, imm);
            probe[a] += h; probe[b] += h;
            for (std::size_t i = 0; i < d; ++i) {
                const double fin = (fpp[i] - fpm[i] - fmp[i] + fmm[i]) / (4.0 * h * h);
                const double inf = (ipp[i] - ipm[i] - imp[i] + imm[i]) / (4.0 * h * h);
                const double diff = fin - inf;
                gap += diff * diff;
            }
        }
    }
    return gap;
}

}  // namespace

ConcentrationTable concentration_sweep(const CovarianceModel& cov, const AttnParam& param,
                                       const std::vector<std::size_t>& L_list,
                                       std::size_t n_samples, RngStream rng,
                                       int derivative_level) {
    if (L_list.size() < 3)
        throw std::invalid_argument("concentration_sweep: need at least 3 prompt lengths");
    for (std::size_t i = 1; i < L_list.size(); ++i)
        if (L_list[i] <= L_list[i - 1])
            throw std::invalid_argument("concentration_sweep: L_list must be ascending");
    if (derivative_level < 0 || derivative_level > 2)
        throw std::invalid_argument("concentration_sweep: derivative level must be 0, 1, or 2");

    const std::size_t d = cov.dim();
    const auto [a, b] = cov.quadratic_forms(param.mu);
    (void)b;
    const double k3 = static_cast<double>(derivative_level) + 3.0;
    const double eps =
        1.0 / (16.0 * k3 * k3 * param.lambda * param.lambda * a * a + 1.0);

    ConcentrationTable table;
    table.derivative_level = derivative_level;
    table.epsilon = eps;

    std::vector<double> proj, weights, out(d);
    for (std::size_t L : L_list) {
        proj.resize(L);
        weights.resize(L);
        std::vector<double> tokens(L * d);
        Vec gaps(n_samples);
        for (std::size_t s = 0; s < n_samples; ++s) {
            // Re-deriving per L replays the same stream, so these tokens
            // extend the prefix drawn for every smaller L.
            RngStream sub = rng.derive(s);
            sample_tokens_into(cov, L, sub, tokens.data());
            gaps[s] = derivative_level == 0
                          ? coupled_output_gap(tokens.data(), L, d, cov, param.mu,
                                               param.lambda, proj, weights, out)
                          : coupled_derivative_gap(tokens.data(), L, d, cov, param.mu,
                                                   param.lambda, derivative_level, proj,
                                                   weights, out);
        }
        ConcentrationRow row;
        row.L = L;
        row.estimate = pairwise_mean(gaps);
        double var = 0.0;
        for (double g : gaps) {
            const double diff = g - row.estimate;
            var += diff * diff;
        }
        var /= static_cast<double>(n_samples - 1);
        row.std_error = std::sqrt(var / static_cast<double>(n_samples));
        table.rows.push_back(row);
    }

    // Bound curve normalized to match the estimate at the smallest L.
    const double scale =
        table.rows.front().estimate / psi_bound(static_cast<double>(L_list.front()), eps);
    for (auto& row : table.rows)
        row.bound = scale * psi_bound(static_cast<double>(row.L), eps);

    table.fitted_slope = log_log_slope(table.rows);
    return table;
}

double normal_quantile(double p) {
    // Wichura's algorithm AS241 (PPND16).
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("normal_quantile: p must be in (0, 1)");
    const double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                     6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                   1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
               (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                     3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                   5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                 4.2313330701600911252e+1) * r + 1.0);
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double value;
    if (r <= 5.0) {
        r -= 1.6;
        value = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                      2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                    3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
                  4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
                (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                      1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                    6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
                  2.05319162663775882187e+0) * r + 1.0);
    } else {
        r -= 5.0;
        value = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                      1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                    2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
                  5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
                (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                      1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                    1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                  5.99832206555887937690e-1) * r + 1.0);
    }
    return q < 0.0 ? -value : value;
}

std::vector<W2ProbeRow> w2_convergence_probe(const CovarianceModel& cov, double lambda,
                                             const std::vector<std::size_t>& L_list,
                                             std::size_t n_samples, RngStream rng,
                                             const std::optional<Vec>& mu) {
    if (L_list.size() < 3)
        throw std::invalid_argument("w2_convergence_probe: need at least 3 prompt lengths");
    const std::size_t d = cov.dim();
    const Vec u1 = cov.eigenvector(0);
    const double sigma1 = cov.eigenvalue(0);

    const Vec probe_mu =
        mu ? *mu : scaled(u1, 1.0 / std::sqrt(lambda * sigma1));
    const AttnParam param(probe_mu, lambda);
    const CenteredGaussian limit = gamma_of(probe_mu, cov, lambda);

    // 1-D reference: the limit law of ⟨T_∞, u₁⟩ is N(0, uᵀΓu).
    const Vec gamma_u = limit.covariance.matvec(u1);
    const double limit_var_1d = dot(u1, gamma_u);

    const auto [a, b] = cov.quadratic_forms(probe_mu);
    (void)b;
    const double eps = 1.0 / (144.0 * lambda * lambda * a * a + 1.0);

    std::vector<W2ProbeRow> rows;
    std::vector<double> tokens, proj, weights, out(d);
    for (std::size_t L : L_list) {
        tokens.resize(L * d);
        proj.resize(L);
        weights.resize(L);

        Mat second_moment(d, d);
        Vec projections(n_samples);
        for (std::size_t s = 0; s < n_samples; ++s) {
            RngStream sub = rng.derive(s);
            sample_tokens_into(cov, L, sub, tokens.data());
            detail::softmax_output_query0(tokens.data(), L, d, probe_mu.data(), lambda,
                                          proj.data(), weights.data(), out.data());
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) second_moment(i, j) += out[i] * out[j];
            double p = 0.0;
            for (std::size_t i = 0; i < d; ++i) p += out[i] * u1[i];
            projections[s] = p;
        }
        second_moment *= 1.0 / static_cast<double>(n_samples);

        W2ProbeRow row;
        row.L = L;
        row.bures_surrogate = bures_w2(CenteredGaussian(second_moment), limit);

        // Exact empirical W₂² in 1-D: sorted samples against Gaussian
        // quantiles at (i − 1/2)/n.
        std::sort(projections.begin(), projections.end());
        const double sd = std::sqrt(std::max(limit_var_1d, 0.0));
        double w2 = 0.0;
        for (std::size_t i = 0; i < n_samples; ++i) {
            const double target =
                sd == 0.0 ? 0.0
                          : sd * normal_quantile((static_cast<double>(i) + 0.5) /
                                                 static_cast<double>(n_samples));
            const double diff = projections[i] - target;
            w2 += diff * diff;
        }
        row.w2_1d = w2 / static_cast<double>(n_samples);
        rows.push_back(row);
    }

    const double scale =
        rows.front().w2_1d / psi_bound(static_cast<double>(L_list.front()), eps);
    for (auto& row : rows) row.bound = scale * psi_bound(static_cast<double>(row.L), eps);
    return rows;
}

}  // namespace attnpca
