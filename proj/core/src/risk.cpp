#include "attnpca/risk.hpp"

#include <cmath>
#include <stdexcept>

#include "attnpca/parallel.hpp"

namespace attnpca {

namespace {

Mat sigma_power_matrix(const CovarianceModel& cov, double exponent) {
    // U diag(σ^p) Uᵀ
    const std::size_t d = cov.dim();
    const Mat& u = cov.eigenvectors();
    Mat scaled_u = u;
    for (std::size_t j = 0; j < d; ++j) {
        const double p = std::pow(cov.eigenvalue(j), exponent);
        for (std::size_t i = 0; i < d; ++i) scaled_u(i, j) *= p;
    }
    return scaled_u.matmul(u.transposed());
}

void add_symmetric_outer(Mat& h, double coeff, const Vec& x, const Vec& y) {
    // h += coeff (x yᵀ + y xᵀ)
    const std::size_t d = x.size();
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            h(i, j) += coeff * (x[i] * y[j] + y[i] * x[j]);
}

}  // namespace

RiskEval risk_soft_inf(const AttnParam& param, const CovarianceModel& cov) {
    if (param.mu.size() != cov.dim())
        throw std::invalid_argument("risk_soft_inf: dimension mismatch");
    const double lambda = param.lambda;
    const auto [a, b] = cov.quadratic_forms(param.mu);
    const double tr = cov.trace();

    RiskEval eval;
    eval.value = tr - 2.0 * lambda * b + lambda * lambda * a * b;

    const Vec sigma_mu = cov.apply(param.mu);
    const Vec sigma2_mu = cov.apply_squared(param.mu);

    Vec grad = scaled(sigma2_mu, -4.0 * lambda + 2.0 * lambda * lambda * a);
    axpy(2.0 * lambda * lambda * b, sigma_mu, grad);
    eval.gradient = std::move(grad);

    Mat hess = sigma_power_matrix(cov, 2.0);
    hess *= (-4.0 * lambda + 2.0 * lambda * lambda * a);
    hess += sigma_power_matrix(cov, 1.0) * (2.0 * lambda * lambda * b);
    add_symmetric_outer(hess, 4.0 * lambda * lambda, sigma2_mu, sigma_mu);
    eval.hessian = std::move(hess);
    return eval;
}

RiskEval risk_lin_finite(const AttnParam& param, const CovarianceModel& cov,
                         std::size_t L) {
    if (param.mu.size() != cov.dim())
        throw std::invalid_argument("risk_lin_finite: dimension mismatch");
    if (L == 0) throw std::invalid_argument("risk_lin_finite: L must be >= 1");

    const double lambda = param.lambda;
    const double len = static_cast<double>(L);
    const auto [a, b] = cov.quadratic_forms(param.mu);
    const double tr = cov.trace();
    const double l2 = lambda * lambda / (len * len);

    RiskEval eval;
    eval.value = tr - (2.0 * lambda / len) * tr * a - (2.0 * lambda * (len + 1.0) / len) * b +
                 l2 * (len + 2.0) * tr * a * a + l2 * (len + 2.0) * (len + 3.0) * a * b;

    // ∇R = α(μ)Σμ + β(μ)Σ²μ
    const double alpha = -4.0 * (lambda / len) * tr + 4.0 * l2 * (len + 2.0) * tr * a +
                         2.0 * l2 * (len + 2.0) * (len + 3.0) * b;
    const double beta = -4.0 * (lambda / len) * (len + 1.0) +
                        2.0 * l2 * (len + 2.0) * (len + 3.0) * a;

    const Vec sigma_mu = cov.apply(param.mu);
    const Vec sigma2_mu = cov.apply_squared(param.mu);

    Vec grad = scaled(sigma_mu, alpha);
    axpy(beta, sigma2_mu, grad);
    eval.gradient = std::move(grad);

    Mat hess = sigma_power_matrix(cov, 1.0) * alpha;
    hess += sigma_power_matrix(cov, 2.0) * beta;
    for (std::size_t i = 0; i < cov.dim(); ++i)
        for (std::size_t j = 0; j < cov.dim(); ++j)
            hess(i, j) += 8.0 * l2 * (len + 2.0) * tr * sigma_mu[i] * sigma_mu[j];
    add_symmetric_outer(hess, 4.0 * l2 * (len + 2.0) * (len + 3.0), sigma_mu, sigma2_mu);
    eval.hessian = std::move(hess);
    return eval;
}

namespace detail {

double soft_loss_grad_query0(const double* tokens, std::size_t L, std::size_t d,
                             const double* mu, double lambda, double* workspace,
                             double* grad_out) {
    if (d > 512) throw std::invalid_argument("soft_loss_grad_query0: dimension too large");
    double* proj = workspace;       // p_k = ⟨X_k, μ⟩
    double* weights = workspace + L;

    double out[512];
    softmax_output_query0(tokens, L, d, mu, lambda, proj, weights, out);

    const double* x0 = tokens;
    double loss = 0.0;
    double resid[512];
    for (std::size_t i = 0; i < d; ++i) {
        resid[i] = x0[i] - out[i];
        loss += resid[i] * resid[i];
    }

    // ∇‖X₀ − s‖² = −2λ[(Σ w_k c_k p_k − C p̄)X₀ + p₀(Σ w_k c_k X_k − C s)]
    // with c_k = ⟨X_k, r⟩, C = Σ w_k c_k, p̄ = Σ w_k p_k.
    const double p0 = proj[0];
    double sum_wcp = 0.0, sum_wc = 0.0, sum_wp = 0.0;
    double wsum_cx[512];
    for (std::size_t i = 0; i < d; ++i) wsum_cx[i] = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
        const double* xk = tokens + k * d;
        double ck = 0.0;
        for (std::size_t i = 0; i < d; ++i) ck += xk[i] * resid[i];
        const double wc = weights[k] * ck;
        sum_wc += wc;
        sum_wcp += wc * proj[k];
        sum_wp += weights[k] * proj[k];
        for (std::size_t i = 0; i < d; ++i) wsum_cx[i] += wc * xk[i];
    }
    const double coeff_x0 = sum_wcp - sum_wc * sum_wp;
    for (std::size_t i = 0; i < d; ++i) {
        grad_out[i] = -2.0 * lambda *
                      (coeff_x0 * x0[i] + p0 * (wsum_cx[i] - sum_wc * out[i]));
    }
    return loss;
}

double lin_loss_grad_query0(const double* tokens, std::size_t L, std::size_t d,
                            const double* mu, double lambda, double* workspace,
                            double* grad_out) {
    if (d > 512) throw std::invalid_argument("lin_loss_grad_query0: dimension too large");
    double* proj = workspace;  // p_k

    for (std::size_t k = 0; k < L; ++k) {
        const double* xk = tokens + k * d;
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += xk[i] * mu[i];
        proj[k] = s;
    }
    const double p0 = proj[0];
    const double scale = lambda / static_cast<double>(L);

    // s = (λ/L) p₀ Σ_k p_k X_k
    double s2[512];
    for (std::size_t i = 0; i < d; ++i) s2[i] = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
        const double* xk = tokens + k * d;
        for (std::size_t i = 0; i < d; ++i) s2[i] += proj[k] * xk[i];
    }

    const double* x0 = tokens;
    double resid[512];
    double loss = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        resid[i] = x0[i] - scale * p0 * s2[i];
        loss += resid[i] * resid[i];
    }

    // ∇‖X₀ − s‖² = −2(λ/L)[⟨S₂, r⟩X₀ + p₀ Σ_k ⟨X_k, r⟩X_k]
    double s2_dot_r = 0.0;
    for (std::size_t i = 0; i < d; ++i) s2_dot_r += s2[i] * resid[i];
    double sum_cx[512];
    for (std::size_t i = 0; i < d; ++i) sum_cx[i] = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
        const double* xk = tokens + k * d;
        double ck = 0.0;
        for (std::size_t i = 0; i < d; ++i) ck += xk[i] * resid[i];
        for (std::size_t i = 0; i < d; ++i) sum_cx[i] += ck * xk[i];
    }
    for (std::size_t i = 0; i < d; ++i)
        grad_out[i] = -2.0 * scale * (s2_dot_r * x0[i] + p0 * sum_cx[i]);
    return loss;
}

}  // namespace detail

double soft_prompt_loss_grad(const Prompt& prompt, const AttnParam& param, Vec& grad_out) {
    if (param.mu.size() != prompt.dim)
        throw std::invalid_argument("soft_prompt_loss_grad: dimension mismatch");
    grad_out.assign(prompt.dim, 0.0);
    Vec workspace(2 * prompt.length);
    return detail::soft_loss_grad_query0(prompt.data.data(), prompt.length, prompt.dim,
                                         param.mu.data(), param.lambda, workspace.data(),
                                         grad_out.data());
}

double lin_prompt_loss_grad(const Prompt& prompt, const AttnParam& param, Vec& grad_out) {
    if (param.mu.size() != prompt.dim)
        throw std::invalid_argument("lin_prompt_loss_grad: dimension mismatch");
    grad_out.assign(prompt.dim, 0.0);
    Vec workspace(prompt.length);
    return detail::lin_loss_grad_query0(prompt.data.data(), prompt.length, prompt.dim,
                                        param.mu.data(), param.lambda, workspace.data(),
                                        grad_out.data());
}

RiskEval risk_soft_finite_mc(const AttnParam& param, const CovarianceModel& cov,
                             std::size_t L, std::size_t batches, RngStream rng,
                             unsigned workers) {
    if (batches < 2)
        throw std::invalid_argument("risk_soft_finite_mc: need batches >= 2 for a standard error");
    if (L == 0) throw std::invalid_argument("risk_soft_finite_mc: L must be >= 1");
    const std::size_t d = cov.dim();

    Vec losses(batches);
    Vec grads(batches * d);
    parallel_for(batches, workers, [&](std::size_t b) {
        RngStream sub = rng.derive(b);
        std::vector<double> tokens(L * d);
        sample_tokens_into(cov, L, sub, tokens.data());
        std::vector<double> workspace(2 * L);
        losses[b] = detail::soft_loss_grad_query0(tokens.data(), L, d, param.mu.data(),
                                                  param.lambda, workspace.data(),
                                                  grads.data() + b * d);
    });

    RiskEval eval;
    eval.value = pairwise_mean(losses);
    double var = 0.0;
    for (double v : losses) {
        const double diff = v - eval.value;
        var += diff * diff;
    }
    var /= static_cast<double>(batches - 1);
    eval.mc_std_error = std::sqrt(var / static_cast<double>(batches));

    Vec grad(d);
    Vec column(batches);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t b = 0; b < batches; ++b) column[b] = grads[b * d + i];
        grad[i] = pairwise_mean(column);
    }
    eval.gradient = std::move(grad);
    return eval;
}

RiskEval risk_soft_inf_mc(const AttnParam& param, const CovarianceModel& cov,
                          std::size_t samples, RngStream rng, unsigned workers) {
    if (samples < 2)
        throw std::invalid_argument("risk_soft_inf_mc: need samples >= 2 for a standard error");
    const std::size_t d = cov.dim();
    const Vec gain = scaled(cov.apply(param.mu), param.lambda);  // λΣμ

    // Chunked so the per-sample loss list stays deterministic without storing
    // one double per sample at N = 10^6.
    const std::size_t chunk = 4096;
    const std::size_t n_chunks = (samples + chunk - 1) / chunk;
    Vec chunk_sums(n_chunks, 0.0);
    Vec chunk_sq_sums(n_chunks, 0.0);

    parallel_for(n_chunks, workers, [&](std::size_t c) {
        RngStream sub = rng.derive(c);
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(samples, begin + chunk);
        std::vector<double> x(d);
        Vec local(end - begin);
        for (std::size_t s = begin; s < end; ++s) {
            sample_tokens_into(cov, 1, sub, x.data());
            double proj = 0.0;
            for (std::size_t i = 0; i < d; ++i) proj += x[i] * param.mu[i];
            double loss = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double r = x[i] - proj * gain[i];
                loss += r * r;
            }
            local[s - begin] = loss;
        }
        chunk_sums[c] = pairwise_sum(local);
        for (double& v : local) v *= v;
        chunk_sq_sums[c] = pairwise_sum(local);
    });

    const double n = static_cast<double>(samples);
    const double mean = pairwise_sum(chunk_sums) / n;
    const double mean_sq = pairwise_sum(chunk_sq_sums) / n;
    const double var = std::max(0.0, (mean_sq - mean * mean) * n / (n - 1.0));

    RiskEval eval;
    eval.value = mean;
    eval.mc_std_error = std::sqrt(var / n);
    return eval;
}

}  // namespace attnpca
