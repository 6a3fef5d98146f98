#include "attnpca/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace attnpca {

AttnParam::AttnParam(Vec mu_in, double lambda_in) : mu(std::move(mu_in)), lambda(lambda_in) {
    if (!(lambda > 0.0)) throw std::invalid_argument("AttnParam: lambda must be > 0");
}

namespace {

void check_query(const Prompt& prompt, const AttnParam& param, std::size_t query_index) {
    if (query_index >= prompt.length)
        throw std::out_of_range("attention: query_index out of range");
    if (param.mu.size() != prompt.dim)
        throw std::invalid_argument("attention: mu dimension mismatch");
}

}  // namespace

Vec softmax_weights(const Prompt& prompt, const AttnParam& param,
                    std::size_t query_index) {
    check_query(prompt, param, query_index);
    const std::size_t L = prompt.length;
    const std::size_t d = prompt.dim;

    Vec proj(L);
    for (std::size_t k = 0; k < L; ++k) {
        const double* xk = prompt.token(k);
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += xk[i] * param.mu[i];
        proj[k] = s;
    }
    const double query_proj = proj[query_index];

    Vec weights(L);
    double max_logit = -HUGE_VAL;
    for (std::size_t k = 0; k < L; ++k) {
        weights[k] = param.lambda * query_proj * proj[k];
        max_logit = std::max(max_logit, weights[k]);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
        weights[k] = std::exp(weights[k] - max_logit);
        total += weights[k];
    }
    for (std::size_t k = 0; k < L; ++k) weights[k] /= total;
    return weights;
}

AttnOutput softmax_attention(const Prompt& prompt, const AttnParam& param,
                             std::size_t query_index) {
    const Vec weights = softmax_weights(prompt, param, query_index);
    Vec value(prompt.dim, 0.0);
    for (std::size_t k = 0; k < prompt.length; ++k) {
        const double* xk = prompt.token(k);
        const double w = weights[k];
        for (std::size_t i = 0; i < prompt.dim; ++i) value[i] += w * xk[i];
    }
    return {std::move(value), query_index};
}

AttnOutput linear_attention(const Prompt& prompt, const AttnParam& param,
                            std::size_t query_index) {
    check_query(prompt, param, query_index);
    const std::size_t L = prompt.length;
    const std::size_t d = prompt.dim;

    double query_proj = 0.0;
    const double* xq = prompt.token(query_index);
    for (std::size_t i = 0; i < d; ++i) query_proj += xq[i] * param.mu[i];

    Vec value(d, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
        const double* xk = prompt.token(k);
        double pk = 0.0;
        for (std::size_t i = 0; i < d; ++i) pk += xk[i] * param.mu[i];
        const double w = query_proj * pk;
        for (std::size_t i = 0; i < d; ++i) value[i] += w * xk[i];
    }
    const double scale = param.lambda / static_cast<double>(L);
    for (double& v : value) v *= scale;
    return {std::move(value), query_index};
}

Vec infinite_attention(const Vec& x, const AttnParam& param, const CovarianceModel& cov) {
    if (x.size() != cov.dim() || param.mu.size() != cov.dim())
        throw std::invalid_argument("infinite_attention: dimension mismatch");
    const double coeff = param.lambda * dot(param.mu, x);
    return scaled(cov.apply(param.mu), coeff);
}

namespace detail {

void softmax_output_query0(const double* tokens, std::size_t L, std::size_t d,
                           const double* mu, double lambda, double* proj,
                           double* weights, double* out) {
    for (std::size_t k = 0; k < L; ++k) {
        const double* xk = tokens + k * d;
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += xk[i] * mu[i];
        proj[k] = s;
    }
    const double q = proj[0];
    double max_logit = -HUGE_VAL;
    for (std::size_t k = 0; k < L; ++k) {
        weights[k] = lambda * q * proj[k];
        if (weights[k] > max_logit) max_logit = weights[k];
    }
    double total = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
        weights[k] = std::exp(weights[k] - max_logit);
        total += weights[k];
    }
    const double inv = 1.0 / total;
    for (std::size_t i = 0; i < d; ++i) out[i] = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
        const double w = weights[k] * inv;
        weights[k] = w;
        const double* xk = tokens + k * d;
        for (std::size_t i = 0; i < d; ++i) out[i] += w * xk[i];
    }
}

}  // namespace detail

}  // namespace attnpca
