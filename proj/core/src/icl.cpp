#include "attnpca/icl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "attnpca/parallel.hpp"

namespace attnpca {

SpikedWishartModel::SpikedWishartModel(double xi2, double theta, Vec spike,
                                       std::size_t dof)
    : xi2_(xi2), theta_(theta), spike_(std::move(spike)), dof_(dof) {
    if (!(xi2_ > 0.0) || !(theta_ > 0.0))
        throw std::invalid_argument("SpikedWishartModel: xi2 and theta must be > 0");
    if (dof_ == 0) throw std::invalid_argument("SpikedWishartModel: dof must be >= 1");
    if (spike_.empty()) throw std::invalid_argument("SpikedWishartModel: empty spike");
    if (std::abs(norm(spike_) - 1.0) > 1e-12)
        throw std::invalid_argument("SpikedWishartModel: spike must be unit norm within 1e-12");
}

double SpikedWishartModel::trace_v() const {
    return static_cast<double>(dim()) * xi2_ + theta_;
}

Mat SpikedWishartModel::scale_matrix() const {
    Mat v = outer(spike_, spike_) * theta_;
    for (std::size_t i = 0; i < dim(); ++i) v(i, i) += xi2_;
    return v;
}

Vec SpikedWishartModel::apply_v(const Vec& x) const {
    Vec out = scaled(x, xi2_);
    axpy(theta_ * dot(spike_, x), spike_, out);
    return out;
}

double SpikedWishartModel::quad_v(const Vec& mu) const {
    const double alpha = dot(mu, spike_);
    return xi2_ * norm_sq(mu) + theta_ * alpha * alpha;
}

double SpikedWishartModel::quad_v2(const Vec& mu) const {
    const double alpha = dot(mu, spike_);
    return xi2_ * xi2_ * norm_sq(mu) +
           (2.0 * xi2_ * theta_ + theta_ * theta_) * alpha * alpha;
}

void SpikedWishartModel::sample_gaussian(RngStream& rng, double* out) const {
    const std::size_t d = dim();
    const double xi = std::sqrt(xi2_);
    const double spike_gain = std::sqrt(xi2_ + theta_) - xi;
    double proj = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        out[i] = rng.normal();
        proj += out[i] * spike_[i];
    }
    for (std::size_t i = 0; i < d; ++i) out[i] = xi * out[i] + spike_gain * proj * spike_[i];
}

CovarianceModel wishart_sample(const SpikedWishartModel& model, RngStream rng) {
    const std::size_t d = model.dim();
    if (model.dof() < d)
        std::cerr << "wishart_sample: dof n = " << model.dof() << " < d = " << d
                  << "; sampled covariance is singular almost surely\n";

    Mat sigma(d, d);
    std::vector<double> x(d);
    for (std::size_t r = 0; r < model.dof(); ++r) {
        model.sample_gaussian(rng, x.data());
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) sigma(i, j) += x[i] * x[j];
    }
    return CovarianceModel::from_matrix_psd(sigma);
}

WishartMoments wishart_moments(const SpikedWishartModel& model, const Vec& mu) {
    if (mu.size() != model.dim())
        throw std::invalid_argument("wishart_moments: dimension mismatch");
    const double n = static_cast<double>(model.dof());
    const double trv = model.trace_v();
    const double qa = model.quad_v(mu);
    const double qb = model.quad_v2(mu);
    WishartMoments m;
    m.m1 = n * trv;
    m.m2 = n * (n + 1.0) * qb + n * trv * qa;
    m.m3 = n * (n + 2.0) * ((n + 3.0) * qa * qb + qa * qa * trv);
    return m;
}

IclCoefficients icl_coefficients(const SpikedWishartModel& model, double lambda) {
    const double n = static_cast<double>(model.dof());
    const double d = static_cast<double>(model.dim());
    const double xi2 = model.xi2();
    const double th = model.theta();
    const double l2n = lambda * lambda * n * (n + 2.0);

    IclCoefficients c;
    c.a1 = 2.0 * l2n * xi2 * xi2 * ((n + d + 3.0) * xi2 + th);
    c.a2 = l2n * xi2 * th * ((3.0 * n + 2.0 * d + 9.0) * xi2 + (n + 5.0) * th);
    c.a3 = 2.0 * lambda * n * xi2 * ((n + d + 1.0) * xi2 + th);
    c.b1 = c.a2;
    c.b2 = 2.0 * l2n * th * th * ((2.0 * n + d + 6.0) * xi2 + (n + 4.0) * th);
    c.b3 = 2.0 * lambda * n * th * ((2.0 * n + d + 2.0) * xi2 + (n + 2.0) * th);
    return c;
}

RiskEval risk_icl_inf(const Vec& mu, const SpikedWishartModel& model, double lambda) {
    if (mu.size() != model.dim())
        throw std::invalid_argument("risk_icl_inf: dimension mismatch");

    const WishartMoments m = wishart_moments(model, mu);
    const IclCoefficients c = icl_coefficients(model, lambda);
    const Vec& v = model.spike();
    const double r2 = norm_sq(mu);
    const double alpha = dot(mu, v);
    const double alpha2 = alpha * alpha;
    const double a_val = c.a1 * r2 + c.a2 * alpha2 - c.a3;
    const double b_val = c.b1 * r2 + c.b2 * alpha2 - c.b3;

    RiskEval eval;
    eval.value = m.m1 - 2.0 * lambda * m.m2 + lambda * lambda * m.m3;

    Vec grad = scaled(mu, 2.0 * a_val);
    axpy(2.0 * b_val * alpha, v, grad);
    eval.gradient = std::move(grad);

    // ∇² = 2A I + 2B vvᵀ + 4a₁μμᵀ + 4α²b₂ vvᵀ + 4αa₂(μvᵀ + vμᵀ)
    const std::size_t d = model.dim();
    Mat hess(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            hess(i, j) = (2.0 * b_val + 4.0 * alpha2 * c.b2) * v[i] * v[j] +
                         4.0 * c.a1 * mu[i] * mu[j] +
                         4.0 * alpha * c.a2 * (mu[i] * v[j] + v[i] * mu[j]);
        }
        hess(i, i) += 2.0 * a_val;
    }
    eval.hessian = std::move(hess);
    return eval;
}

double alpha_star(const IclCoefficients& coeffs) {
    return std::sqrt((coeffs.a3 + coeffs.b3) /
                     (coeffs.a1 + 2.0 * coeffs.a2 + coeffs.b2));
}

IclRate predicted_rate_icl(const SpikedWishartModel& model, double lambda) {
    const double n = static_cast<double>(model.dof());
    const double d = static_cast<double>(model.dim());
    const double xi2 = model.xi2();
    const double th = model.theta();

    IclRate rate;
    rate.exact = 2.0 * lambda * n * th * xi2 *
                 (th * (n * n + 5.0 * n + 2.0) +
                  xi2 * (n * n + d * n + 4.0 * n - d + 3.0)) /
                 ((n + 4.0) * th + (d + n + 3.0) * xi2);
    rate.small_xi_asymptotic =
        2.0 * lambda * n * (n * n + 5.0 * n + 2.0) * th * xi2 / (n + 4.0);
    return rate;
}

namespace {

CriticalPoint make_icl_point(Vec location, Vec spectrum, CriticalKind kind) {
    std::sort(spectrum.begin(), spectrum.end());
    CriticalPoint p;
    p.location = std::move(location);
    p.hessian_spectrum = std::move(spectrum);
    p.kind = kind;
    return p;
}

}  // namespace

IclCriticalSet icl_landscape(const SpikedWishartModel& model, double lambda) {
    const IclCoefficients c = icl_coefficients(model, lambda);
    const std::size_t d = model.dim();
    const Vec& v = model.spike();

    IclCriticalSet set;

    // Origin: ∇² = −2a₃I − 2b₃vvᵀ.
    Vec origin_spec(d, -2.0 * c.a3);
    origin_spec[0] = -2.0 * c.a3 - 2.0 * c.b3;
    set.origin = make_icl_point(zeros(d), origin_spec, CriticalKind::local_max);

    // Aligned ±α*v: eigenvalue 4(a₃+b₃) along v, 2A* transverse.
    const double astar = alpha_star(c);
    const double transverse =
        2.0 * ((c.a1 + c.a2) * (c.a3 + c.b3) / (c.a1 + 2.0 * c.a2 + c.b2) - c.a3);
    Vec aligned_spec(d, transverse);
    aligned_spec[0] = 4.0 * (c.a3 + c.b3);
    set.aligned_plus = make_icl_point(scaled(v, astar), aligned_spec, CriticalKind::local_min);
    set.aligned_minus = make_icl_point(scaled(v, -astar), aligned_spec, CriticalKind::local_min);

    // Orthogonal sphere r² = a₃/a₁: canonical representatives along an
    // orthonormal completion of v.  Eigenvalues: 4a₁r² along the point,
    // 2(a₂a₃/a₁ − b₃) < 0 along v, and d−2 zeros tangent to the sphere; the
    // label follows the saddle classification with the zeros recorded.
    if (d >= 2) {
        const double radius = std::sqrt(c.a3 / c.a1);
        Vec ortho_spec(d, 0.0);
        ortho_spec[0] = 2.0 * (c.a2 * c.a3 / c.a1 - c.b3);
        ortho_spec[1] = 4.0 * c.a3;  // 4 a₁ r² = 4 a₃

        std::vector<Vec> completion;
        for (std::size_t i = 0; i < d && completion.size() < d - 1; ++i) {
            Vec w = unit_vector(d, i);
            axpy(-dot(w, v), v, w);
            for (const Vec& u : completion) axpy(-dot(w, u), u, w);
            const double wn = norm(w);
            if (wn > 1e-8) completion.push_back(scaled(w, 1.0 / wn));
        }
        for (const Vec& u : completion) {
            set.orthogonal.push_back(
                make_icl_point(scaled(u, radius), ortho_spec, CriticalKind::strict_saddle));
            set.orthogonal.push_back(
                make_icl_point(scaled(u, -radius), ortho_spec, CriticalKind::strict_saddle));
        }
    }
    return set;
}

namespace {

// d×n factor W with i.i.d. N(0, V) columns, so Σ = WWᵀ ~ W_d(V, n) and
// tokens X = Wz, z ~ N(0, I_n) have law N(0, Σ).
void draw_wishart_factor(const SpikedWishartModel& model, RngStream& rng,
                         std::vector<double>& factor) {
    const std::size_t d = model.dim();
    std::vector<double> column(d);
    for (std::size_t r = 0; r < model.dof(); ++r) {
        model.sample_gaussian(rng, column.data());
        for (std::size_t i = 0; i < d; ++i) factor[i * model.dof() + r] = column[i];
    }
}

void sample_prompt_from_factor(const std::vector<double>& factor, std::size_t d,
                               std::size_t n, std::size_t L, RngStream& rng,
                               double* tokens, std::vector<double>& z) {
    for (std::size_t l = 0; l < L; ++l) {
        z.resize(n);
        rng.fill_normal(z.data(), n);
        double* x = tokens + l * d;
        for (std::size_t i = 0; i < d; ++i) {
            const double* w = factor.data() + i * n;
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += w[r] * z[r];
            x[i] = s;
        }
    }
}

}  // namespace

RiskEval risk_icl_finite_mc(const Vec& mu, const SpikedWishartModel& model,
                            double lambda, std::size_t L, std::size_t n_sigma,
                            std::size_t n_prompt, RngStream rng, unsigned workers) {
    if (mu.size() != model.dim())
        throw std::invalid_argument("risk_icl_finite_mc: dimension mismatch");
    if (n_sigma == 0 || n_prompt == 0)
        throw std::invalid_argument("risk_icl_finite_mc: n_sigma and n_prompt must be >= 1");
    if (L == 0) throw std::invalid_argument("risk_icl_finite_mc: L must be >= 1");

    const std::size_t d = model.dim();
    const std::size_t n = model.dof();

    Vec outer_means(n_sigma);
    Vec grads(n_sigma * d);
    parallel_for(n_sigma, workers, [&](std::size_t o) {
        RngStream sub = rng.derive(o);
        std::vector<double> factor(d * n);
        draw_wishart_factor(model, sub, factor);

        std::vector<double> tokens(L * d), workspace(2 * L), z;
        Vec grad(d), grad_sum(d, 0.0);
        Vec losses(n_prompt);
        for (std::size_t p = 0; p < n_prompt; ++p) {
            sample_prompt_from_factor(factor, d, n, L, sub, tokens.data(), z);
            losses[p] = detail::soft_loss_grad_query0(tokens.data(), L, d, mu.data(),
                                                      lambda, workspace.data(), grad.data());
            for (std::size_t i = 0; i < d; ++i) grad_sum[i] += grad[i];
        }
        outer_means[o] = pairwise_mean(losses);
        for (std::size_t i = 0; i < d; ++i)
            grads[o * d + i] = grad_sum[i] / static_cast<double>(n_prompt);
    });

    RiskEval eval;
    eval.value = pairwise_mean(outer_means);
    if (n_sigma >= 2) {
        double var = 0.0;
        for (double v : outer_means) {
            const double diff = v - eval.value;
            var += diff * diff;
        }
        var /= static_cast<double>(n_sigma - 1);
        eval.mc_std_error = std::sqrt(var / static_cast<double>(n_sigma));
    }

    Vec grad(d);
    Vec column(n_sigma);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t o = 0; o < n_sigma; ++o) column[o] = grads[o * d + i];
        grad[i] = pairwise_mean(column);
    }
    eval.gradient = std::move(grad);
    return eval;
}

OptTrace icl_sgd(const SpikedWishartModel& model, double lambda,
                 const OptimizerConfig& config) {
    if (config.mode != OptMode::stochastic)
        throw std::invalid_argument("icl_sgd: config.mode must be stochastic");
    if (config.batch_size == 0 || config.prompt_length == 0)
        throw std::invalid_argument("icl_sgd: batch_size and prompt_length must be >= 1");

    const std::size_t d = model.dim();
    const std::size_t n = model.dof();
    const std::size_t L = config.prompt_length;
    const std::size_t B = config.batch_size;

    OptimizerConfig traced = config;
    if (traced.align_target.empty()) traced.align_target = model.spike();

    Vec mu = sample_unit_sphere(d, config.rng.derive(0x1c1));

    // Mirrors sgd_finite_prompt, with a fresh Wishart factor per batch
    // element.
    OptTrace trace;
    trace.step_size = config.step_size;
    const Vec target = normalized(traced.align_target);
    const std::size_t stride =
        config.full_trace ? 1 : std::max<std::size_t>(1, config.iterate_stride);

    std::vector<double> factor(d * n), tokens(L * d), workspace(2 * L), z;
    Vec grad(d), step_grad(d);

    const auto start = std::chrono::steady_clock::now();
    std::size_t step = 0;
    for (; step < config.max_iters; ++step) {
        for (double x : mu)
            if (!std::isfinite(x))
                throw OptimError("icl_sgd: non-finite iterate at iteration " +
                                     std::to_string(step),
                                 step);
        RngStream step_rng = config.rng.derive(step);
        double loss_sum = 0.0;
        for (std::size_t i = 0; i < d; ++i) step_grad[i] = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            draw_wishart_factor(model, step_rng, factor);
            sample_prompt_from_factor(factor, d, n, L, step_rng, tokens.data(), z);
            loss_sum += detail::soft_loss_grad_query0(tokens.data(), L, d, mu.data(),
                                                      lambda, workspace.data(), grad.data());
            for (std::size_t i = 0; i < d; ++i) step_grad[i] += grad[i];
        }
        const double inv_b = 1.0 / static_cast<double>(B);
        for (std::size_t i = 0; i < d; ++i) step_grad[i] *= inv_b;

        trace.risk_values.push_back(loss_sum * inv_b);
        trace.grad_norms.push_back(norm(step_grad));
        trace.alignment.push_back(std::abs(dot(mu, target)) / norm(mu));
        if (step % stride == 0) {
            trace.iterates.push_back(mu);
            trace.iterate_steps.push_back(step);
        }
        if (config.stop_grad_norm > 0.0 && trace.grad_norms.back() < config.stop_grad_norm)
            break;
        axpy(-config.step_size, step_grad, mu);
    }

    trace.final_mu = std::move(mu);
    trace.iterations = step;
    trace.wall_time_per_iter =
        step ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                       .count() /
                   static_cast<double>(step)
             : 0.0;
    trace.stochastic = true;
    trace.status = OptStatus::max_iters;
    return trace;
}

Objective make_icl_inf_objective(const SpikedWishartModel& model, double lambda) {
    Objective obj;
    obj.value = [&model, lambda](const Vec& mu) {
        return risk_icl_inf(mu, model, lambda).value;
    };
    obj.gradient = [&model, lambda](const Vec& mu) {
        return *risk_icl_inf(mu, model, lambda).gradient;
    };
    obj.hessian = [&model, lambda](const Vec& mu) {
        return *risk_icl_inf(mu, model, lambda).hessian;
    };
    return obj;
}

}  // namespace attnpca
