#include "attnpca/optim.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "attnpca/risk.hpp"

namespace attnpca {

const char* to_string(OptStatus status) {
    switch (status) {
        case OptStatus::converged: return "converged";
        case OptStatus::max_iters: return "max_iters";
        case OptStatus::saddle_terminated: return "saddle_terminated";
    }
    return "unknown";
}

Objective make_soft_inf_objective(const CovarianceModel& cov, double lambda) {
    Objective obj;
    obj.value = [&cov, lambda](const Vec& mu) {
        const auto [a, b] = cov.quadratic_forms(mu);
        return cov.trace() - 2.0 * lambda * b + lambda * lambda * a * b;
    };
    obj.gradient = [&cov, lambda](const Vec& mu) {
        const auto [a, b] = cov.quadratic_forms(mu);
        Vec g = scaled(cov.apply_squared(mu), -4.0 * lambda + 2.0 * lambda * lambda * a);
        axpy(2.0 * lambda * lambda * b, cov.apply(mu), g);
        return g;
    };
    obj.hessian = [&cov, lambda](const Vec& mu) {
        return *risk_soft_inf(AttnParam(mu, lambda), cov).hessian;
    };
    return obj;
}

Objective make_lin_finite_objective(const CovarianceModel& cov, double lambda,
                                    std::size_t L) {
    Objective obj;
    obj.value = [&cov, lambda, L](const Vec& mu) {
        return risk_lin_finite(AttnParam(mu, lambda), cov, L).value;
    };
    obj.gradient = [&cov, lambda, L](const Vec& mu) {
        return *risk_lin_finite(AttnParam(mu, lambda), cov, L).gradient;
    };
    obj.hessian = [&cov, lambda, L](const Vec& mu) {
        return *risk_lin_finite(AttnParam(mu, lambda), cov, L).hessian;
    };
    return obj;
}

namespace {

bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double alignment_with(const Vec& mu, const Vec& target_unit) {
    if (target_unit.empty()) return 0.0;
    const double n = norm(mu);
    if (n == 0.0) return 0.0;
    return std::abs(dot(mu, target_unit)) / n;
}

struct TraceRecorder {
    OptTrace trace;
    Vec target_unit;
    std::size_t stride;

    TraceRecorder(const OptimizerConfig& config, std::size_t expected_iters) {
        stride = config.full_trace ? 1 : std::max<std::size_t>(1, config.iterate_stride);
        if (!config.align_target.empty()) target_unit = normalized(config.align_target);
        trace.step_size = config.step_size;
        trace.risk_values.reserve(expected_iters);
        trace.grad_norms.reserve(expected_iters);
        trace.alignment.reserve(expected_iters);
    }

    void record(std::size_t step, const Vec& mu, double risk, double grad_norm) {
        trace.risk_values.push_back(risk);
        trace.grad_norms.push_back(grad_norm);
        trace.alignment.push_back(alignment_with(mu, target_unit));
        if (step % stride == 0) {
            trace.iterates.push_back(mu);
            trace.iterate_steps.push_back(step);
        }
    }

    OptTrace finish(Vec final_mu, std::size_t iterations, double elapsed_seconds,
                    bool stochastic, OptStatus status) {
        trace.final_mu = std::move(final_mu);
        trace.iterations = iterations;
        trace.wall_time_per_iter =
            iterations ? elapsed_seconds / static_cast<double>(iterations) : 0.0;
        trace.stochastic = stochastic;
        trace.status = status;
        return std::move(trace);
    }
};

// Classify a gradient-norm stop: a stall at a saddle (closed-form Hessian
// has a negative eigenvalue) is never reported as converged.
OptStatus status_at_stop(const Objective& objective, const Vec& mu) {
    if (objective.hessian) {
        const Vec spectrum = symmetric_eigenvalues_ascending(objective.hessian(mu));
        double max_abs = 0.0;
        for (double v : spectrum) max_abs = std::max(max_abs, std::abs(v));
        if (!spectrum.empty() && spectrum.front() < -1e-10 * max_abs)
            return OptStatus::saddle_terminated;
    }
    return OptStatus::converged;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

OptTrace descend(const Objective& objective, const Vec& mu0,
                 const OptimizerConfig& config, const std::vector<Vec>* basis) {
    if (!(config.step_size > 0.0))
        throw std::invalid_argument("gradient_descent: step_size must be > 0");
    if (config.max_iters == 0)
        throw std::invalid_argument("gradient_descent: max_iters must be >= 1");

    const auto project = [&](Vec& v) {
        if (!basis) return;
        for (const Vec& b : *basis) axpy(-dot(v, b), b, v);
    };

    Vec mu = mu0;
    project(mu);

    TraceRecorder recorder(config, config.max_iters);
    const auto start = Clock::now();

    OptStatus status = OptStatus::max_iters;
    std::size_t step = 0;
    double prev_risk = HUGE_VAL;
    for (; step < config.max_iters; ++step) {
        if (!all_finite(mu))
            throw OptimError("non-finite iterate at iteration " + std::to_string(step) +
                                 " (step size " + std::to_string(config.step_size) +
                                 " too large)",
                             step);
        Vec grad = objective.gradient(mu);
        if (basis) project(grad);
        const double grad_norm = norm(grad);
        const double risk = objective.value(mu);
        recorder.record(step, mu, risk, grad_norm);

        if (risk > prev_risk + 1e-12 * (1.0 + std::abs(prev_risk)))
            throw OptimError("risk increased at iteration " + std::to_string(step) +
                                 ": step size " + std::to_string(config.step_size) +
                                 " violates descent; decrease it",
                             step);
        prev_risk = risk;

        if (config.stop_grad_norm > 0.0 && grad_norm < config.stop_grad_norm) {
            status = status_at_stop(objective, mu);
            break;
        }
        axpy(-config.step_size, grad, mu);
        project(mu);
    }

    return recorder.finish(std::move(mu), step, seconds_since(start), false, status);
}

}  // namespace

OptTrace gradient_descent(const Objective& objective, const Vec& mu0,
                          const OptimizerConfig& config) {
    return descend(objective, mu0, config, nullptr);
}

OptTrace projected_descent(const Objective& objective, const Vec& mu0,
                           const std::vector<Vec>& deflation_basis,
                           const OptimizerConfig& config) {
    for (std::size_t i = 0; i < deflation_basis.size(); ++i) {
        if (std::abs(norm(deflation_basis[i]) - 1.0) > 1e-10)
            throw std::invalid_argument("projected_descent: basis vector " +
                                        std::to_string(i) + " is not unit length");
        for (std::size_t j = i + 1; j < deflation_basis.size(); ++j)
            if (std::abs(dot(deflation_basis[i], deflation_basis[j])) > 1e-10)
                throw std::invalid_argument("projected_descent: basis vectors " +
                                            std::to_string(i) + " and " + std::to_string(j) +
                                            " are not orthogonal");
    }
    return descend(objective, mu0, config, &deflation_basis);
}

namespace {

OptTrace sgd_impl(const CovarianceModel& cov, const AttnParam& param_template,
                  const OptimizerConfig& config, bool linear) {
    if (config.mode != OptMode::stochastic)
        throw std::invalid_argument("sgd_finite_prompt: config.mode must be stochastic");
    if (config.batch_size == 0 || config.prompt_length == 0)
        throw std::invalid_argument("sgd_finite_prompt: batch_size and prompt_length must be >= 1");
    if (param_template.mu.size() != cov.dim())
        throw std::invalid_argument("sgd_finite_prompt: dimension mismatch");

    const std::size_t d = cov.dim();
    const std::size_t L = config.prompt_length;
    const std::size_t B = config.batch_size;
    const double lambda = param_template.lambda;

    Vec mu = param_template.mu;
    TraceRecorder recorder(config, config.max_iters);
    const auto start = Clock::now();

    std::vector<double> tokens(L * d);
    std::vector<double> workspace(2 * L);
    Vec grad(d), step_grad(d);

    std::size_t step = 0;
    for (; step < config.max_iters; ++step) {
        if (!all_finite(mu))
            throw OptimError("non-finite iterate at iteration " + std::to_string(step) +
                                 " (step size " + std::to_string(config.step_size) +
                                 " too large)",
                             step);
        RngStream step_rng = config.rng.derive(step);
        double loss_sum = 0.0;
        for (std::size_t i = 0; i < d; ++i) step_grad[i] = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            sample_tokens_into(cov, L, step_rng, tokens.data());
            const double loss =
                linear ? detail::lin_loss_grad_query0(tokens.data(), L, d, mu.data(), lambda,
                                                      workspace.data(), grad.data())
                       : detail::soft_loss_grad_query0(tokens.data(), L, d, mu.data(), lambda,
                                                       workspace.data(), grad.data());
            loss_sum += loss;
            for (std::size_t i = 0; i < d; ++i) step_grad[i] += grad[i];
        }
        const double inv_b = 1.0 / static_cast<double>(B);
        for (std::size_t i = 0; i < d; ++i) step_grad[i] *= inv_b;

        const double grad_norm = norm(step_grad);
        recorder.record(step, mu, loss_sum * inv_b, grad_norm);
        if (config.stop_grad_norm > 0.0 && grad_norm < config.stop_grad_norm) break;
        axpy(-config.step_size, step_grad, mu);
    }

    return recorder.finish(std::move(mu), step, seconds_since(start), true,
                           OptStatus::max_iters);
}

}  // namespace

OptTrace sgd_finite_prompt(const CovarianceModel& cov, const AttnParam& param_template,
                           const OptimizerConfig& config) {
    return sgd_impl(cov, param_template, config, false);
}

OptTrace sgd_finite_prompt_linear(const CovarianceModel& cov,
                                  const AttnParam& param_template,
                                  const OptimizerConfig& config) {
    return sgd_impl(cov, param_template, config, true);
}

std::vector<EigenpairEstimate> sequential_pca(const CovarianceModel& cov, double lambda,
                                              std::size_t k, const OptimizerConfig& config) {
    if (k == 0 || k > cov.dim())
        throw std::invalid_argument("sequential_pca: need 1 <= k <= d");

    const Objective objective = make_soft_inf_objective(cov, lambda);
    std::vector<EigenpairEstimate> estimates;
    std::vector<Vec> basis;

    for (std::size_t stage = 0; stage < k; ++stage) {
        OptimizerConfig stage_config = config;
        stage_config.rng = config.rng.derive(stage);

        Vec mu0 = sample_unit_sphere(cov.dim(), stage_config.rng.derive(0x5eed));
        OptTrace trace = projected_descent(objective, mu0, basis, stage_config);

        EigenpairEstimate est;
        if (trace.status != OptStatus::converged) {
            est.converged = false;
            est.diagnostic = "stage " + std::to_string(stage) + " ended with status " +
                             to_string(trace.status) + " (grad norm " +
                             std::to_string(trace.grad_norms.empty() ? -1.0
                                                                     : trace.grad_norms.back()) +
                             ")";
            estimates.push_back(std::move(est));
            return estimates;  // partial result
        }
        const double radius_sq = norm_sq(trace.final_mu);
        est.direction = normalized(trace.final_mu);
        est.eigenvalue = 1.0 / (lambda * radius_sq);
        est.converged = true;
        estimates.push_back(est);

        // Re-orthonormalize the deflation basis against earlier stages.
        Vec next = est.direction;
        for (const Vec& b : basis) axpy(-dot(next, b), b, next);
        basis.push_back(normalized(next));
    }
    return estimates;
}

Vec oja_w_field(const CovarianceModel& cov, double lambda, const Vec& w) {
    const double a_coeff = 2.0 * lambda * (2.0 - lambda * norm_sq(w));
    const Vec sigma_w = cov.apply(w);
    const double w_sigma_w = dot(w, sigma_w);
    // Σ[A(w)Σw − B(wᵀΣw)w]
    Vec inner = scaled(sigma_w, a_coeff);
    axpy(-2.0 * lambda * lambda * w_sigma_w, w, inner);
    return cov.apply(inner);
}

OjaReport oja_equivalence_check(const CovarianceModel& cov, double lambda,
                                const Vec& mu0, double horizon, double dt) {
    if (!(dt > 0.0) || !(horizon > 0.0))
        throw std::invalid_argument("oja_equivalence_check: need dt > 0 and horizon > 0");

    const Objective objective = make_soft_inf_objective(cov, lambda);
    Vec mu = mu0;
    Vec w = cov.apply_sqrt(mu0);

    OjaReport report;
    report.steps = static_cast<std::size_t>(horizon / dt);
    for (std::size_t k = 0; k < report.steps; ++k) {
        // μ ← μ − dt ∇R(μ) and w ← w + dt ẇ, same Euler step.
        axpy(-dt, objective.gradient(mu), mu);
        axpy(dt, oja_w_field(cov, lambda, w), w);

        const double dev = norm(sub(cov.apply_sqrt(mu), w));
        report.max_deviation = std::max(report.max_deviation, dev);
        report.final_deviation = dev;
        if (!std::isfinite(dev))
            throw OptimError("oja_equivalence_check: flow diverged at step " +
                                 std::to_string(k) + "; decrease dt",
                             k);
    }
    return report;
}

namespace {

struct LineFit {
    double slope{0.0};
    double intercept{0.0};
    double r_squared{0.0};
};

LineFit least_squares(const Vec& x, const Vec& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
        syy += y[i] * y[i];
    }
    LineFit fit;
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) return fit;
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    double ss_res = 0.0;
    const double mean_y = sy / n;
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double pred = fit.intercept + fit.slope * x[i];
        ss_res += (y[i] - pred) * (y[i] - pred);
        ss_tot += (y[i] - mean_y) * (y[i] - mean_y);
    }
    fit.r_squared = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
    return fit;
}

}  // namespace

double fit_exponential_rate(const OptTrace& trace, const Vec& target) {
    if (trace.stochastic)
        throw std::invalid_argument("fit_exponential_rate: trace must be deterministic");
    if (trace.status != OptStatus::converged)
        throw std::invalid_argument(
            "fit_exponential_rate: trace did not converge (final grad norm above threshold)");
    if (trace.iterates.size() < 10)
        throw std::invalid_argument("fit_exponential_rate: too few stored iterates");

    // log distance vs flow time, dropping points at the numerical floor.
    const double floor = 1e-12 * (1.0 + norm(target));
    Vec times, log_dist;
    for (std::size_t i = 0; i < trace.iterates.size(); ++i) {
        const double dist = norm(sub(trace.iterates[i], target));
        if (dist <= floor) continue;
        times.push_back(static_cast<double>(trace.iterate_steps[i]) * trace.step_size);
        log_dist.push_back(std::log(dist));
    }
    if (times.size() < 10)
        throw std::invalid_argument("fit_exponential_rate: too few usable distances");

    // Last linear-looking window: best-R² suffix with at least 10 points.
    LineFit best;
    bool found = false;
    for (std::size_t start = 0; start + 10 <= times.size(); ++start) {
        Vec tx(times.begin() + start, times.end());
        Vec ty(log_dist.begin() + start, log_dist.end());
        const LineFit fit = least_squares(tx, ty);
        if (!found || fit.r_squared > best.r_squared) {
            best = fit;
            found = true;
        }
    }
    if (!found || best.r_squared <= 0.99)
        throw std::runtime_error(
            "fit_exponential_rate: no linear window with R^2 > 0.99 (best " +
            std::to_string(best.r_squared) + "); trace is not in the exponential regime");
    return -best.slope;
}

Vec sample_unit_sphere(std::size_t d, RngStream rng) {
    Vec v(d);
    double n = 0.0;
    do {
        for (std::size_t i = 0; i < d; ++i) v[i] = rng.normal();
        n = norm(v);
    } while (n == 0.0);
    return scaled(v, 1.0 / n);
}

}  // namespace attnpca
