// Gradient descent, stochastic gradient descent on sampled prompts,
// projected (deflated) descent, sequential eigenpair extraction, the Oja-flow
// equivalence check, and rate fitting on traces.
//
// Everything discretizes gradient flow by explicit Euler; deterministic runs
// enforce descent at runtime and abort with a step-size diagnostic when the
// risk increases.

#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnpca/attention.hpp"
#include "attnpca/covariance.hpp"
#include "attnpca/linalg.hpp"
#include "attnpca/rng.hpp"

namespace attnpca {

// Numeric blow-up mid-run (non-finite iterate, risk increase);
// carries the failing iteration.
class OptimError : public std::runtime_error {
public:
    OptimError(const std::string& what, std::size_t iteration)
        : std::runtime_error(what), iteration_(iteration) {}
    std::size_t iteration() const { return iteration_; }

private:
    std::size_t iteration_{0};
};

// A smooth objective with closed-form derivatives.  `hessian` may be empty;
// when present it is used to tell converged minima from saddle stalls.
struct Objective {
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> gradient;
    std::function<Mat(const Vec&)> hessian;
};

Objective make_soft_inf_objective(const CovarianceModel& cov, double lambda);
Objective make_lin_finite_objective(const CovarianceModel& cov, double lambda,
                                    std::size_t L);

enum class OptMode { deterministic, stochastic };

struct OptimizerConfig {
    double step_size{1e-4};
    std::size_t max_iters{10000};
    OptMode mode{OptMode::deterministic};
    std::size_t batch_size{256};     // stochastic only
    std::size_t prompt_length{100};  // stochastic only
    double stop_grad_norm{0.0};
    RngStream rng{0, 0};
    Vec align_target;  // direction for the alignment diagnostic; may be empty
    std::size_t iterate_stride{10};
    bool full_trace{false};  // store every iterate instead of striding
};

enum class OptStatus { converged, max_iters, saddle_terminated };

const char* to_string(OptStatus status);

struct OptTrace {
    std::vector<Vec> iterates;              // strided (every 10th by default)
    std::vector<std::size_t> iterate_steps; // step index of each stored iterate
    Vec risk_values;                        // every iteration
    Vec grad_norms;                         // every iteration
    Vec alignment;                          // |⟨μ_k/‖μ_k‖, target⟩| per iteration
    Vec final_mu;
    std::size_t iterations{0};
    double step_size{0.0};
    double wall_time_per_iter{0.0};
    bool stochastic{false};
    OptStatus status{OptStatus::max_iters};

    double final_alignment() const { return alignment.empty() ? 0.0 : alignment.back(); }
};

OptTrace gradient_descent(const Objective& objective, const Vec& mu0,
                          const OptimizerConfig& config);

// SGD on the empirical softmax risk: each step draws `batch_size` fresh
// prompts of length `prompt_length` and averages the analytic per-prompt
// gradients.  `param_template` supplies λ and the initial μ.
OptTrace sgd_finite_prompt(const CovarianceModel& cov, const AttnParam& param_template,
                           const OptimizerConfig& config);

// Same protocol for the linear attention operator.
OptTrace sgd_finite_prompt_linear(const CovarianceModel& cov,
                                  const AttnParam& param_template,
                                  const OptimizerConfig& config);

// μ_{k+1} = P(μ_k − γ ∇R(μ_k)) with P projecting out the deflation basis.
// The basis must be orthonormal within 1e-10; μ0 is projected first.
OptTrace projected_descent(const Objective& objective, const Vec& mu0,
                           const std::vector<Vec>& deflation_basis,
                           const OptimizerConfig& config);

struct EigenpairEstimate {
    Vec direction;      // unit vector
    double eigenvalue;  // σ̂ = 1/(λ‖μ*‖²)
    bool converged{false};
    std::string diagnostic;
};

// Deflated descent on R_soft,∞, one eigenpair at a time.  Stops early with a
// partial result if a stage fails to converge.
std::vector<EigenpairEstimate> sequential_pca(const CovarianceModel& cov, double lambda,
                                              std::size_t k, const OptimizerConfig& config);

// Compares the μ-flow μ̇ = −∇R_soft,∞(μ) transported by Σ^{1/2} against the
// w-flow ẇ = Σ[A(w)Σw − B(wᵀΣw)w], A(w) = 2λ(2 − λwᵀw), B = 2λ², integrated
// with the same explicit Euler step.
struct OjaReport {
    double max_deviation{0.0};   // max_t ‖Σ^{1/2}μ(t) − w(t)‖
    double final_deviation{0.0};
    std::size_t steps{0};
};

OjaReport oja_equivalence_check(const CovarianceModel& cov, double lambda,
                                const Vec& mu0, double horizon, double dt);

// Right-hand side of the w-flow; exposed for stationarity checks.
Vec oja_w_field(const CovarianceModel& cov, double lambda, const Vec& w);

// Least-squares exponential rate of ‖μ_k − target‖ over the best
// linear-looking suffix window (rate in flow-time units, positive for decay).
// Rejects stochastic or non-converged traces and windows with R² ≤ 0.99.
double fit_exponential_rate(const OptTrace& trace, const Vec& target);

// μ0 uniform on the unit sphere.
Vec sample_unit_sphere(std::size_t d, RngStream rng);

}  // namespace attnpca
