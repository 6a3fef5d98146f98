// Config-driven experiment runner.
//
// Experiments are described by a JSON config (unknown keys are errors), run
// deterministically from a master seed, and emit a long-format CSV
//   experiment,run,step,metric,value,stderr,seed
// with 17-significant-digit floats plus a JSON manifest echoing every value
// that affects the results.  Run r of a study draws from the substream
// derived from (master_seed, r), so runs are independent of each other and
// of the worker count.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnpca/linalg.hpp"

namespace attnpca {

enum class ExperimentKind {
    align_soft_finite,
    align_soft_inf,
    align_lin_finite,
    align_lin_inf,
    sweep_L,
    sweep_d,
    icl_align_finite,
    icl_align_inf,
    icl_sweep_L,
    icl_sweep_d,
    landscape_report,
    concentration,
    w2_probe,
    oja_check,
};

const char* to_string(ExperimentKind kind);
std::optional<ExperimentKind> experiment_from_string(const std::string& name);

// Raised on invalid configs; message carries the config line when known.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    ExperimentKind experiment{ExperimentKind::align_soft_inf};
    std::size_t dimension{5};
    double lambda{0.1};
    double step_size{1e-4};
    std::size_t iters{10000};
    std::size_t batch{256};
    std::size_t prompt_length{100};
    std::vector<std::size_t> L_list;  // sweeps / probes
    std::size_t runs{10};
    std::uint64_t master_seed{0};
    std::string attention{"soft"};  // "soft" or "lin" for sweep experiments
    std::vector<std::size_t> d_list;  // dimension sweeps
    // ICL model parameters.
    double xi2{1.0};
    double theta{2.0};
    std::size_t dof{10};
    std::size_t n_samples{2000};    // distribution probes
    std::size_t record_every{50};   // CSV row stride for per-iteration metrics
    std::string output_path{"."};

    // Keys present in the source JSON (explicit overrides win over derived
    // defaults); filled by the parser.
    std::vector<std::string> explicit_keys;

    bool is_explicit(const std::string& key) const;
};

// Parse + validate a JSON config document.  Unknown keys are errors
// (fail-closed); messages carry the offending line number.
ExperimentConfig parse_experiment_config(const std::string& json_text);

// JSON schema of the config document.
std::string experiment_config_schema();

// Dimension-scaled defaults for the sweep_d experiments:
//   softmax: γ = 0.5/d², λ = 0.1/d
//   linear:  γ = 1/d²,   λ = 0.01/d, L = d
// Explicit config values win.
struct ScaledDefaults {
    double step_size;
    double lambda;
    std::optional<std::size_t> prompt_length;
};
ScaledDefaults scaled_defaults(ExperimentKind experiment, const std::string& attention,
                               std::size_t d);

struct ResultRow {
    std::string experiment;
    std::size_t run{0};
    double step{0.0};  // iteration index or sweep value
    std::string metric;
    double value{0.0};
    std::optional<double> std_error;
    std::uint64_t seed{0};
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::map<std::string, std::string> manifest_entries;  // effective settings
    double wall_time_seconds{0.0};
};

// Runs the experiment; deterministic in the config for any worker count.
// `budget_seconds` > 0 truncates sweep lists once exceeded (recorded in the
// manifest).  Throws ConfigError / OptimError on failure.
ExperimentResult run_experiment(const ExperimentConfig& config, unsigned workers = 1,
                                double budget_seconds = 0.0);

// Long-format CSV with %.17g-style shortest-roundtrip floats.
std::string to_csv(const std::vector<ResultRow>& rows);

std::string to_manifest_json(const ExperimentConfig& config,
                             const ExperimentResult& result);

// Locale-independent float formatting (17 significant digits).
std::string format_double(double value);

}  // namespace attnpca
