#include "attnpca/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "attnpca/covariance.hpp"
#include "attnpca/distrib.hpp"
#include "attnpca/icl.hpp"
#include "attnpca/landscape.hpp"
#include "attnpca/optim.hpp"
#include "attnpca/parallel.hpp"
#include "attnpca/risk.hpp"
#include "attnpca/version.hpp"

namespace attnpca {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kSigmaChild = 0xC0F;
constexpr std::uint64_t kSpikeChild = 0x5F1;
constexpr std::uint64_t kRunChildBase = 0xA000;
constexpr std::uint64_t kSweepChildBase = 0xB000;

struct KindName {
    ExperimentKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {ExperimentKind::align_soft_finite, "align_soft_finite"},
    {ExperimentKind::align_soft_inf, "align_soft_inf"},
    {ExperimentKind::align_lin_finite, "align_lin_finite"},
    {ExperimentKind::align_lin_inf, "align_lin_inf"},
    {ExperimentKind::sweep_L, "sweep_L"},
    {ExperimentKind::sweep_d, "sweep_d"},
    {ExperimentKind::icl_align_finite, "icl_align_finite"},
    {ExperimentKind::icl_align_inf, "icl_align_inf"},
    {ExperimentKind::icl_sweep_L, "icl_sweep_L"},
    {ExperimentKind::icl_sweep_d, "icl_sweep_d"},
    {ExperimentKind::landscape_report, "landscape_report"},
    {ExperimentKind::concentration, "concentration"},
    {ExperimentKind::w2_probe, "w2_probe"},
    {ExperimentKind::oja_check, "oja_check"},
};

std::size_t line_of_key(const std::string& text, const std::string& key) {
    const std::string needle = "\"" + key + "\"";
    const std::size_t pos = text.find(needle);
    if (pos == std::string::npos) return 0;
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + pos, '\n'));
}

std::size_t line_of_offset(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
}

[[noreturn]] void config_fail(const std::string& text, const std::string& key,
                              const std::string& message) {
    std::ostringstream os;
    os << "config error";
    if (const std::size_t line = line_of_key(text, key)) os << " (line " << line << ")";
    os << ": " << message;
    throw ConfigError(os.str());
}

}  // namespace

const char* to_string(ExperimentKind kind) {
    for (const auto& entry : kKindNames)
        if (entry.kind == kind) return entry.name;
    return "unknown";
}

std::optional<ExperimentKind> experiment_from_string(const std::string& name) {
    for (const auto& entry : kKindNames)
        if (name == entry.name) return entry.kind;
    return std::nullopt;
}

bool ExperimentConfig::is_explicit(const std::string& key) const {
    return std::find(explicit_keys.begin(), explicit_keys.end(), key) != explicit_keys.end();
}

std::string format_double(double value) {
    char buf[64];
    const auto result =
        std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
    return std::string(buf, result.ptr);
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& err) {
        throw ConfigError("config error (line " +
                          std::to_string(line_of_offset(json_text, err.byte)) +
                          "): " + err.what());
    }
    if (!doc.is_object()) throw ConfigError("config error: top level must be a JSON object");

    static const std::vector<std::string> known = {
        "experiment", "dimension",  "lambda",   "step_size",   "iters",
        "batch",      "prompt_length", "L_list", "d_list",     "runs",
        "master_seed", "attention", "xi2",      "theta",       "dof",
        "n_samples",  "record_every", "output_path"};

    for (const auto& item : doc.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end())
            config_fail(json_text, item.key(), "unknown key \"" + item.key() + "\"");
    }

    ExperimentConfig config;
    const auto mark = [&](const char* key) { config.explicit_keys.push_back(key); };

    const auto get_positive_int = [&](const char* key, std::size_t& out) {
        if (!doc.contains(key)) return;
        if (!doc[key].is_number_integer() || doc[key].get<long long>() < 1)
            config_fail(json_text, key, std::string(key) + " must be a positive integer");
        out = doc[key].get<std::size_t>();
        mark(key);
    };
    const auto get_positive_double = [&](const char* key, double& out) {
        if (!doc.contains(key)) return;
        if (!doc[key].is_number() || !(doc[key].get<double>() > 0.0))
            config_fail(json_text, key, std::string(key) + " must be a positive number");
        out = doc[key].get<double>();
        mark(key);
    };
    const auto get_size_list = [&](const char* key, std::vector<std::size_t>& out) {
        if (!doc.contains(key)) return;
        if (!doc[key].is_array() || doc[key].empty())
            config_fail(json_text, key, std::string(key) + " must be a nonempty array");
        out.clear();
        for (const auto& v : doc[key]) {
            if (!v.is_number_integer() || v.get<long long>() < 1)
                config_fail(json_text, key,
                            std::string(key) + " entries must be positive integers");
            out.push_back(v.get<std::size_t>());
        }
        mark(key);
    };

    if (!doc.contains("experiment"))
        throw ConfigError("config error: missing required key \"experiment\"");
    if (!doc["experiment"].is_string())
        config_fail(json_text, "experiment", "experiment must be a string");
    const std::string name = doc["experiment"].get<std::string>();
    const auto kind = experiment_from_string(name);
    if (!kind) config_fail(json_text, "experiment", "unrecognized experiment \"" + name + "\"");
    config.experiment = *kind;
    mark("experiment");

    get_positive_int("dimension", config.dimension);
    get_positive_double("lambda", config.lambda);
    get_positive_double("step_size", config.step_size);
    get_positive_int("iters", config.iters);
    get_positive_int("batch", config.batch);
    get_positive_int("prompt_length", config.prompt_length);
    get_size_list("L_list", config.L_list);
    get_size_list("d_list", config.d_list);
    get_positive_int("runs", config.runs);
    if (doc.contains("master_seed")) {
        if (!doc["master_seed"].is_number_integer() || doc["master_seed"].get<long long>() < 0)
            config_fail(json_text, "master_seed", "master_seed must be a nonnegative integer");
        config.master_seed = doc["master_seed"].get<std::uint64_t>();
        mark("master_seed");
    }
    if (doc.contains("attention")) {
        if (!doc["attention"].is_string())
            config_fail(json_text, "attention", "attention must be \"soft\" or \"lin\"");
        config.attention = doc["attention"].get<std::string>();
        if (config.attention != "soft" && config.attention != "lin")
            config_fail(json_text, "attention", "attention must be \"soft\" or \"lin\"");
        mark("attention");
    }
    get_positive_double("xi2", config.xi2);
    get_positive_double("theta", config.theta);
    get_positive_int("dof", config.dof);
    get_positive_int("n_samples", config.n_samples);
    get_positive_int("record_every", config.record_every);
    if (doc.contains("output_path")) {
        if (!doc["output_path"].is_string())
            config_fail(json_text, "output_path", "output_path must be a string");
        config.output_path = doc["output_path"].get<std::string>();
        mark("output_path");
    }

    for (std::size_t i = 1; i < config.L_list.size(); ++i)
        if (config.L_list[i] <= config.L_list[i - 1])
            config_fail(json_text, "L_list", "L_list must be strictly ascending");
    for (std::size_t i = 1; i < config.d_list.size(); ++i)
        if (config.d_list[i] <= config.d_list[i - 1])
            config_fail(json_text, "d_list", "d_list must be strictly ascending");
    return config;
}

std::string experiment_config_schema() {
    json schema = {
        {"$schema", "http://json-schema.org/draft-07/schema#"},
        {"title", "attn-pca experiment config"},
        {"type", "object"},
        {"additionalProperties", false},
        {"required", {"experiment"}},
        {"properties",
         {
             {"experiment",
              {{"type", "string"},
               {"enum",
                {"align_soft_finite", "align_soft_inf", "align_lin_finite",
                 "align_lin_inf", "sweep_L", "sweep_d", "icl_align_finite",
                 "icl_align_inf", "icl_sweep_L", "icl_sweep_d", "landscape_report",
                 "concentration", "w2_probe", "oja_check"}}}},
             {"dimension", {{"type", "integer"}, {"minimum", 1}, {"default", 5}}},
             {"lambda", {{"type", "number"}, {"exclusiveMinimum", 0}, {"default", 0.1}}},
             {"step_size", {{"type", "number"}, {"exclusiveMinimum", 0}, {"default", 1e-4}}},
             {"iters", {{"type", "integer"}, {"minimum", 1}, {"default", 10000}}},
             {"batch", {{"type", "integer"}, {"minimum", 1}, {"default", 256}}},
             {"prompt_length", {{"type", "integer"}, {"minimum", 1}, {"default", 100}}},
             {"L_list",
              {{"type", "array"},
               {"items", {{"type", "integer"}, {"minimum", 1}}},
               {"description", "ascending prompt lengths for sweeps and probes"}}},
             {"d_list",
              {{"type", "array"},
               {"items", {{"type", "integer"}, {"minimum", 1}}},
               {"description", "ascending dimensions for sweep_d variants"}}},
             {"runs", {{"type", "integer"}, {"minimum", 1}, {"default", 10}}},
             {"master_seed", {{"type", "integer"}, {"minimum", 0}, {"default", 0}}},
             {"attention",
              {{"type", "string"}, {"enum", {"soft", "lin"}}, {"default", "soft"}}},
             {"xi2", {{"type", "number"}, {"exclusiveMinimum", 0}, {"default", 1.0}}},
             {"theta", {{"type", "number"}, {"exclusiveMinimum", 0}, {"default", 2.0}}},
             {"dof", {{"type", "integer"}, {"minimum", 1}, {"default", 10}}},
             {"n_samples", {{"type", "integer"}, {"minimum", 2}, {"default", 2000}}},
             {"record_every", {{"type", "integer"}, {"minimum", 1}, {"default", 50}}},
             {"output_path", {{"type", "string"}, {"default", "."}}},
         }},
    };
    return schema.dump(2);
}

ScaledDefaults scaled_defaults(ExperimentKind experiment, const std::string& attention,
                               std::size_t d) {
    const double dd = static_cast<double>(d);
    ScaledDefaults defaults{};
    if (experiment == ExperimentKind::icl_sweep_d) {
        defaults.step_size = 0.5 / (dd * dd);
        defaults.lambda = 0.1 / dd;
        return defaults;
    }
    if (attention == "lin") {
        defaults.step_size = 1.0 / (dd * dd);
        defaults.lambda = 0.01 / dd;
        defaults.prompt_length = d;
    } else {
        defaults.step_size = 0.5 / (dd * dd);
        defaults.lambda = 0.1 / dd;
    }
    return defaults;
}

namespace {

std::vector<std::size_t> default_sweep_L_list() {
    std::vector<std::size_t> list;
    for (int i = 0; i < 20; ++i) {
        const double v = 3.0 + static_cast<double>(i) * 47.0 / 19.0;
        list.push_back(static_cast<std::size_t>(std::lround(v)));
    }
    return list;
}

std::vector<std::size_t> default_icl_sweep_L_list() {
    std::vector<std::size_t> list;
    for (std::size_t L = 3; L <= 100; L += 5) list.push_back(L);
    return list;
}

std::vector<std::size_t> default_d_list() {
    std::vector<std::size_t> list;
    for (std::size_t d = 3; d <= 100; d += 5) list.push_back(d);
    return list;
}

struct RowSink {
    std::vector<ResultRow>& rows;
    std::string experiment;

    void add(std::size_t run, double step, const std::string& metric, double value,
             std::optional<double> std_error, std::uint64_t seed) {
        rows.push_back({experiment, run, step, metric, value, std_error, seed});
    }
};

double mean_of(const Vec& values) { return pairwise_mean(values); }

double stderr_of(const Vec& values, double mean) {
    if (values.size() < 2) return 0.0;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size() - 1);
    return std::sqrt(var / static_cast<double>(values.size()));
}

// Rethrows optimizer failures with the failing run named, as the CLI
// contract requires.
template <typename Fn>
auto with_run_context(std::size_t run, Fn&& fn) {
    try {
        return fn();
    } catch (const OptimError& err) {
        throw OptimError("run " + std::to_string(run) + ": " + err.what(),
                         err.iteration());
    }
}

struct StudyContext {
    const ExperimentConfig& config;
    RngStream root;
    unsigned workers;
    double budget_seconds;
    Clock::time_point start;
    std::map<std::string, std::string>& manifest;

    RngStream run_stream(std::size_t run) const {
        return root.derive(kRunChildBase + run);
    }
    RngStream sweep_stream(std::size_t element, std::size_t run) const {
        return root.derive(kSweepChildBase + element).derive(run);
    }
    bool over_budget() const {
        if (budget_seconds <= 0.0) return false;
        return std::chrono::duration<double>(Clock::now() - start).count() > budget_seconds;
    }
};

// Records per-iteration alignment rows (strided) plus the final alignment.
void emit_alignment_rows(RowSink& sink, std::size_t run, const OptTrace& trace,
                         std::size_t record_every, std::uint64_t seed) {
    for (std::size_t k = 0; k < trace.alignment.size(); k += record_every)
        sink.add(run, static_cast<double>(k), "alignment", trace.alignment[k],
                 std::nullopt, seed);
    sink.add(run, static_cast<double>(trace.iterations), "final_alignment",
             trace.final_alignment(), std::nullopt, seed);
}

void run_alignment_study(const StudyContext& ctx, RowSink& sink) {
    const ExperimentConfig& config = ctx.config;
    const ExperimentKind kind = config.experiment;

    const CovarianceModel cov =
        build_experiment_covariance(config.dimension, ctx.root.derive(kSigmaChild));
    ctx.manifest["sigma_trace"] = format_double(cov.trace());
    ctx.manifest["sigma_top_eigenvalue"] = format_double(cov.eigenvalue(0));

    std::vector<std::vector<ResultRow>> per_run(config.runs);
    parallel_for(config.runs, ctx.workers, [&](std::size_t run) {
        RngStream run_rng = ctx.run_stream(run);
        const Vec mu0 = sample_unit_sphere(config.dimension, run_rng.derive(1));

        OptimizerConfig opt;
        opt.step_size = config.step_size;
        opt.max_iters = config.iters;
        opt.stop_grad_norm = 0.0;
        opt.align_target = cov.eigenvector(0);
        opt.rng = run_rng.derive(2);

        const OptTrace trace = with_run_context(run, [&] {
            if (kind == ExperimentKind::align_soft_inf)
                return gradient_descent(make_soft_inf_objective(cov, config.lambda), mu0, opt);
            if (kind == ExperimentKind::align_lin_inf)
                return gradient_descent(
                    make_lin_finite_objective(cov, config.lambda, config.prompt_length), mu0,
                    opt);
            opt.mode = OptMode::stochastic;
            opt.batch_size = config.batch;
            opt.prompt_length = config.prompt_length;
            const AttnParam param(mu0, config.lambda);
            return kind == ExperimentKind::align_soft_finite
                       ? sgd_finite_prompt(cov, param, opt)
                       : sgd_finite_prompt_linear(cov, param, opt);
        });

        std::vector<ResultRow> rows;
        RowSink run_sink{rows, sink.experiment};
        emit_alignment_rows(run_sink, run, trace, config.record_every,
                            run_rng.stream_id());
        per_run[run] = std::move(rows);
    });
    for (auto& rows : per_run)
        for (auto& row : rows) sink.rows.push_back(std::move(row));
}

void run_icl_alignment_study(const StudyContext& ctx, RowSink& sink) {
    const ExperimentConfig& config = ctx.config;
    const Vec spike =
        sample_unit_sphere(config.dimension, ctx.root.derive(kSpikeChild));
    const SpikedWishartModel model(config.xi2, config.theta, spike, config.dof);
    ctx.manifest["alpha_star"] =
        format_double(alpha_star(icl_coefficients(model, config.lambda)));

    std::vector<std::vector<ResultRow>> per_run(config.runs);
    parallel_for(config.runs, ctx.workers, [&](std::size_t run) {
        RngStream run_rng = ctx.run_stream(run);

        OptimizerConfig opt;
        opt.step_size = config.step_size;
        opt.max_iters = config.iters;
        opt.align_target = model.spike();
        opt.rng = run_rng.derive(2);

        const OptTrace trace = with_run_context(run, [&] {
            if (config.experiment == ExperimentKind::icl_align_inf) {
                const Vec mu0 = sample_unit_sphere(config.dimension, run_rng.derive(1));
                return gradient_descent(make_icl_inf_objective(model, config.lambda), mu0,
                                        opt);
            }
            opt.mode = OptMode::stochastic;
            opt.batch_size = config.batch;
            opt.prompt_length = config.prompt_length;
            return icl_sgd(model, config.lambda, opt);
        });

        std::vector<ResultRow> rows;
        RowSink run_sink{rows, sink.experiment};
        emit_alignment_rows(run_sink, run, trace, config.record_every,
                            run_rng.stream_id());
        per_run[run] = std::move(rows);
    });
    for (auto& rows : per_run)
        for (auto& row : rows) sink.rows.push_back(std::move(row));
}

void run_sweep_L(const StudyContext& ctx, RowSink& sink) {
    const ExperimentConfig& config = ctx.config;
    const bool icl = config.experiment == ExperimentKind::icl_sweep_L;
    std::vector<std::size_t> L_list = config.L_list;
    if (L_list.empty())
        L_list = icl ? default_icl_sweep_L_list() : default_sweep_L_list();

    const CovarianceModel cov =
        build_experiment_covariance(config.dimension, ctx.root.derive(kSigmaChild));
    const Vec spike = sample_unit_sphere(config.dimension, ctx.root.derive(kSpikeChild));
    const SpikedWishartModel model(config.xi2, config.theta, spike, config.dof);

    std::size_t completed = 0;
    for (std::size_t e = 0; e < L_list.size(); ++e) {
        if (e > 0 && ctx.over_budget()) {
            std::vector<std::size_t> skipped(L_list.begin() + e, L_list.end());
            std::string note = "budget exceeded; skipped L values:";
            for (std::size_t L : skipped) note += " " + std::to_string(L);
            ctx.manifest["budget_warning"] = note;
            break;
        }
        const std::size_t L = L_list[e];

        Vec finals(config.runs, 0.0);
        std::vector<std::uint64_t> seeds(config.runs, 0);
        parallel_for(config.runs, ctx.workers, [&](std::size_t run) {
            RngStream run_rng = ctx.sweep_stream(e, run);
            seeds[run] = run_rng.stream_id();

            OptimizerConfig opt;
            opt.step_size = config.step_size;
            opt.max_iters = config.iters;
            opt.mode = OptMode::stochastic;
            opt.batch_size = config.batch;
            opt.prompt_length = L;
            opt.rng = run_rng.derive(2);

            const OptTrace trace = with_run_context(run, [&] {
                if (icl) {
                    opt.align_target = model.spike();
                    return icl_sgd(model, config.lambda, opt);
                }
                opt.align_target = cov.eigenvector(0);
                const Vec mu0 = sample_unit_sphere(config.dimension, run_rng.derive(1));
                const AttnParam param(mu0, config.lambda);
                return config.attention == "lin" ? sgd_finite_prompt_linear(cov, param, opt)
                                                 : sgd_finite_prompt(cov, param, opt);
            });
            finals[run] = trace.final_alignment();
        });

        for (std::size_t run = 0; run < config.runs; ++run)
            sink.add(run, static_cast<double>(L), "final_alignment", finals[run],
                     std::nullopt, seeds[run]);
        const double mean = mean_of(finals);
        sink.add(0, static_cast<double>(L), "mean_final_alignment", mean,
                 stderr_of(finals, mean), ctx.root.stream_id());
        ++completed;
    }
    ctx.manifest["completed_sweep_points"] = std::to_string(completed);
}

void run_sweep_d(const StudyContext& ctx, RowSink& sink) {
    const ExperimentConfig& config = ctx.config;
    const bool icl = config.experiment == ExperimentKind::icl_sweep_d;
    std::vector<std::size_t> d_list = config.d_list.empty() ? default_d_list() : config.d_list;

    for (std::size_t e = 0; e < d_list.size(); ++e) {
        if (e > 0 && ctx.over_budget()) {
            ctx.manifest["budget_warning"] =
                "budget exceeded; stopped before d = " + std::to_string(d_list[e]);
            break;
        }
        const std::size_t d = d_list[e];
        const ScaledDefaults defaults = scaled_defaults(config.experiment, config.attention, d);
        const double gamma =
            config.is_explicit("step_size") ? config.step_size : defaults.step_size;
        const double lambda = config.is_explicit("lambda") ? config.lambda : defaults.lambda;
        const std::size_t L = config.is_explicit("prompt_length")
                                  ? config.prompt_length
                                  : defaults.prompt_length.value_or(config.prompt_length);
        const std::size_t dof = icl ? (config.is_explicit("dof") ? config.dof : d) : config.dof;

        const CovarianceModel cov =
            build_experiment_covariance(d, ctx.root.derive(kSigmaChild + e));
        const Vec spike = sample_unit_sphere(d, ctx.root.derive(kSpikeChild + e));

        Vec finals(config.runs, 0.0);
        std::vector<std::uint64_t> seeds(config.runs, 0);
        parallel_for(config.runs, ctx.workers, [&](std::size_t run) {
            RngStream run_rng = ctx.sweep_stream(e, run);
            seeds[run] = run_rng.stream_id();
            const Vec mu0 = sample_unit_sphere(d, run_rng.derive(1));

            OptimizerConfig opt;
            opt.step_size = gamma;
            opt.max_iters = config.iters;
            opt.rng = run_rng.derive(2);

            const OptTrace trace = with_run_context(run, [&] {
                if (icl) {
                    const SpikedWishartModel model(config.xi2, config.theta, spike, dof);
                    opt.align_target = spike;
                    return gradient_descent(make_icl_inf_objective(model, lambda), mu0, opt);
                }
                opt.align_target = cov.eigenvector(0);
                return config.attention == "lin"
                           ? gradient_descent(make_lin_finite_objective(cov, lambda, L), mu0,
                                              opt)
                           : gradient_descent(make_soft_inf_objective(cov, lambda), mu0, opt);
            });
            finals[run] = trace.final_alignment();
        });

        for (std::size_t run = 0; run < config.runs; ++run)
            sink.add(run, static_cast<double>(d), "final_alignment", finals[run],
                     std::nullopt, seeds[run]);
        const double mean = mean_of(finals);
        sink.add(0, static_cast<double>(d), "mean_final_alignment", mean,
                 stderr_of(finals, mean), ctx.root.stream_id());
        sink.add(0, static_cast<double>(d), "effective_step_size", gamma, std::nullopt,
                 ctx.root.stream_id());
        sink.add(0, static_cast<double>(d), "effective_lambda", lambda, std::nullopt,
                 ctx.root.stream_id());
    }
}

double kind_code(CriticalKind kind) {
    switch (kind) {
        case CriticalKind::local_max: return 0.0;
        case CriticalKind::strict_saddle: return 1.0;
        case CriticalKind::local_min: return 2.0;
        case CriticalKind::degenerate: return 3.0;
    }
    return -1.0;
}

void run_landscape_report(const StudyContext& ctx, RowSink& sink) {
    const ExperimentConfig& config = ctx.config;
    const CovarianceModel cov =
        build_experiment_covariance(config.dimension, ctx.root.derive(kSigmaChild));
    const std::uint64_t seed = ctx.root.stream_id();

    const auto emit_points = [&](const std::vector<CriticalPoint>& points,
                                 const std::string& prefix, auto&& risk_at) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            const CriticalPoint& p = points[i];
            const RiskEval eval = risk_at(p.location);
            sink.add(0, static_cast<double>(i), prefix + "_risk", eval.value, std::nullopt,
                     seed);
            sink.add(0, static_cast<double>(i), prefix + "_grad_norm", norm(*eval.gradient),
                     std::nullopt, seed);
            sink.add(0, static_cast<double>(i), prefix + "_hess_min",
                     p.hessian_spectrum.front(), std::nullopt, seed);
            sink.add(0, static_cast<double>(i), prefix + "_hess_max",
                     p.hessian_spectrum.back(), std::nullopt, seed);
            sink.add(0, static_cast<double>(i), prefix + "_kind", kind_code(p.kind),
                     std::nullopt, seed);
        }
    };

    emit_points(critical_points_soft_inf(cov, config.lambda), "soft",
                [&](const Vec& mu) { return risk_soft_inf(AttnParam(mu, config.lambda), cov); });
    emit_points(critical_points_lin(cov, config.lambda, config.prompt_length), "lin",
                [&](const Vec& mu) {
                    return risk_lin_finite(AttnParam(mu, config.lambda), cov,
                                           config.prompt_length);
                });
    if (config.dimension >= 2)
        sink.add(0, 0.0, "predicted_rate", predicted_rate_soft_inf(cov, config.lambda),
                 std::nullopt, seed);
}

void run_concentration(const StudyContext& ctx, RowSink& sink) {
    const ExperimentConfig& config = ctx.config;
    const CovarianceModel cov =
        build_experiment_covariance(config.dimension, ctx.root.derive(kSigmaChild));
    std::vector<std::size_t> L_list =
        config.L_list.empty() ? std::vector<std::size_t>{10, 100, 1000, 10000} : config.L_list;

    // Probe at the trained parameter μ* = u₁/√(λσ₁).
    const Vec mu = scaled(cov.eigenvector(0), 1.0 / std::sqrt(config.lambda * cov.eigenvalue(0)));
    const AttnParam param(mu, config.lambda);
    const ConcentrationTable table = concentration_sweep(
        cov, param, L_list, config.n_samples, ctx.root.derive(3), 0);

    const std::uint64_t seed = ctx.root.stream_id();
    for (const auto& row : table.rows) {
        sink.add(0, static_cast<double>(row.L), "output_gap_mse", row.estimate,
                 row.std_error, seed);
        sink.add(0, static_cast<double>(row.L), "bound_psi0", row.bound, std::nullopt, seed);
    }
    sink.add(0, 0.0, "fitted_log_log_slope", table.fitted_slope, std::nullopt, seed);
    sink.add(0, 0.0, "epsilon_0", table.epsilon, std::nullopt, seed);
}

void run_w2_probe(const StudyContext& ctx, RowSink& sink) {
    const ExperimentConfig& config = ctx.config;
    const CovarianceModel cov =
        build_experiment_covariance(config.dimension, ctx.root.derive(kSigmaChild));
    std::vector<std::size_t> L_list =
        config.L_list.empty() ? std::vector<std::size_t>{10, 100, 1000} : config.L_list;

    const auto rows =
        w2_convergence_probe(cov, config.lambda, L_list, config.n_samples, ctx.root.derive(3));
    const std::uint64_t seed = ctx.root.stream_id();
    for (const auto& row : rows) {
        sink.add(0, static_cast<double>(row.L), "bures_surrogate_w2", row.bures_surrogate,
                 std::nullopt, seed);
        sink.add(0, static_cast<double>(row.L), "projected_w2_1d", row.w2_1d, std::nullopt,
                 seed);
        sink.add(0, static_cast<double>(row.L), "bound_psi", row.bound, std::nullopt, seed);
    }
}

void run_oja_check(const StudyContext& ctx, RowSink& sink) {
    const ExperimentConfig& config = ctx.config;
    const CovarianceModel cov =
        build_experiment_covariance(config.dimension, ctx.root.derive(kSigmaChild));
    const Vec mu0 = sample_unit_sphere(config.dimension, ctx.root.derive(7));
    const double dt = config.step_size;
    const double horizon = dt * static_cast<double>(config.iters);

    const OjaReport full = oja_equivalence_check(cov, config.lambda, mu0, horizon, dt);
    const OjaReport half = oja_equivalence_check(cov, config.lambda, mu0, horizon, dt / 2.0);

    const std::uint64_t seed = ctx.root.stream_id();
    sink.add(0, dt, "max_deviation", full.max_deviation, std::nullopt, seed);
    sink.add(0, dt / 2.0, "max_deviation", half.max_deviation, std::nullopt, seed);
    sink.add(0, 0.0, "richardson_ratio", full.max_deviation / half.max_deviation,
             std::nullopt, seed);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, unsigned workers,
                                double budget_seconds) {
    ExperimentResult result;
    const auto start = Clock::now();

    StudyContext ctx{config, RngStream(config.master_seed, 0), std::max(1u, workers),
                     budget_seconds, start, result.manifest_entries};
    RowSink sink{result.rows, to_string(config.experiment)};

    switch (config.experiment) {
        case ExperimentKind::align_soft_finite:
        case ExperimentKind::align_soft_inf:
        case ExperimentKind::align_lin_finite:
        case ExperimentKind::align_lin_inf:
            run_alignment_study(ctx, sink);
            break;
        case ExperimentKind::icl_align_finite:
        case ExperimentKind::icl_align_inf:
            run_icl_alignment_study(ctx, sink);
            break;
        case ExperimentKind::sweep_L:
        case ExperimentKind::icl_sweep_L:
            run_sweep_L(ctx, sink);
            break;
        case ExperimentKind::sweep_d:
        case ExperimentKind::icl_sweep_d:
            run_sweep_d(ctx, sink);
            break;
        case ExperimentKind::landscape_report:
            run_landscape_report(ctx, sink);
            break;
        case ExperimentKind::concentration:
            run_concentration(ctx, sink);
            break;
        case ExperimentKind::w2_probe:
            run_w2_probe(ctx, sink);
            break;
        case ExperimentKind::oja_check:
            run_oja_check(ctx, sink);
            break;
    }

    result.wall_time_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return result;
}

std::string to_csv(const std::vector<ResultRow>& rows) {
    std::string out = "experiment,run,step,metric,value,stderr,seed\n";
    for (const ResultRow& row : rows) {
        out += row.experiment;
        out += ',';
        out += std::to_string(row.run);
        out += ',';
        out += format_double(row.step);
        out += ',';
        out += row.metric;
        out += ',';
        out += format_double(row.value);
        out += ',';
        if (row.std_error) out += format_double(*row.std_error);
        out += ',';
        out += std::to_string(row.seed);
        out += '\n';
    }
    return out;
}

std::string to_manifest_json(const ExperimentConfig& config,
                             const ExperimentResult& result) {
    json manifest;
    manifest["library_version"] = kVersion;
    manifest["wall_time_seconds"] = result.wall_time_seconds;

    json cfg;
    cfg["experiment"] = to_string(config.experiment);
    cfg["dimension"] = config.dimension;
    cfg["lambda"] = config.lambda;
    cfg["step_size"] = config.step_size;
    cfg["iters"] = config.iters;
    cfg["batch"] = config.batch;
    cfg["prompt_length"] = config.prompt_length;
    cfg["L_list"] = config.L_list;
    cfg["d_list"] = config.d_list;
    cfg["runs"] = config.runs;
    cfg["master_seed"] = config.master_seed;
    cfg["attention"] = config.attention;
    cfg["xi2"] = config.xi2;
    cfg["theta"] = config.theta;
    cfg["dof"] = config.dof;
    cfg["n_samples"] = config.n_samples;
    cfg["record_every"] = config.record_every;
    cfg["output_path"] = config.output_path;
    cfg["explicit_keys"] = config.explicit_keys;
    manifest["config"] = cfg;

    json derived;
    for (const auto& [key, value] : result.manifest_entries) derived[key] = value;
    manifest["derived"] = derived;
    return manifest.dump(2) + "\n";
}

}  // namespace attnpca
