// attn-pca: config-driven experiment runner.
//
//   attn-pca run --config cfg.json [--out DIR] [--workers N] [--budget-seconds S]
//   attn-pca validate --config cfg.json
//   attn-pca schema
//
// Exit codes: 0 success, 2 config error, 3 numeric failure.
// ATTN_PCA_SEED overrides the config's master_seed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "attnpca/experiment.hpp"
#include "attnpca/optim.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericError = 3;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw attnpca::ConfigError("config error: cannot open \"" + path + "\"");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

attnpca::ExperimentConfig load_config(const std::string& path) {
    attnpca::ExperimentConfig config = attnpca::parse_experiment_config(read_file(path));
    if (const char* env_seed = std::getenv("ATTN_PCA_SEED")) {
        try {
            config.master_seed = std::stoull(env_seed);
            config.explicit_keys.push_back("master_seed");
        } catch (const std::exception&) {
            throw attnpca::ConfigError("config error: ATTN_PCA_SEED is not an integer: " +
                                       std::string(env_seed));
        }
    }
    return config;
}

int run_command(const std::string& config_path, std::string out_dir, unsigned workers,
                double budget_seconds) {
    const attnpca::ExperimentConfig config = load_config(config_path);
    if (out_dir.empty()) out_dir = config.output_path;

    const attnpca::ExperimentResult result =
        attnpca::run_experiment(config, workers, budget_seconds);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string base = attnpca::to_string(config.experiment);
    const fs::path csv_path = fs::path(out_dir) / (base + "_results.csv");
    const fs::path manifest_path = fs::path(out_dir) / (base + "_manifest.json");

    std::ofstream csv(csv_path, std::ios::binary);
    csv << attnpca::to_csv(result.rows);
    csv.close();
    std::ofstream manifest(manifest_path, std::ios::binary);
    manifest << attnpca::to_manifest_json(config, result);
    manifest.close();

    std::cout << "wrote " << csv_path.string() << " (" << result.rows.size()
              << " rows) and " << manifest_path.string() << " in "
              << result.wall_time_seconds << " s\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rank-one attention PCA experiment runner"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    unsigned workers = 1;
    double budget_seconds = 0.0;

    CLI::App* run = app.add_subcommand("run", "run an experiment from a JSON config");
    run->add_option("--config", config_path, "path to the JSON config")->required();
    run->add_option("--out", out_dir, "output directory (default: config output_path)");
    run->add_option("--workers", workers, "parallel workers for multi-run studies");
    run->add_option("--budget-seconds", budget_seconds,
                    "truncate sweeps after this many seconds (manifest records it)");

    CLI::App* validate = app.add_subcommand("validate", "parse and validate a config");
    validate->add_option("--config", config_path, "path to the JSON config")->required();

    CLI::App* schema = app.add_subcommand("schema", "print the config JSON schema");

    CLI11_PARSE(app, argc, argv);

    try {
        if (schema->parsed()) {
            std::cout << attnpca::experiment_config_schema() << "\n";
            return 0;
        }
        if (validate->parsed()) {
            load_config(config_path);
            std::cout << "config ok\n";
            return 0;
        }
        return run_command(config_path, out_dir, workers, budget_seconds);
    } catch (const attnpca::ConfigError& err) {
        std::cerr << err.what() << "\n";
        return kExitConfigError;
    } catch (const attnpca::OptimError& err) {
        std::cerr << "numeric failure: " << err.what() << "\n";
        return kExitNumericError;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitNumericError;
    }
}
