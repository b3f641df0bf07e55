// Command-line driver for the subset-selection pipeline. Each subcommand
// runs one stage against a run directory; stages are idempotent, so
// rerunning a finished stage (or `run-all` over a finished run) is a no-op.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "subsel/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CliOptions {
    std::string run_dir = "run";
    std::string config_path;
    bool smoke = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
};

subsel::ExperimentConfig resolve_config(const CliOptions& opt) {
    subsel::ExperimentConfig config;
    if (!opt.config_path.empty())
        config = subsel::load_experiment_config(opt.config_path);
    else if (opt.smoke)
        config = subsel::smoke_config();
    if (opt.seed) config.seeds = {*opt.seed};
    if (opt.workers) config.workers = *opt.workers;
    subsel::validate_config(config);
    return config;
}

void print_report(const subsel::RunReport& report) {
    std::printf("config digest      %s\n", report.config_digest.c_str());
    std::printf("machine            %s%s\n", report.machine_fingerprint.c_str(),
                report.mixed_machines ? "  (artifacts from multiple machines)" : "");
    std::printf("amortized overhead %.2fs (encoder + approximator + inductive)\n",
                report.amortized_overhead_seconds);
    std::printf("%-24s %8s %10s %10s %10s %10s\n", "method", "b_frac", "RAR", "speedup",
                "kendall", "jaccard");
    for (const subsel::MethodAggregate& a : report.aggregates)
        std::printf("%-24s %8.3f %10.4f %10.2f %10.3f %10.3f\n", a.method.c_str(), a.b_frac,
                    a.rar_mean, a.speedup, a.kendall_tau, a.jaccard);
    std::size_t failed = 0;
    for (const subsel::ReportCell& c : report.cells)
        if (c.status != "ok") ++failed;
    if (failed > 0)
        std::printf("%zu of %zu cells failed; see cells.csv for reasons\n", failed,
                    report.cells.size());
    if (!report.ablation_cells.empty()) {
        std::printf("\nablation (b_frac %.3f):\n", report.ablation_cells.front().b_frac);
        std::printf("%-14s %-14s %10s\n", "variant", "strategy", "RAR");
        for (const subsel::AblationCell& c : report.ablation_cells)
            std::printf("%-14s %-14s %10.4f\n", c.variant.c_str(), c.strategy.c_str(), c.rar);
        std::printf("attention beaten by feedforward in %zu of %zu fidelity repeats\n",
                    report.ablation_kl_reversals, report.ablation_attention_kl_repeats.size());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"architecture-conditioned training-data subset selection"};
    app.require_subcommand(1);

    CliOptions opt;
    app.add_option("--config", opt.config_path, "experiment config JSON (defaults apply if omitted)");
    app.add_option("--run-dir", opt.run_dir, "artifact directory for this run");
    app.add_flag("--smoke", opt.smoke, "use the small smoke-test preset instead of defaults");
    std::uint64_t seed_arg = 0;
    auto* seed_opt = app.add_option("--seed", seed_arg, "replace the config's seed list with this single seed");
    std::size_t workers_arg = 0;
    auto* workers_opt = app.add_option("--workers", workers_arg, "parallel worker threads");

    // stage name -> runner, registered as subcommands in pipeline order
    struct Sub {
        const char* name;
        const char* help;
        void (*run)(const subsel::ExperimentConfig&, const std::filesystem::path&);
    };
    const Sub stage_subs[] = {
        {"gen-space", "sample the architecture space and split it", subsel::stage_space},
        {"make-data", "materialize the dataset bundle", subsel::stage_data},
        {"pretrain-zoo", "pretrain the model zoo used as supervision", subsel::stage_zoo},
        {"train-encoder", "train the variational graph encoder", subsel::stage_encoder},
        {"train-approximator", "train the model approximator", subsel::stage_approximator},
        {"train-inductive", "train the inductive subset scorer", subsel::stage_inductive},
        {"select", "run every selection method over the test architectures",
         subsel::stage_selections},
        {"train-on-subset", "retrain test architectures on full data and subsets",
         subsel::stage_downstream},
        {"evaluate", "compute metrics from selections and retraining runs",
         subsel::stage_evaluate},
    };
    for (const Sub& s : stage_subs) app.add_subcommand(s.name, s.help);
    auto* report_cmd = app.add_subcommand("report", "assemble and print the run report");
    auto* run_all_cmd = app.add_subcommand("run-all", "run the whole pipeline end to end");
    auto* ablate_cmd = app.add_subcommand(
        "ablate", "approximator-variant x selection-strategy matrix on a finished run");

    CLI11_PARSE(app, argc, argv);
    if (*seed_opt) opt.seed = seed_arg;
    if (*workers_opt) opt.workers = workers_arg;

    subsel::ExperimentConfig config;
    try {
        config = resolve_config(opt);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }

    const std::filesystem::path run_dir = opt.run_dir;
    try {
        if (*run_all_cmd) {
            print_report(subsel::run_pipeline(config, run_dir));
        } else if (*report_cmd) {
            print_report(subsel::stage_report(config, run_dir));
        } else if (*ablate_cmd) {
            print_report(subsel::ablation_matrix(config, run_dir));
        } else {
            for (const Sub& s : stage_subs)
                if (app.get_subcommand(s.name)->parsed()) {
                    s.run(config, run_dir);
                    std::printf("%s: done\n", s.name);
                    break;
                }
        }
    } catch (const subsel::StageError& e) {
        std::fprintf(stderr, "stage '%s' failed: %s\n", e.stage().c_str(), e.what());
        return kExitStage;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitStage;
    }
    return kExitOk;
}
