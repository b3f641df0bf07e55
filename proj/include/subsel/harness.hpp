#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "subsel/approximator.hpp"
#include "subsel/archspace.hpp"
#include "subsel/dataset.hpp"
#include "subsel/encoder.hpp"
#include "subsel/sampler.hpp"
#include "subsel/zoo.hpp"

namespace subsel {

// Synthetic blobs by default; "csv" ingests an external table instead.
struct DatasetSpec {
    std::string kind = "blobs";  // blobs | csv
    std::size_t n = 600;
    std::size_t d_x = 16;
    std::size_t classes = 3;
    double separation = 4.0;
    std::string csv_path;      // kind == csv
    std::string label_column;  // kind == csv
};

// One experiment end to end. Shared stages (space through inductive) run off
// seeds[0]; the per-seed repetition covers selection draws and downstream
// training, which is where the metrics' variance lives.
struct ExperimentConfig {
    std::vector<std::uint64_t> seeds = {1};
    std::size_t workers = 1;

    // architecture space and its 70/10/20 split
    std::size_t space_count = 40;
    Constraints constraints;
    double arch_train_frac = 0.7;
    double arch_val_frac = 0.1;

    DatasetSpec dataset;

    // model zoo (supervision targets for the approximator)
    std::size_t zoo_train_models = 12;
    std::size_t d_hidden = 32;
    PretrainConfig pretrain;

    TrainEncoderConfig encoder_train{.epochs = 10, .lr = 1e-3, .batch = 16, .seed = 0};
    EncoderConfig encoder_net;

    ApproxTrainConfig approx_train;
    ApproxConfig approx_net;  // d_x/classes/in_width filled from dataset+encoder

    // selection
    std::vector<std::string> methods = {"transductive", "inductive",   "hybrid",
                                        "random",       "facility_location",
                                        "bottom_b_loss"};
    std::vector<double> budget_fracs = {0.05, 0.1, 0.3};
    double lambda = 0.1;
    std::size_t transductive_steps = 200;
    double transductive_lr = 0.05;
    std::size_t inductive_epochs = 60;
    double inductive_lr = 1e-3;
    double lambda_prime = 0.1;
    double inductive_train_b_frac = 0.1;  // budget the scorer is trained against
    std::vector<double> hybrid_b_fracs = {0.5};
    double gumbel_scale = 0.025;   // bottom_b_loss_gumbel
    std::size_t warmup_epochs = 5; // el2n / grand

    // downstream training of test architectures (same recipe family as zoo)
    PretrainConfig downstream;

    // report
    std::size_t ranking_k = 15;

    // ablation grid
    double ablation_b_frac = 0.1;
    std::size_t ablation_kl_repeats = 5;
};

void validate_config(const ExperimentConfig& config);
std::string config_digest(const ExperimentConfig& config);  // stable hash of canonical JSON
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const ExperimentConfig& config, const std::filesystem::path& path);

// Tiny end-to-end configuration used by smoke tests: 3-architecture space,
// small blobs, short trainings.
ExperimentConfig smoke_config();

// Stage failures halt the pipeline but keep partial artifacts on disk.
class StageError : public std::runtime_error {
  public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

  private:
    std::string stage_;
};

// One (method, arch, b, seed) measurement. Failed cells stay in the report
// with status/reason instead of silently disappearing.
struct ReportCell {
    std::string method;
    std::string arch_id;
    double b_frac = 0.0;
    std::size_t b = 0;
    std::uint64_t seed = 0;
    std::string status = "ok";  // ok | failed
    std::string reason;
    double acc_subset = 0.0;
    double acc_full = 0.0;
    double select_seconds = 0.0;
    double train_seconds = 0.0;
    double full_train_seconds = 0.0;
    std::uint64_t select_grad_evals = 0;
    std::uint64_t train_grad_evals = 0;
    std::uint64_t full_train_grad_evals = 0;
};

struct MethodAggregate {
    std::string method;
    double b_frac = 0.0;
    double rar_mean = 0.0;
    double rar_std = 0.0;  // over seeds
    double speedup = 0.0;
    double kendall_tau = 0.0;  // mean over seeds
    double jaccard = 0.0;
    double mean_select_grad_evals = 0.0;
    double mean_train_grad_evals = 0.0;
};

struct AblationCell {
    std::string variant;   // attention | feedforward | recurrent
    std::string strategy;  // uncertainty | loss | inductive
    double b_frac = 0.0;
    double rar = 0.0;
};

struct RunReport {
    std::string config_digest;
    std::string machine_fingerprint;
    bool mixed_machines = false;
    std::vector<std::string> fingerprints_seen;
    double amortized_overhead_seconds = 0.0;  // encoder + approximator + inductive training
    std::vector<ReportCell> cells;
    std::vector<MethodAggregate> aggregates;

    // ablation extras (empty unless ablation_matrix ran)
    std::vector<AblationCell> ablation_cells;
    std::map<std::string, double> ablation_val_kl;       // variant -> validation KL
    std::vector<double> ablation_attention_kl_repeats;   // per repeat seed
    std::vector<double> ablation_feedforward_kl_repeats;
    std::size_t ablation_kl_reversals = 0;  // repeats where feedforward beat attention
};

// Individual stages; each is idempotent (a digest over its config slice and
// upstream digests is persisted next to its artifacts, and matching digests
// skip recomputation). All paths live under run_dir.
void stage_space(const ExperimentConfig& config, const std::filesystem::path& run_dir);
void stage_data(const ExperimentConfig& config, const std::filesystem::path& run_dir);
void stage_zoo(const ExperimentConfig& config, const std::filesystem::path& run_dir);
void stage_encoder(const ExperimentConfig& config, const std::filesystem::path& run_dir);
void stage_approximator(const ExperimentConfig& config, const std::filesystem::path& run_dir);
void stage_inductive(const ExperimentConfig& config, const std::filesystem::path& run_dir);
void stage_selections(const ExperimentConfig& config, const std::filesystem::path& run_dir);
void stage_downstream(const ExperimentConfig& config, const std::filesystem::path& run_dir);
void stage_evaluate(const ExperimentConfig& config, const std::filesystem::path& run_dir);
RunReport stage_report(const ExperimentConfig& config, const std::filesystem::path& run_dir);

// All stages in order. Throws StageError naming the failed stage; artifacts
// produced before the failure stay on disk.
RunReport run_pipeline(const ExperimentConfig& config, const std::filesystem::path& run_dir);

// 3 approximator variants x 3 selection strategies on an already-trained
// pipeline, plus the per-variant validation KL comparison (attention vs
// feedforward over ablation_kl_repeats seeds).
RunReport ablation_matrix(const ExperimentConfig& config, const std::filesystem::path& run_dir);

// Uncertainty / loss ablation strategies (deterministic, index tie-break).
std::vector<std::size_t> uncertainty_top_b(const Tensor& o, std::size_t b);
std::vector<std::size_t> loss_bottom_b(const std::vector<double>& losses, std::size_t b);

}  // namespace subsel
