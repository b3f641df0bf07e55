#pragma once

// Internal helpers shared by the harness translation units. Not installed.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "subsel/dataset.hpp"
#include "subsel/harness.hpp"

namespace subsel {
namespace harness_detail {

using njson = nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes);

// Deterministic sub-seed for a named piece of work under a base seed.
std::uint64_t derive_seed(std::uint64_t base, const std::string& tag);

// floor(frac * total) with a truncation guard; shared by validation and the
// space/budget computations so they can never disagree.
std::size_t split_size(double frac, std::size_t total);

// sysname-release-machine-c<threads>; identifies where wall-clock numbers
// were measured.
std::string machine_fingerprint();

// Stable short spelling of a fraction for file names and cell keys ("0.1").
std::string format_frac(double f);

njson read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const njson& j);

// stage.json marker: {stage, digest, complete, fingerprint, seconds}.
void write_stage_marker(const std::filesystem::path& stage_dir, const std::string& stage,
                        const std::string& digest, double seconds);
bool stage_complete(const std::filesystem::path& stage_dir, const std::string& digest);
double stage_seconds(const std::filesystem::path& stage_dir);
std::string stage_fingerprint(const std::filesystem::path& stage_dir);

// Bounded worker pool over [0, n); tasks must only touch task-local state and
// their own output files. The first exception is rethrown after all workers
// finish.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

njson config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const njson& j);

// Digest chain: each stage hashes its own config slice plus its upstream
// stage digests, so any upstream change invalidates everything downstream.
struct StageDigests {
    std::string space;
    std::string data;
    std::string zoo;
    std::string encoder;
    std::string approximator;
    std::string inductive;
    std::string selections;
    std::string downstream;
    std::string report;
};
StageDigests compute_digests(const ExperimentConfig& config);

// Architecture split sizes: floor(frac * M) for train and val, remainder test.
struct ArchSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};
void save_arch_split(const std::filesystem::path& path, const ArchSplit& split);
ArchSplit load_arch_split(const std::filesystem::path& path);

// Exact dataset persistence (doubles round-trip through JSON) plus a
// plot-ready CSV copy.
void save_bundle(const DatasetBundle& data, const std::filesystem::path& dir);
DatasetBundle load_bundle(const std::filesystem::path& dir);

struct SelectionRecord {
    std::string arch_id;
    std::string method;
    double b_frac = 0.0;
    std::size_t b = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> indices;  // sorted set view
    std::vector<std::size_t> order;    // method-native pick order
    std::string pi_digest;
    std::string config_digest;
    double select_seconds = 0.0;
    std::uint64_t select_grad_evals = 0;
    std::string fingerprint;
};
std::filesystem::path selection_path(const std::filesystem::path& run_dir,
                                     const std::string& method, const std::string& arch_id,
                                     double b_frac, std::uint64_t seed);
void save_selection(const std::filesystem::path& path, const SelectionRecord& rec);
SelectionRecord load_selection(const std::filesystem::path& path);

struct DownstreamRecord {
    std::string arch_id;
    std::string method;  // "full" for the full-data reference run
    double b_frac = 0.0;
    std::size_t b = 0;
    std::uint64_t seed = 0;
    std::string status = "ok";
    std::string reason;
    double acc_test = 0.0;
    double seconds = 0.0;
    std::uint64_t grad_evals = 0;
    std::string fingerprint;
};
std::filesystem::path downstream_path(const std::filesystem::path& run_dir,
                                      const std::string& arch_id, const std::string& method,
                                      double b_frac, std::uint64_t seed);
void save_downstream(const std::filesystem::path& path, const DownstreamRecord& rec);
DownstreamRecord load_downstream(const std::filesystem::path& path);

// Budget in instances for a fraction of the training split: at least 1,
// at most the full split.
std::size_t budget_from_frac(double frac, std::size_t n_train);

// Map selection indices (positions within the training split) to global
// dataset rows and produce a bundle whose train split is exactly the subset.
DatasetBundle restrict_to_subset(const DatasetBundle& data,
                                 const std::vector<std::size_t>& subset);

// Loads the trained encoder/approximator/inductive checkpoints from the run
// directory into freshly constructed parameter sets.
EncoderParams load_encoder_from_run(const ExperimentConfig& config,
                                    const std::filesystem::path& run_dir);
ApproximatorParams load_approximator_from_run(const ExperimentConfig& config,
                                              const std::filesystem::path& run_dir,
                                              const std::string& subdir = "");
InductiveParams load_inductive_from_run(const ExperimentConfig& config,
                                        const std::filesystem::path& run_dir,
                                        const std::string& subdir = "");

// Zoo prediction targets for one arch, renormalized per row (f32 storage
// perturbs row sums by ~1e-7; downstream KL validation is strict).
Tensor load_targets(const std::filesystem::path& run_dir, const std::string& arch_id,
                    std::size_t n_train, std::size_t classes);

// Supervision/validation arch ids chosen by the zoo stage.
struct ZooRoles {
    std::vector<std::string> supervision;
    std::vector<std::string> validation;
};
void save_zoo_roles(const std::filesystem::path& run_dir, const ZooRoles& roles);
ZooRoles load_zoo_roles(const std::filesystem::path& run_dir);

// ApproxConfig with dataset-dependent fields filled in.
ApproxConfig resolved_approx_config(const ExperimentConfig& config, ApproxVariant variant);
InductiveConfig resolved_inductive_config(const ExperimentConfig& config);

// Copies parameter values by name (shapes must match). Used to hand each
// selection task its own private copy of shared trained parameters.
void copy_param_values(const ParamSet& src, ParamSet& dst);

// Report-facing method tags: "hybrid" expands into one tag per superset
// fraction ("hybrid_B<frac>"), everything else passes through.
std::vector<std::string> expanded_methods(const ExperimentConfig& config);

// Stage dir names under run_dir, in pipeline order.
std::filesystem::path stage_dir(const std::filesystem::path& run_dir, const std::string& stage);

// Throws StageError(current) when an upstream stage is missing or stale.
void require_stage(const std::filesystem::path& run_dir, const std::string& upstream,
                   const std::string& digest, const std::string& current);

}  // namespace harness_detail
}  // namespace subsel
