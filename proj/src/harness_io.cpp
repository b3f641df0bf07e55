#include <algorithm>
#include <set>
#include <stdexcept>

#include "harness_detail.hpp"
#include "subsel/checkpoint.hpp"
#include "subsel/util.hpp"
#include "subsel/zoo.hpp"

namespace subsel {
namespace harness_detail {

std::filesystem::path stage_dir(const std::filesystem::path& run_dir, const std::string& stage) {
    return run_dir / stage;
}

std::vector<std::string> expanded_methods(const ExperimentConfig& config) {
    std::vector<std::string> tags;
    for (const std::string& m : config.methods) {
        if (m == "hybrid") {
            for (const double f : config.hybrid_b_fracs)
                tags.push_back("hybrid_B" + format_frac(f));
        } else {
            tags.push_back(m);
        }
    }
    return tags;
}

void require_stage(const std::filesystem::path& run_dir, const std::string& upstream,
                   const std::string& digest, const std::string& current) {
    if (!stage_complete(stage_dir(run_dir, upstream), digest))
        throw StageError(current, "upstream stage '" + upstream +
                                      "' is missing or stale; rerun it first");
}

void save_arch_split(const std::filesystem::path& path, const ArchSplit& split) {
    njson j;
    j["train"] = split.train;
    j["val"] = split.val;
    j["test"] = split.test;
    write_json_file(path, j);
}

ArchSplit load_arch_split(const std::filesystem::path& path) {
    const njson j = read_json_file(path);
    ArchSplit split;
    split.train = j.at("train").get<std::vector<std::string>>();
    split.val = j.at("val").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
    return split;
}

void save_bundle(const DatasetBundle& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    njson j;
    j["d_x"] = data.dim();
    j["classes"] = data.classes;
    j["labels"] = data.labels;
    j["features"] = data.features.data;  // doubles round-trip exactly through JSON
    j["train_idx"] = data.train_idx;
    j["val_idx"] = data.val_idx;
    j["test_idx"] = data.test_idx;
    write_json_file(dir / "dataset.json", j);
    export_csv(data, dir / "dataset.csv");  // plot-ready copy
}

DatasetBundle load_bundle(const std::filesystem::path& dir) {
    const njson j = read_json_file(dir / "dataset.json");
    DatasetBundle data;
    const std::size_t d_x = j.at("d_x").get<std::size_t>();
    data.classes = j.at("classes").get<std::size_t>();
    data.labels = j.at("labels").get<std::vector<std::size_t>>();
    std::vector<double> flat = j.at("features").get<std::vector<double>>();
    if (data.labels.empty() || flat.size() != data.labels.size() * d_x)
        throw std::invalid_argument("dataset.json: feature/label size mismatch");
    data.features = Tensor::matrix(data.labels.size(), d_x, std::move(flat));
    data.train_idx = j.at("train_idx").get<std::vector<std::size_t>>();
    data.val_idx = j.at("val_idx").get<std::vector<std::size_t>>();
    data.test_idx = j.at("test_idx").get<std::vector<std::size_t>>();
    return data;
}

std::filesystem::path selection_path(const std::filesystem::path& run_dir,
                                     const std::string& method, const std::string& arch_id,
                                     double b_frac, std::uint64_t seed) {
    return run_dir / "selections" / method / arch_id /
           ("b" + format_frac(b_frac) + "_s" + std::to_string(seed) + ".json");
}

void save_selection(const std::filesystem::path& path, const SelectionRecord& rec) {
    std::filesystem::create_directories(path.parent_path());
    njson j;
    j["arch_id"] = rec.arch_id;
    j["method"] = rec.method;
    j["b_frac"] = rec.b_frac;
    j["b"] = rec.b;
    j["seed"] = rec.seed;
    j["indices"] = rec.indices;
    j["order"] = rec.order;
    j["pi_digest"] = rec.pi_digest;
    j["config_digest"] = rec.config_digest;
    j["select_seconds"] = rec.select_seconds;
    j["select_grad_evals"] = rec.select_grad_evals;
    j["fingerprint"] = rec.fingerprint;
    write_json_file(path, j);
}

SelectionRecord load_selection(const std::filesystem::path& path) {
    const njson j = read_json_file(path);
    SelectionRecord rec;
    rec.arch_id = j.at("arch_id").get<std::string>();
    rec.method = j.at("method").get<std::string>();
    rec.b_frac = j.at("b_frac").get<double>();
    rec.b = j.at("b").get<std::size_t>();
    rec.seed = j.at("seed").get<std::uint64_t>();
    rec.indices = j.at("indices").get<std::vector<std::size_t>>();
    rec.order = j.at("order").get<std::vector<std::size_t>>();
    rec.pi_digest = j.value("pi_digest", "");
    rec.config_digest = j.value("config_digest", "");
    rec.select_seconds = j.value("select_seconds", 0.0);
    rec.select_grad_evals = j.value("select_grad_evals", std::uint64_t{0});
    rec.fingerprint = j.value("fingerprint", "");
    return rec;
}

std::filesystem::path downstream_path(const std::filesystem::path& run_dir,
                                      const std::string& arch_id, const std::string& method,
                                      double b_frac, std::uint64_t seed) {
    const std::string leaf =
        method == "full" ? "full_s" + std::to_string(seed) + ".json"
                         : method + "_b" + format_frac(b_frac) + "_s" + std::to_string(seed) +
                               ".json";
    return run_dir / "downstream" / arch_id / leaf;
}

void save_downstream(const std::filesystem::path& path, const DownstreamRecord& rec) {
    std::filesystem::create_directories(path.parent_path());
    njson j;
    j["arch_id"] = rec.arch_id;
    j["method"] = rec.method;
    j["b_frac"] = rec.b_frac;
    j["b"] = rec.b;
    j["seed"] = rec.seed;
    j["status"] = rec.status;
    j["reason"] = rec.reason;
    j["acc_test"] = rec.acc_test;
    j["seconds"] = rec.seconds;
    j["grad_evals"] = rec.grad_evals;
    j["fingerprint"] = rec.fingerprint;
    write_json_file(path, j);
}

DownstreamRecord load_downstream(const std::filesystem::path& path) {
    const njson j = read_json_file(path);
    DownstreamRecord rec;
    rec.arch_id = j.at("arch_id").get<std::string>();
    rec.method = j.at("method").get<std::string>();
    rec.b_frac = j.at("b_frac").get<double>();
    rec.b = j.at("b").get<std::size_t>();
    rec.seed = j.at("seed").get<std::uint64_t>();
    rec.status = j.value("status", "ok");
    rec.reason = j.value("reason", "");
    rec.acc_test = j.value("acc_test", 0.0);
    rec.seconds = j.value("seconds", 0.0);
    rec.grad_evals = j.value("grad_evals", std::uint64_t{0});
    rec.fingerprint = j.value("fingerprint", "");
    return rec;
}

std::size_t budget_from_frac(double frac, std::size_t n_train) {
    const std::size_t b = split_size(frac, n_train);
    return std::min(std::max<std::size_t>(b, 1), n_train);
}

DatasetBundle restrict_to_subset(const DatasetBundle& data,
                                 const std::vector<std::size_t>& subset) {
    const std::set<std::size_t> unique(subset.begin(), subset.end());
    if (unique.size() != subset.size())
        throw std::invalid_argument("restrict_to_subset: duplicate indices");
    DatasetBundle out = data;
    out.train_idx.clear();
    for (const std::size_t pos : unique) {
        if (pos >= data.train_idx.size())
            throw std::invalid_argument("restrict_to_subset: index beyond training split");
        out.train_idx.push_back(data.train_idx[pos]);  // set iteration = ascending
    }
    return out;
}

ApproxConfig resolved_approx_config(const ExperimentConfig& config, ApproxVariant variant) {
    ApproxConfig a = config.approx_net;
    a.in_width = config.encoder_net.k_stages * config.encoder_net.d;
    a.d_x = config.dataset.d_x;
    a.classes = config.dataset.classes;
    a.variant = variant;
    const std::string tag = std::string("approx_init|") + approx_variant_name(variant);
    a.init_seed = derive_seed(config.seeds.front(), tag);
    return a;
}

InductiveConfig resolved_inductive_config(const ExperimentConfig& config) {
    InductiveConfig ic;
    ic.pooled_width = config.encoder_net.k_stages * config.encoder_net.d;
    ic.d_x = config.dataset.d_x;
    ic.classes = config.dataset.classes;
    ic.init_seed = derive_seed(config.seeds.front(), "inductive_init");
    return ic;
}

void copy_param_values(const ParamSet& src, ParamSet& dst) {
    for (const auto& p : src.all()) dst.at(p->name).value = p->value;
}

EncoderParams load_encoder_from_run(const ExperimentConfig& config,
                                    const std::filesystem::path& run_dir) {
    EncoderConfig ec = config.encoder_net;
    ec.init_seed = derive_seed(config.seeds.front(), "encoder_init");
    EncoderParams enc = make_encoder(ec);
    load_checkpoint(run_dir / "encoder" / "checkpoint.json", run_dir / "encoder" / "checkpoint.bin",
                    enc.params);
    return enc;
}

ApproximatorParams load_approximator_from_run(const ExperimentConfig& config,
                                              const std::filesystem::path& run_dir,
                                              const std::string& subdir) {
    const ApproxVariant variant =
        subdir.empty() ? ApproxVariant::Attention
                       : approx_variant_from_name(subdir.substr(subdir.find('_') + 1));
    ApproximatorParams ap = make_approximator(resolved_approx_config(config, variant));
    const std::filesystem::path base =
        subdir.empty() ? run_dir / "approximator" : run_dir / "approximator" / subdir;
    load_checkpoint(base / "checkpoint.json", base / "checkpoint.bin", ap.params);
    return ap;
}

InductiveParams load_inductive_from_run(const ExperimentConfig& config,
                                        const std::filesystem::path& run_dir,
                                        const std::string& subdir) {
    InductiveParams ind = make_inductive(resolved_inductive_config(config));
    const std::filesystem::path base =
        subdir.empty() ? run_dir / "inductive" : run_dir / "inductive" / subdir;
    load_checkpoint(base / "checkpoint.json", base / "checkpoint.bin", ind.params);
    return ind;
}

Tensor load_targets(const std::filesystem::path& run_dir, const std::string& arch_id,
                    std::size_t n_train, std::size_t classes) {
    Tensor t = load_zoo_predictions(run_dir / "zoo", arch_id, n_train, classes);
    for (std::size_t i = 0; i < t.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < t.cols(); ++j) s += t.at(i, j);
        if (!(s > 0.0)) throw std::invalid_argument("zoo targets: non-positive row sum");
        for (std::size_t j = 0; j < t.cols(); ++j) t.at(i, j) /= s;
    }
    return t;
}

void save_zoo_roles(const std::filesystem::path& run_dir, const ZooRoles& roles) {
    njson j;
    j["supervision"] = roles.supervision;
    j["validation"] = roles.validation;
    write_json_file(run_dir / "zoo" / "harness.json", j);
}

ZooRoles load_zoo_roles(const std::filesystem::path& run_dir) {
    const njson j = read_json_file(run_dir / "zoo" / "harness.json");
    ZooRoles roles;
    roles.supervision = j.at("supervision").get<std::vector<std::string>>();
    roles.validation = j.at("validation").get<std::vector<std::string>>();
    return roles;
}

}  // namespace harness_detail
}  // namespace subsel
