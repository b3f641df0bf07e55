#include <sys/utsname.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "harness_detail.hpp"
#include "subsel/rng.hpp"
#include "subsel/util.hpp"

namespace subsel {
namespace harness_detail {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t base, const std::string& tag) {
    return Rng(base).fork(fnv1a64(tag)).bits();
}

std::size_t split_size(double frac, std::size_t total) {
    // floor with a nudge so exact products like 0.3*10 don't truncate to 2
    return static_cast<std::size_t>(frac * static_cast<double>(total) + 1e-9);
}

std::string machine_fingerprint() {
    std::string base = "unknown";
    utsname u{};
    if (uname(&u) == 0)
        base = std::string(u.sysname) + "-" + u.release + "-" + u.machine;
    return base + "-c" + std::to_string(std::thread::hardware_concurrency());
}

std::string format_frac(double f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", f);
    return buf;
}

njson read_json_file(const std::filesystem::path& path) {
    return njson::parse(read_text_file(path));
}

void write_json_file(const std::filesystem::path& path, const njson& j) {
    write_text_file(path, j.dump(2) + "\n");
}

void write_stage_marker(const std::filesystem::path& stage_dir, const std::string& stage,
                        const std::string& digest, double seconds) {
    njson j;
    j["stage"] = stage;
    j["digest"] = digest;
    j["complete"] = true;
    j["fingerprint"] = machine_fingerprint();
    j["seconds"] = seconds;
    write_json_file(stage_dir / "stage.json", j);
}

bool stage_complete(const std::filesystem::path& stage_dir, const std::string& digest) {
    const std::filesystem::path marker = stage_dir / "stage.json";
    if (!std::filesystem::exists(marker)) return false;
    try {
        const njson j = read_json_file(marker);
        return j.value("complete", false) && j.value("digest", "") == digest;
    } catch (const std::exception&) {
        return false;  // unreadable marker = incomplete stage
    }
}

double stage_seconds(const std::filesystem::path& stage_dir) {
    const std::filesystem::path marker = stage_dir / "stage.json";
    if (!std::filesystem::exists(marker)) return 0.0;
    try {
        return read_json_file(marker).value("seconds", 0.0);
    } catch (const std::exception&) {
        return 0.0;
    }
}

std::string stage_fingerprint(const std::filesystem::path& stage_dir) {
    const std::filesystem::path marker = stage_dir / "stage.json";
    if (!std::filesystem::exists(marker)) return "";
    try {
        return read_json_file(marker).value("fingerprint", "");
    } catch (const std::exception&) {
        return "";
    }
}

void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t w = std::max<std::size_t>(1, std::min(workers, n));
    if (w == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (std::size_t t = 0; t < w; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

njson config_to_json(const ExperimentConfig& c) {
    njson j;
    j["seeds"] = c.seeds;
    j["workers"] = c.workers;
    j["space"] = {{"count", c.space_count},
                  {"max_nodes", c.constraints.max_nodes},
                  {"max_edges", c.constraints.max_edges},
                  {"train_frac", c.arch_train_frac},
                  {"val_frac", c.arch_val_frac}};
    j["dataset"] = {{"kind", c.dataset.kind},         {"n", c.dataset.n},
                    {"d_x", c.dataset.d_x},           {"classes", c.dataset.classes},
                    {"separation", c.dataset.separation}, {"csv_path", c.dataset.csv_path},
                    {"label_column", c.dataset.label_column}};
    j["zoo"] = {{"train_models", c.zoo_train_models},
                {"d_hidden", c.d_hidden},
                {"epochs", c.pretrain.epochs},
                {"lr", c.pretrain.lr},
                {"batch", c.pretrain.batch}};
    j["encoder"] = {{"epochs", c.encoder_train.epochs}, {"lr", c.encoder_train.lr},
                    {"batch", c.encoder_train.batch},   {"k_stages", c.encoder_net.k_stages},
                    {"d", c.encoder_net.d},             {"hidden", c.encoder_net.hidden},
                    {"latent", c.encoder_net.latent}};
    j["approximator"] = {{"epochs", c.approx_train.epochs},
                         {"batch", c.approx_train.batch},
                         {"lr", c.approx_train.lr},
                         {"weight_decay", c.approx_train.weight_decay},
                         {"clip_norm", c.approx_train.clip_norm},
                         {"proj", c.approx_net.proj},
                         {"att", c.approx_net.att},
                         {"ffn", c.approx_net.ffn},
                         {"head_hidden", c.approx_net.head_hidden},
                         {"dropout", c.approx_net.dropout}};
    j["selection"] = {{"methods", c.methods},
                      {"budget_fracs", c.budget_fracs},
                      {"lambda", c.lambda},
                      {"transductive_steps", c.transductive_steps},
                      {"transductive_lr", c.transductive_lr},
                      {"inductive_epochs", c.inductive_epochs},
                      {"inductive_lr", c.inductive_lr},
                      {"lambda_prime", c.lambda_prime},
                      {"inductive_train_b_frac", c.inductive_train_b_frac},
                      {"hybrid_b_fracs", c.hybrid_b_fracs},
                      {"gumbel_scale", c.gumbel_scale},
                      {"warmup_epochs", c.warmup_epochs}};
    j["downstream"] = {{"epochs", c.downstream.epochs},
                       {"lr", c.downstream.lr},
                       {"batch", c.downstream.batch}};
    j["report"] = {{"ranking_k", c.ranking_k}};
    j["ablation"] = {{"b_frac", c.ablation_b_frac}, {"kl_repeats", c.ablation_kl_repeats}};
    return j;
}

namespace {

void require_known_keys(const njson& obj, const std::string& where,
                        const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (allowed.find(key) == allowed.end())
            throw std::invalid_argument("config: unknown key '" + where + "." + key + "'");
    }
}

}  // namespace

ExperimentConfig config_from_json(const njson& j) {
    ExperimentConfig c;
    require_known_keys(j, "<root>",
                       {"seeds", "workers", "space", "dataset", "zoo", "encoder",
                        "approximator", "selection", "downstream", "report", "ablation"});
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.workers = j.value("workers", c.workers);
    if (j.contains("space")) {
        const njson& s = j.at("space");
        require_known_keys(s, "space", {"count", "max_nodes", "max_edges", "train_frac",
                                        "val_frac"});
        c.space_count = s.value("count", c.space_count);
        c.constraints.max_nodes = s.value("max_nodes", c.constraints.max_nodes);
        c.constraints.max_edges = s.value("max_edges", c.constraints.max_edges);
        c.arch_train_frac = s.value("train_frac", c.arch_train_frac);
        c.arch_val_frac = s.value("val_frac", c.arch_val_frac);
    }
    if (j.contains("dataset")) {
        const njson& d = j.at("dataset");
        require_known_keys(
            d, "dataset",
            {"kind", "n", "d_x", "classes", "separation", "csv_path", "label_column"});
        c.dataset.kind = d.value("kind", c.dataset.kind);
        c.dataset.n = d.value("n", c.dataset.n);
        c.dataset.d_x = d.value("d_x", c.dataset.d_x);
        c.dataset.classes = d.value("classes", c.dataset.classes);
        c.dataset.separation = d.value("separation", c.dataset.separation);
        c.dataset.csv_path = d.value("csv_path", c.dataset.csv_path);
        c.dataset.label_column = d.value("label_column", c.dataset.label_column);
    }
    if (j.contains("zoo")) {
        const njson& z = j.at("zoo");
        require_known_keys(z, "zoo", {"train_models", "d_hidden", "epochs", "lr", "batch"});
        c.zoo_train_models = z.value("train_models", c.zoo_train_models);
        c.d_hidden = z.value("d_hidden", c.d_hidden);
        c.pretrain.epochs = z.value("epochs", c.pretrain.epochs);
        c.pretrain.lr = z.value("lr", c.pretrain.lr);
        c.pretrain.batch = z.value("batch", c.pretrain.batch);
    }
    if (j.contains("encoder")) {
        const njson& e = j.at("encoder");
        require_known_keys(e, "encoder",
                           {"epochs", "lr", "batch", "k_stages", "d", "hidden", "latent"});
        c.encoder_train.epochs = e.value("epochs", c.encoder_train.epochs);
        c.encoder_train.lr = e.value("lr", c.encoder_train.lr);
        c.encoder_train.batch = e.value("batch", c.encoder_train.batch);
        c.encoder_net.k_stages = e.value("k_stages", c.encoder_net.k_stages);
        c.encoder_net.d = e.value("d", c.encoder_net.d);
        c.encoder_net.hidden = e.value("hidden", c.encoder_net.hidden);
        c.encoder_net.latent = e.value("latent", c.encoder_net.latent);
    }
    if (j.contains("approximator")) {
        const njson& a = j.at("approximator");
        require_known_keys(a, "approximator",
                           {"epochs", "batch", "lr", "weight_decay", "clip_norm", "proj", "att",
                            "ffn", "head_hidden", "dropout"});
        c.approx_train.epochs = a.value("epochs", c.approx_train.epochs);
        c.approx_train.batch = a.value("batch", c.approx_train.batch);
        c.approx_train.lr = a.value("lr", c.approx_train.lr);
        c.approx_train.weight_decay = a.value("weight_decay", c.approx_train.weight_decay);
        c.approx_train.clip_norm = a.value("clip_norm", c.approx_train.clip_norm);
        c.approx_net.proj = a.value("proj", c.approx_net.proj);
        c.approx_net.att = a.value("att", c.approx_net.att);
        c.approx_net.ffn = a.value("ffn", c.approx_net.ffn);
        c.approx_net.head_hidden = a.value("head_hidden", c.approx_net.head_hidden);
        c.approx_net.dropout = a.value("dropout", c.approx_net.dropout);
    }
    if (j.contains("selection")) {
        const njson& s = j.at("selection");
        require_known_keys(s, "selection",
                           {"methods", "budget_fracs", "lambda", "transductive_steps",
                            "transductive_lr", "inductive_epochs", "inductive_lr",
                            "lambda_prime", "inductive_train_b_frac", "hybrid_b_fracs",
                            "gumbel_scale", "warmup_epochs"});
        if (s.contains("methods")) c.methods = s.at("methods").get<std::vector<std::string>>();
        if (s.contains("budget_fracs"))
            c.budget_fracs = s.at("budget_fracs").get<std::vector<double>>();
        c.lambda = s.value("lambda", c.lambda);
        c.transductive_steps = s.value("transductive_steps", c.transductive_steps);
        c.transductive_lr = s.value("transductive_lr", c.transductive_lr);
        c.inductive_epochs = s.value("inductive_epochs", c.inductive_epochs);
        c.inductive_lr = s.value("inductive_lr", c.inductive_lr);
        c.lambda_prime = s.value("lambda_prime", c.lambda_prime);
        c.inductive_train_b_frac = s.value("inductive_train_b_frac", c.inductive_train_b_frac);
        if (s.contains("hybrid_b_fracs"))
            c.hybrid_b_fracs = s.at("hybrid_b_fracs").get<std::vector<double>>();
        c.gumbel_scale = s.value("gumbel_scale", c.gumbel_scale);
        c.warmup_epochs = s.value("warmup_epochs", c.warmup_epochs);
    }
    if (j.contains("downstream")) {
        const njson& d = j.at("downstream");
        require_known_keys(d, "downstream", {"epochs", "lr", "batch"});
        c.downstream.epochs = d.value("epochs", c.downstream.epochs);
        c.downstream.lr = d.value("lr", c.downstream.lr);
        c.downstream.batch = d.value("batch", c.downstream.batch);
    }
    if (j.contains("report")) {
        require_known_keys(j.at("report"), "report", {"ranking_k"});
        c.ranking_k = j.at("report").value("ranking_k", c.ranking_k);
    }
    if (j.contains("ablation")) {
        require_known_keys(j.at("ablation"), "ablation", {"b_frac", "kl_repeats"});
        c.ablation_b_frac = j.at("ablation").value("b_frac", c.ablation_b_frac);
        c.ablation_kl_repeats = j.at("ablation").value("kl_repeats", c.ablation_kl_repeats);
    }
    return c;
}

StageDigests compute_digests(const ExperimentConfig& c) {
    const njson full = config_to_json(c);
    const std::uint64_t seed0 = c.seeds.front();
    auto digest = [](const njson& j) { return fnv1a_hex(j.dump()); };

    StageDigests d;
    d.space = digest({{"stage", "space"}, {"space", full.at("space")}, {"seed", seed0}});
    d.data = digest({{"stage", "data"}, {"dataset", full.at("dataset")}, {"seed", seed0}});
    d.zoo = digest({{"stage", "zoo"},
                    {"space", d.space},
                    {"data", d.data},
                    {"zoo", full.at("zoo")},
                    {"seed", seed0}});
    d.encoder = digest({{"stage", "encoder"},
                        {"space", d.space},
                        {"encoder", full.at("encoder")},
                        {"seed", seed0}});
    d.approximator = digest({{"stage", "approximator"},
                             {"encoder", d.encoder},
                             {"zoo", d.zoo},
                             {"approximator", full.at("approximator")},
                             {"seed", seed0}});
    d.inductive = digest({{"stage", "inductive"},
                          {"approximator", d.approximator},
                          {"epochs", c.inductive_epochs},
                          {"lr", c.inductive_lr},
                          {"lambda", c.lambda},
                          {"lambda_prime", c.lambda_prime},
                          {"train_b_frac", c.inductive_train_b_frac},
                          {"seed", seed0}});
    d.selections = digest({{"stage", "selections"},
                           {"approximator", d.approximator},
                           {"inductive", d.inductive},
                           {"selection", full.at("selection")},
                           {"seeds", c.seeds}});
    d.downstream = digest({{"stage", "downstream"},
                           {"selections", d.selections},
                           {"downstream", full.at("downstream")},
                           {"seeds", c.seeds}});
    d.report = digest(
        {{"stage", "report"}, {"downstream", d.downstream}, {"ranking_k", c.ranking_k}});
    return d;
}

}  // namespace harness_detail

using harness_detail::config_from_json;
using harness_detail::config_to_json;
using harness_detail::njson;

void validate_config(const ExperimentConfig& c) {
    auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
    if (c.seeds.empty()) fail("seeds must be non-empty");
    if (c.workers < 1) fail("workers must be >= 1");

    if (c.space_count < 3) fail("space.count must be >= 3");
    if (c.constraints.max_nodes < 2) fail("space.max_nodes must be >= 2");
    if (c.constraints.max_edges < 1) fail("space.max_edges must be >= 1");
    if (!(c.arch_train_frac > 0.0 && c.arch_train_frac < 1.0))
        fail("space.train_frac must lie in (0,1)");
    if (!(c.arch_val_frac > 0.0 && c.arch_val_frac < 1.0))
        fail("space.val_frac must lie in (0,1)");
    if (c.arch_train_frac + c.arch_val_frac >= 1.0)
        fail("space train_frac + val_frac must stay below 1");
    const std::size_t m_tr = harness_detail::split_size(c.arch_train_frac, c.space_count);
    const std::size_t m_va = harness_detail::split_size(c.arch_val_frac, c.space_count);
    if (m_tr < 1 || m_va < 1 || m_tr + m_va >= c.space_count)
        fail("space split leaves an empty train/val/test fold");

    if (c.dataset.kind != "blobs" && c.dataset.kind != "csv")
        fail("dataset.kind must be blobs or csv");
    if (c.dataset.kind == "blobs") {
        if (c.dataset.classes < 2) fail("dataset.classes must be >= 2");
        if (c.dataset.d_x < c.dataset.classes) fail("dataset.d_x must be >= classes");
        if (c.dataset.n < 10 * c.dataset.classes) fail("dataset.n too small for its class count");
        if (!(c.dataset.separation > 0.0)) fail("dataset.separation must be positive");
    } else {
        if (c.dataset.csv_path.empty()) fail("dataset.csv_path required for kind=csv");
        if (c.dataset.label_column.empty()) fail("dataset.label_column required for kind=csv");
    }

    if (c.zoo_train_models < 1) fail("zoo.train_models must be >= 1");
    if (c.d_hidden < 4) fail("zoo.d_hidden must be >= 4");
    for (const auto& [name, pc] :
         {std::pair<const char*, const PretrainConfig*>{"zoo", &c.pretrain},
          std::pair<const char*, const PretrainConfig*>{"downstream", &c.downstream}}) {
        if (pc->epochs < 1) fail(std::string(name) + ".epochs must be >= 1");
        if (!(pc->lr > 0.0)) fail(std::string(name) + ".lr must be positive");
        if (pc->batch < 1) fail(std::string(name) + ".batch must be >= 1");
    }
    if (c.encoder_train.epochs < 1 || c.approx_train.epochs < 1)
        fail("encoder/approximator epochs must be >= 1");
    if (!(c.encoder_train.lr > 0.0) || !(c.approx_train.lr > 0.0))
        fail("encoder/approximator lr must be positive");
    if (c.encoder_train.batch < 1) fail("encoder.batch must be >= 1");
    if (c.encoder_train.batch > m_tr)
        fail("encoder.batch exceeds the training-fold architecture count");
    if (c.encoder_net.k_stages < 2) fail("encoder.k_stages must be >= 2");
    if (c.encoder_net.d < 1 || c.encoder_net.hidden < 1 || c.encoder_net.latent < 1)
        fail("encoder widths must be positive");
    if (c.approx_net.proj < 1 || c.approx_net.att < 1 || c.approx_net.ffn < 1 ||
        c.approx_net.head_hidden < 1)
        fail("approximator widths must be positive");
    if (!(c.approx_net.dropout >= 0.0 && c.approx_net.dropout < 1.0))
        fail("approximator.dropout must lie in [0,1)");

    if (c.methods.empty()) fail("selection.methods must be non-empty");
    const std::set<std::string> known = {
        "transductive", "inductive", "hybrid",           "random",
        "facility_location", "bottom_b_loss", "bottom_b_loss_gumbel", "el2n",
        "grand"};
    bool has_hybrid = false;
    for (const std::string& method : c.methods) {
        if (known.find(method) == known.end()) fail("unknown method '" + method + "'");
        has_hybrid = has_hybrid || method == "hybrid";
    }
    if (c.budget_fracs.empty()) fail("selection.budget_fracs must be non-empty");
    for (const double f : c.budget_fracs)
        if (!(f > 0.0 && f <= 1.0)) fail("budget fractions must lie in (0,1]");
    if (has_hybrid) {
        if (c.hybrid_b_fracs.empty()) fail("hybrid needs a non-empty hybrid_b_fracs grid");
        for (const double f : c.hybrid_b_fracs)
            if (!(f > 0.0 && f <= 1.0)) fail("hybrid fractions must lie in (0,1]");
    }
    if (c.lambda < 0.0 || c.lambda_prime < 0.0) fail("lambda values must be >= 0");
    if (c.transductive_steps < 1) fail("transductive_steps must be >= 1");
    if (!(c.transductive_lr > 0.0) || !(c.inductive_lr > 0.0))
        fail("sampler learning rates must be positive");
    if (c.inductive_epochs < 1) fail("inductive_epochs must be >= 1");
    if (!(c.inductive_train_b_frac > 0.0 && c.inductive_train_b_frac <= 1.0))
        fail("inductive_train_b_frac must lie in (0,1]");
    if (!(c.gumbel_scale >= 0.0)) fail("gumbel_scale must be >= 0");
    if (c.warmup_epochs < 1) fail("warmup_epochs must be >= 1");
    if (c.ranking_k < 1) fail("report.ranking_k must be >= 1");
    if (!(c.ablation_b_frac > 0.0 && c.ablation_b_frac <= 1.0))
        fail("ablation.b_frac must lie in (0,1]");
    if (c.ablation_kl_repeats < 1) fail("ablation.kl_repeats must be >= 1");
}

std::string config_digest(const ExperimentConfig& config) {
    return fnv1a_hex(config_to_json(config).dump());
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    njson j;
    try {
        j = njson::parse(read_text_file(path));
    } catch (const std::exception& e) {
        throw std::invalid_argument("config: cannot parse " + path.string() + ": " + e.what());
    }
    ExperimentConfig config = config_from_json(j);
    validate_config(config);
    return config;
}

void save_experiment_config(const ExperimentConfig& config, const std::filesystem::path& path) {
    harness_detail::write_json_file(path, config_to_json(config));
}

ExperimentConfig smoke_config() {
    ExperimentConfig c;
    c.seeds = {7};
    c.space_count = 12;  // 8/1/3 split: three downstream test architectures
    c.constraints.max_nodes = 6;
    c.constraints.max_edges = 8;
    c.dataset.n = 240;
    c.dataset.d_x = 8;
    c.dataset.classes = 3;
    c.dataset.separation = 5.0;
    c.zoo_train_models = 5;
    c.d_hidden = 16;
    c.pretrain.epochs = 8;
    c.encoder_train.epochs = 4;
    c.encoder_train.batch = 4;
    c.encoder_net.k_stages = 3;
    c.encoder_net.hidden = 32;
    c.approx_train.epochs = 6;
    c.approx_net.head_hidden = 64;
    c.methods = {"transductive", "inductive", "random"};
    c.budget_fracs = {0.2};
    c.transductive_steps = 50;
    c.inductive_epochs = 20;
    c.inductive_train_b_frac = 0.2;
    c.hybrid_b_fracs = {0.5};
    c.warmup_epochs = 3;
    c.downstream.epochs = 8;
    c.ranking_k = 3;
    c.ablation_b_frac = 0.2;
    c.ablation_kl_repeats = 2;
    return c;
}

}  // namespace subsel
