#include <algorithm>
#include <chrono>
#include <map>
#include <stdexcept>

#include "harness_detail.hpp"
#include "subsel/baselines.hpp"
#include "subsel/checkpoint.hpp"
#include "subsel/rng.hpp"
#include "subsel/tape.hpp"
#include "subsel/util.hpp"

namespace subsel {

namespace {

using namespace harness_detail;

class Stopwatch {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

  private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// Digest-gated stage execution: skip when the marker matches, otherwise run
// the body and persist the marker. Partial artifacts from a failed body stay
// on disk (no marker is written, so a rerun recomputes the stage).
void run_stage(const std::string& name, const std::filesystem::path& dir,
               const std::string& digest, const std::function<void()>& body) {
    if (stage_complete(dir, digest)) return;
    std::filesystem::create_directories(dir);
    Stopwatch watch;
    try {
        body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
    write_stage_marker(dir, name, digest, watch.seconds());
}

std::map<std::string, Architecture> arch_index(const std::vector<Architecture>& space) {
    std::map<std::string, Architecture> by_id;
    for (const Architecture& a : space) by_id[a.id] = a;
    return by_id;
}

std::vector<Architecture> archs_for_ids(const std::map<std::string, Architecture>& by_id,
                                        const std::vector<std::string>& ids) {
    std::vector<Architecture> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end())
            throw std::invalid_argument("split references unknown architecture " + id);
        out.push_back(it->second);
    }
    return out;
}

Dims dims_for(const ExperimentConfig& config, const DatasetBundle& data) {
    return Dims{data.dim(), config.d_hidden, data.classes};
}

bool method_needs_context(const std::string& tag) {
    return tag == "transductive" || tag == "inductive" || tag.rfind("hybrid_B", 0) == 0 ||
           tag == "bottom_b_loss" || tag == "bottom_b_loss_gumbel";
}

std::string pi_digest_of(const std::vector<double>& pi) {
    return fnv1a_hex(std::string_view(reinterpret_cast<const char*>(pi.data()),
                                      pi.size() * sizeof(double)));
}

}  // namespace

void stage_space(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    const std::filesystem::path dir = stage_dir(run_dir, "space");
    run_stage("space", dir, d.space, [&] {
        const std::uint64_t seed0 = config.seeds.front();
        const std::vector<Architecture> space =
            generate_space(seed0, config.space_count, config.constraints);
        save_space(dir / "space.json", space);

        std::vector<std::string> ids;
        ids.reserve(space.size());
        for (const Architecture& a : space) ids.push_back(a.id);
        Rng rng(derive_seed(seed0, "arch_split"));
        rng.shuffle(ids);
        const std::size_t m_tr = split_size(config.arch_train_frac, ids.size());
        const std::size_t m_va = split_size(config.arch_val_frac, ids.size());
        ArchSplit split;
        split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(m_tr));
        split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(m_tr),
                         ids.begin() + static_cast<std::ptrdiff_t>(m_tr + m_va));
        split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(m_tr + m_va), ids.end());
        save_arch_split(dir / "splits.json", split);
    });
}

void stage_data(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    const std::filesystem::path dir = stage_dir(run_dir, "data");
    run_stage("data", dir, d.data, [&] {
        const std::uint64_t seed = derive_seed(config.seeds.front(), "data");
        const DatasetBundle data =
            config.dataset.kind == "blobs"
                ? make_blobs(config.dataset.n, config.dataset.d_x, config.dataset.classes,
                             config.dataset.separation, seed)
                : ingest_csv(config.dataset.csv_path, config.dataset.label_column, seed);
        save_bundle(data, dir);
    });
}

void stage_zoo(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    require_stage(run_dir, "space", d.space, "zoo");
    require_stage(run_dir, "data", d.data, "zoo");
    const std::filesystem::path dir = stage_dir(run_dir, "zoo");
    run_stage("zoo", dir, d.zoo, [&] {
        const std::vector<Architecture> space = load_space(run_dir / "space" / "space.json");
        const ArchSplit split = load_arch_split(run_dir / "space" / "splits.json");
        const DatasetBundle data = load_bundle(run_dir / "data");
        const auto by_id = arch_index(space);
        const Dims dims = dims_for(config, data);

        const std::vector<Architecture> train_archs = archs_for_ids(by_id, split.train);
        ZooRoles roles;
        for (const std::size_t i :
             pick_diverse(train_archs, std::min(config.zoo_train_models, train_archs.size()),
                          dims))
            roles.supervision.push_back(train_archs[i].id);
        roles.validation = split.val;

        std::vector<std::string> to_train = roles.supervision;
        for (const std::string& id : roles.validation) to_train.push_back(id);

        const std::string cfg_digest = config_digest(config);
        std::vector<TrainedModelRecord> records(to_train.size());
        parallel_for(to_train.size(), config.workers, [&](std::size_t i) {
            const Architecture& arch = by_id.at(to_train[i]);
            MaterializedNet net = materialize(
                arch, dims, derive_seed(config.seeds.front(), "zoo_init|" + arch.id));
            PretrainConfig pc = config.pretrain;
            pc.seed = derive_seed(config.seeds.front(), "zoo_train|" + arch.id);
            TrainedModelRecord rec = pretrain(net, data, pc);
            rec.config_digest = cfg_digest;
            save_model_record(dir, net, rec);
            records[i] = std::move(rec);
        });
        write_zoo_index(dir, records, dims, data.train_idx.size());
        save_zoo_roles(run_dir, roles);
    });
}

void stage_encoder(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    require_stage(run_dir, "space", d.space, "encoder");
    const std::filesystem::path dir = stage_dir(run_dir, "encoder");
    run_stage("encoder", dir, d.encoder, [&] {
        const std::vector<Architecture> space = load_space(run_dir / "space" / "space.json");
        const ArchSplit split = load_arch_split(run_dir / "space" / "splits.json");
        const auto by_id = arch_index(space);
        const std::vector<Architecture> train_archs = archs_for_ids(by_id, split.train);

        EncoderConfig ec = config.encoder_net;
        ec.init_seed = derive_seed(config.seeds.front(), "encoder_init");
        TrainEncoderConfig tc = config.encoder_train;
        tc.seed = derive_seed(config.seeds.front(), "encoder_train");
        TrainedEncoder trained = train_encoder(train_archs, tc, ec);
        save_checkpoint(dir / "checkpoint.json", dir / "checkpoint.bin", trained.enc.params);

        njson extras;
        extras["elbo_curve"] = trained.elbo_curve;
        extras["val_edge_auc"] =
            edge_auc(archs_for_ids(by_id, split.val), trained.enc);
        write_json_file(dir / "training.json", extras);
    });
}

void stage_approximator(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    require_stage(run_dir, "encoder", d.encoder, "approximator");
    require_stage(run_dir, "zoo", d.zoo, "approximator");
    const std::filesystem::path dir = stage_dir(run_dir, "approximator");
    run_stage("approximator", dir, d.approximator, [&] {
        const std::vector<Architecture> space = load_space(run_dir / "space" / "space.json");
        const auto by_id = arch_index(space);
        const DatasetBundle data = load_bundle(run_dir / "data");
        const ZooRoles roles = load_zoo_roles(run_dir);
        EncoderParams enc = load_encoder_from_run(config, run_dir);

        const std::size_t n_tr = data.train_idx.size();
        auto supervision_for = [&](const std::vector<std::string>& ids) {
            std::vector<ArchSupervision> out(ids.size());
            parallel_for(ids.size(), config.workers, [&](std::size_t i) {
                const Architecture& arch = by_id.at(ids[i]);
                ArchSupervision s;
                s.arch_id = arch.id;
                s.h = encode(arch, enc).h;
                s.rho = bfs_order(arch);
                s.targets = load_targets(run_dir, arch.id, n_tr, data.classes);
                out[i] = std::move(s);
            });
            return out;
        };
        const std::vector<ArchSupervision> train_sup = supervision_for(roles.supervision);
        const std::vector<ArchSupervision> val_sup = supervision_for(roles.validation);
        const Tensor x_tr = rows_at(data.features, data.train_idx);

        ApproxTrainConfig tc = config.approx_train;
        tc.seed = derive_seed(config.seeds.front(), "approx_train|attention");
        TrainedApproximator trained = train_approximator(
            train_sup, val_sup, x_tr, tc, resolved_approx_config(config, ApproxVariant::Attention));
        save_checkpoint(dir / "checkpoint.json", dir / "checkpoint.bin", trained.params.params);

        Tensor stacked = Tensor::zeros({n_tr * val_sup.size(), data.classes});
        for (std::size_t a = 0; a < val_sup.size(); ++a)
            for (std::size_t i = 0; i < n_tr; ++i)
                for (std::size_t j = 0; j < data.classes; ++j)
                    stacked.at(a * n_tr + i, j) = val_sup[a].targets.at(i, j);
        njson extras;
        extras["variant"] = "attention";
        extras["train_kl_curve"] = trained.train_kl_curve;
        extras["val_kl_curve"] = trained.val_kl_curve;
        extras["best_val_kl"] = trained.best_val_kl;
        extras["uniform_val_kl"] = uniform_kl(stacked);
        write_json_file(dir / "training.json", extras);
    });
}

void stage_inductive(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    require_stage(run_dir, "approximator", d.approximator, "inductive");
    const std::filesystem::path dir = stage_dir(run_dir, "inductive");
    run_stage("inductive", dir, d.inductive, [&] {
        const std::vector<Architecture> space = load_space(run_dir / "space" / "space.json");
        const auto by_id = arch_index(space);
        const DatasetBundle data = load_bundle(run_dir / "data");
        const ZooRoles roles = load_zoo_roles(run_dir);
        EncoderParams enc = load_encoder_from_run(config, run_dir);
        ApproximatorParams ap = load_approximator_from_run(config, run_dir);

        const Tensor x_tr = rows_at(data.features, data.train_idx);
        const std::vector<std::size_t> y_tr = labels_at(data.labels, data.train_idx);
        std::vector<SamplerArchContext> contexts(roles.supervision.size());
        parallel_for(roles.supervision.size(), config.workers, [&](std::size_t i) {
            contexts[i] =
                make_arch_context(by_id.at(roles.supervision[i]), enc, ap, x_tr, y_tr);
        });

        InductiveTrainConfig tc;
        tc.epochs = config.inductive_epochs;
        tc.lr = config.inductive_lr;
        tc.lambda = config.lambda;
        tc.lambda_prime = config.lambda_prime;
        tc.seed = derive_seed(config.seeds.front(), "inductive_train");
        const std::size_t b_train =
            budget_from_frac(config.inductive_train_b_frac, data.train_idx.size());
        InductiveParams ind = train_inductive(contexts, x_tr, y_tr, b_train, tc,
                                              resolved_inductive_config(config));
        save_checkpoint(dir / "checkpoint.json", dir / "checkpoint.bin", ind.params);
    });
}

namespace {

struct SelectionTask {
    std::string tag;  // expanded method tag
    std::size_t arch_pos = 0;
    double b_frac = 0.0;
    std::uint64_t seed = 0;
};

}  // namespace

void stage_selections(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    require_stage(run_dir, "inductive", d.inductive, "selections");
    const std::filesystem::path dir = stage_dir(run_dir, "selections");
    run_stage("selections", dir, d.selections, [&] {
        const std::vector<Architecture> space = load_space(run_dir / "space" / "space.json");
        const ArchSplit split = load_arch_split(run_dir / "space" / "splits.json");
        const auto by_id = arch_index(space);
        const DatasetBundle data = load_bundle(run_dir / "data");
        EncoderParams enc = load_encoder_from_run(config, run_dir);
        ApproximatorParams ap = load_approximator_from_run(config, run_dir);
        const InductiveParams ind_master = load_inductive_from_run(config, run_dir);

        const Tensor x_tr = rows_at(data.features, data.train_idx);
        const std::vector<std::size_t> y_tr = labels_at(data.labels, data.train_idx);
        const std::size_t n_tr = data.train_idx.size();
        const Dims dims = dims_for(config, data);
        const std::string cfg_digest = config_digest(config);

        // Per-arch inference contexts are shared read-only across tasks.
        std::vector<SamplerArchContext> contexts(split.test.size());
        std::vector<double> context_seconds(split.test.size(), 0.0);
        parallel_for(split.test.size(), config.workers, [&](std::size_t i) {
            Stopwatch watch;
            contexts[i] = make_arch_context(by_id.at(split.test[i]), enc, ap, x_tr, y_tr);
            context_seconds[i] = watch.seconds();
        });

        // Facility location ignores the architecture; compute once per budget.
        std::map<std::size_t, SubsetSelection> fl_cache;
        for (const double f : config.budget_fracs) {
            const std::size_t b = budget_from_frac(f, n_tr);
            if (fl_cache.find(b) == fl_cache.end())
                fl_cache.emplace(b, select_facility_location(x_tr, b));
        }

        std::vector<SelectionTask> tasks;
        for (const std::uint64_t seed : config.seeds)
            for (const double f : config.budget_fracs)
                for (const std::string& tag : expanded_methods(config))
                    for (std::size_t a = 0; a < split.test.size(); ++a)
                        tasks.push_back({tag, a, f, seed});

        parallel_for(tasks.size(), config.workers, [&](std::size_t ti) {
            const SelectionTask& task = tasks[ti];
            const std::string& arch_id = split.test[task.arch_pos];
            const SamplerArchContext& ctx = contexts[task.arch_pos];
            const std::size_t b = budget_from_frac(task.b_frac, n_tr);
            const std::uint64_t sel_seed = derive_seed(
                task.seed,
                "select|" + task.tag + "|" + format_frac(task.b_frac) + "|" + arch_id);

            Tape::reset_grad_evals();
            Stopwatch watch;
            SubsetSelection sel;
            if (task.tag == "transductive") {
                TransductiveConfig tc{config.transductive_steps, config.transductive_lr,
                                      config.lambda, sel_seed};
                sel = transductive_select(ctx, b, tc);
            } else if (task.tag == "inductive") {
                InductiveParams ind = make_inductive(resolved_inductive_config(config));
                copy_param_values(ind_master.params, ind.params);
                sel = inductive_select(ind, ctx, x_tr, y_tr, b, sel_seed);
            } else if (task.tag.rfind("hybrid_B", 0) == 0) {
                const double big_frac = std::stod(task.tag.substr(8));
                const std::size_t big_b =
                    std::max(budget_from_frac(big_frac, n_tr), b);
                InductiveParams ind = make_inductive(resolved_inductive_config(config));
                copy_param_values(ind_master.params, ind.params);
                TransductiveConfig tc{config.transductive_steps, config.transductive_lr,
                                      config.lambda, sel_seed};
                sel = hybrid_select(ind, ctx, x_tr, y_tr, big_b, b, tc);
            } else if (task.tag == "random") {
                sel = select_random(n_tr, b, sel_seed);
            } else if (task.tag == "facility_location") {
                sel = fl_cache.at(b);
            } else if (task.tag == "bottom_b_loss") {
                sel = select_bottom_b_loss(ctx.losses, b);
            } else if (task.tag == "bottom_b_loss_gumbel") {
                sel = select_bottom_b_loss(ctx.losses, b, config.gumbel_scale, sel_seed);
            } else if (task.tag == "el2n") {
                sel = select_el2n(by_id.at(arch_id), dims, data, b, config.warmup_epochs,
                                  sel_seed);
            } else if (task.tag == "grand") {
                sel = select_grand(by_id.at(arch_id), dims, data, b, config.warmup_epochs,
                                   sel_seed);
            } else {
                throw std::invalid_argument("unknown method tag " + task.tag);
            }
            const double own_seconds = watch.seconds();
            const std::uint64_t evals = Tape::grad_evals();

            SelectionRecord rec;
            rec.arch_id = arch_id;
            rec.method = task.tag;
            rec.b_frac = task.b_frac;
            rec.b = b;
            rec.seed = task.seed;
            rec.indices.assign(sel.order.begin(), sel.order.end());
            std::sort(rec.indices.begin(), rec.indices.end());
            rec.order = sel.order;
            rec.pi_digest = pi_digest_of(sel.pi);
            rec.config_digest = cfg_digest;
            rec.select_seconds =
                own_seconds +
                (method_needs_context(task.tag) ? context_seconds[task.arch_pos] : 0.0);
            rec.select_grad_evals = evals;
            rec.fingerprint = machine_fingerprint();
            if (rec.indices.size() != b)
                throw std::logic_error("selection size mismatch for " + task.tag);
            save_selection(selection_path(run_dir, task.tag, arch_id, task.b_frac, task.seed),
                           rec);
        });
    });
}

namespace {

struct DownstreamTask {
    std::string method;  // "full" or an expanded tag
    std::string arch_id;
    double b_frac = 0.0;
    std::uint64_t seed = 0;
};

}  // namespace

void stage_downstream(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    require_stage(run_dir, "selections", d.selections, "downstream");
    const std::filesystem::path dir = stage_dir(run_dir, "downstream");
    run_stage("downstream", dir, d.downstream, [&] {
        const std::vector<Architecture> space = load_space(run_dir / "space" / "space.json");
        const ArchSplit split = load_arch_split(run_dir / "space" / "splits.json");
        const auto by_id = arch_index(space);
        const DatasetBundle data = load_bundle(run_dir / "data");
        const Dims dims = dims_for(config, data);

        std::vector<DownstreamTask> tasks;
        for (const std::string& arch_id : split.test)
            for (const std::uint64_t seed : config.seeds) {
                tasks.push_back({"full", arch_id, 1.0, seed});
                for (const double f : config.budget_fracs)
                    for (const std::string& tag : expanded_methods(config))
                        tasks.push_back({tag, arch_id, f, seed});
            }

        parallel_for(tasks.size(), config.workers, [&](std::size_t ti) {
            const DownstreamTask& task = tasks[ti];
            DownstreamRecord rec;
            rec.arch_id = task.arch_id;
            rec.method = task.method;
            rec.b_frac = task.method == "full" ? 1.0 : task.b_frac;
            rec.seed = task.seed;
            rec.fingerprint = machine_fingerprint();

            // Full and subset runs share init/shuffle seeds per (arch, seed),
            // so selecting the whole training split reproduces the full run
            // exactly (the S = D sanity case).
            PretrainConfig pc = config.downstream;
            pc.seed = derive_seed(task.seed, "downstream_train|" + task.arch_id);
            const std::uint64_t init_seed =
                derive_seed(task.seed, "downstream_init|" + task.arch_id);

            try {
                DatasetBundle train_view = data;
                if (task.method == "full") {
                    rec.b = data.train_idx.size();
                } else {
                    const SelectionRecord sel = load_selection(selection_path(
                        run_dir, task.method, task.arch_id, task.b_frac, task.seed));
                    rec.b = sel.b;
                    train_view = restrict_to_subset(data, sel.indices);
                }
                MaterializedNet net = materialize(by_id.at(task.arch_id), dims, init_seed);
                Tape::reset_grad_evals();
                Stopwatch watch;
                const TrainedModelRecord trained = pretrain(net, train_view, pc);
                rec.seconds = watch.seconds();
                rec.grad_evals = Tape::grad_evals();
                rec.acc_test = trained.test_acc;
            } catch (const std::exception& e) {
                rec.status = "failed";
                rec.reason = e.what();
            }
            save_downstream(
                downstream_path(run_dir, task.arch_id, task.method, rec.b_frac, task.seed),
                rec);
        });
    });
}

RunReport run_pipeline(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    std::filesystem::create_directories(run_dir);
    save_experiment_config(config, run_dir / "config.json");
    stage_space(config, run_dir);
    stage_data(config, run_dir);
    stage_zoo(config, run_dir);
    stage_encoder(config, run_dir);
    stage_approximator(config, run_dir);
    stage_inductive(config, run_dir);
    stage_selections(config, run_dir);
    stage_downstream(config, run_dir);
    stage_evaluate(config, run_dir);
    return stage_report(config, run_dir);
}

}  // namespace subsel
