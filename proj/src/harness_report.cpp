#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "harness_detail.hpp"
#include "subsel/checkpoint.hpp"
#include "subsel/math.hpp"
#include "subsel/metrics.hpp"
#include "subsel/tape.hpp"
#include "subsel/util.hpp"

namespace subsel {

namespace {

using namespace harness_detail;

njson cell_to_json(const ReportCell& c) {
    return njson{{"method", c.method},
                 {"arch_id", c.arch_id},
                 {"b_frac", c.b_frac},
                 {"b", c.b},
                 {"seed", c.seed},
                 {"status", c.status},
                 {"reason", c.reason},
                 {"acc_subset", c.acc_subset},
                 {"acc_full", c.acc_full},
                 {"select_seconds", c.select_seconds},
                 {"train_seconds", c.train_seconds},
                 {"full_train_seconds", c.full_train_seconds},
                 {"select_grad_evals", c.select_grad_evals},
                 {"train_grad_evals", c.train_grad_evals},
                 {"full_train_grad_evals", c.full_train_grad_evals}};
}

ReportCell cell_from_json(const njson& j) {
    ReportCell c;
    c.method = j.at("method").get<std::string>();
    c.arch_id = j.at("arch_id").get<std::string>();
    c.b_frac = j.at("b_frac").get<double>();
    c.b = j.at("b").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.status = j.at("status").get<std::string>();
    c.reason = j.at("reason").get<std::string>();
    c.acc_subset = j.at("acc_subset").get<double>();
    c.acc_full = j.at("acc_full").get<double>();
    c.select_seconds = j.at("select_seconds").get<double>();
    c.train_seconds = j.at("train_seconds").get<double>();
    c.full_train_seconds = j.at("full_train_seconds").get<double>();
    c.select_grad_evals = j.at("select_grad_evals").get<std::uint64_t>();
    c.train_grad_evals = j.at("train_grad_evals").get<std::uint64_t>();
    c.full_train_grad_evals = j.at("full_train_grad_evals").get<std::uint64_t>();
    return c;
}

njson aggregate_to_json(const MethodAggregate& a) {
    return njson{{"method", a.method},
                 {"b_frac", a.b_frac},
                 {"rar_mean", a.rar_mean},
                 {"rar_std", a.rar_std},
                 {"speedup", a.speedup},
                 {"kendall_tau", a.kendall_tau},
                 {"jaccard", a.jaccard},
                 {"mean_select_grad_evals", a.mean_select_grad_evals},
                 {"mean_train_grad_evals", a.mean_train_grad_evals}};
}

MethodAggregate aggregate_from_json(const njson& j) {
    MethodAggregate a;
    a.method = j.at("method").get<std::string>();
    a.b_frac = j.at("b_frac").get<double>();
    a.rar_mean = j.at("rar_mean").get<double>();
    a.rar_std = j.at("rar_std").get<double>();
    a.speedup = j.at("speedup").get<double>();
    a.kendall_tau = j.at("kendall_tau").get<double>();
    a.jaccard = j.at("jaccard").get<double>();
    a.mean_select_grad_evals = j.at("mean_select_grad_evals").get<double>();
    a.mean_train_grad_evals = j.at("mean_train_grad_evals").get<double>();
    return a;
}

njson ablation_cell_to_json(const AblationCell& c) {
    return njson{{"variant", c.variant},
                 {"strategy", c.strategy},
                 {"b_frac", c.b_frac},
                 {"rar", c.rar}};
}

AblationCell ablation_cell_from_json(const njson& j) {
    AblationCell c;
    c.variant = j.at("variant").get<std::string>();
    c.strategy = j.at("strategy").get<std::string>();
    c.b_frac = j.at("b_frac").get<double>();
    c.rar = j.at("rar").get<double>();
    return c;
}

njson report_to_json(const RunReport& r) {
    njson j;
    j["config_digest"] = r.config_digest;
    j["machine_fingerprint"] = r.machine_fingerprint;
    j["mixed_machines"] = r.mixed_machines;
    j["fingerprints_seen"] = r.fingerprints_seen;
    j["amortized_overhead_seconds"] = r.amortized_overhead_seconds;
    j["cells"] = njson::array();
    for (const ReportCell& c : r.cells) j["cells"].push_back(cell_to_json(c));
    j["aggregates"] = njson::array();
    for (const MethodAggregate& a : r.aggregates) j["aggregates"].push_back(aggregate_to_json(a));
    j["ablation_cells"] = njson::array();
    for (const AblationCell& c : r.ablation_cells)
        j["ablation_cells"].push_back(ablation_cell_to_json(c));
    j["ablation_val_kl"] = r.ablation_val_kl;
    j["ablation_attention_kl_repeats"] = r.ablation_attention_kl_repeats;
    j["ablation_feedforward_kl_repeats"] = r.ablation_feedforward_kl_repeats;
    j["ablation_kl_reversals"] = r.ablation_kl_reversals;
    return j;
}

RunReport report_from_json(const njson& j) {
    RunReport r;
    r.config_digest = j.at("config_digest").get<std::string>();
    r.machine_fingerprint = j.at("machine_fingerprint").get<std::string>();
    r.mixed_machines = j.at("mixed_machines").get<bool>();
    r.fingerprints_seen = j.at("fingerprints_seen").get<std::vector<std::string>>();
    r.amortized_overhead_seconds = j.at("amortized_overhead_seconds").get<double>();
    for (const njson& c : j.at("cells")) r.cells.push_back(cell_from_json(c));
    for (const njson& a : j.at("aggregates")) r.aggregates.push_back(aggregate_from_json(a));
    for (const njson& c : j.at("ablation_cells"))
        r.ablation_cells.push_back(ablation_cell_from_json(c));
    r.ablation_val_kl = j.at("ablation_val_kl").get<std::map<std::string, double>>();
    r.ablation_attention_kl_repeats =
        j.at("ablation_attention_kl_repeats").get<std::vector<double>>();
    r.ablation_feedforward_kl_repeats =
        j.at("ablation_feedforward_kl_repeats").get<std::vector<double>>();
    r.ablation_kl_reversals = j.at("ablation_kl_reversals").get<std::size_t>();
    return r;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (const double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (const double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

}  // namespace

void stage_evaluate(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    require_stage(run_dir, "downstream", d.downstream, "evaluate");
    const std::filesystem::path dir = run_dir / "report" / "metrics";
    if (stage_complete(dir, d.report)) return;
    std::filesystem::create_directories(dir);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const ArchSplit split = load_arch_split(run_dir / "space" / "splits.json");
        const std::vector<std::string> tags = expanded_methods(config);

        // Full-data reference runs, keyed by (seed, arch).
        std::map<std::pair<std::uint64_t, std::string>, DownstreamRecord> full;
        std::set<std::string> fingerprints;
        for (const std::string& arch_id : split.test)
            for (const std::uint64_t seed : config.seeds) {
                DownstreamRecord rec =
                    load_downstream(downstream_path(run_dir, arch_id, "full", 1.0, seed));
                fingerprints.insert(rec.fingerprint);
                full[{seed, arch_id}] = std::move(rec);
            }

        std::vector<ReportCell> cells;
        // Selections kept around for the overlap matrices, keyed by
        // (b_frac, seed, arch, tag).
        std::map<std::tuple<double, std::uint64_t, std::string, std::string>,
                 std::vector<std::size_t>>
            sel_sets;
        for (const std::string& tag : tags)
            for (const double f : config.budget_fracs)
                for (const std::uint64_t seed : config.seeds)
                    for (const std::string& arch_id : split.test) {
                        ReportCell cell;
                        cell.method = tag;
                        cell.arch_id = arch_id;
                        cell.b_frac = f;
                        cell.seed = seed;
                        try {
                            const SelectionRecord sel = load_selection(
                                selection_path(run_dir, tag, arch_id, f, seed));
                            const DownstreamRecord ds = load_downstream(
                                downstream_path(run_dir, arch_id, tag, f, seed));
                            const DownstreamRecord& fr = full.at({seed, arch_id});
                            fingerprints.insert(sel.fingerprint);
                            fingerprints.insert(ds.fingerprint);
                            cell.b = sel.b;
                            sel_sets[{f, seed, arch_id, tag}] = sel.indices;
                            if (fr.status != "ok") {
                                cell.status = "failed";
                                cell.reason = "full-data run failed: " + fr.reason;
                            } else if (ds.status != "ok") {
                                cell.status = "failed";
                                cell.reason = ds.reason;
                            } else {
                                cell.acc_subset = ds.acc_test;
                                cell.acc_full = fr.acc_test;
                                cell.select_seconds = sel.select_seconds;
                                cell.train_seconds = ds.seconds;
                                cell.full_train_seconds = fr.seconds;
                                cell.select_grad_evals = sel.select_grad_evals;
                                cell.train_grad_evals = ds.grad_evals;
                                cell.full_train_grad_evals = fr.grad_evals;
                            }
                        } catch (const std::exception& e) {
                            cell.status = "failed";
                            cell.reason = e.what();
                        }
                        cells.push_back(std::move(cell));
                    }

        // Per-(method, budget) aggregates over seeds and test architectures.
        std::vector<MethodAggregate> aggregates;
        for (const std::string& tag : tags)
            for (const double f : config.budget_fracs) {
                MethodAggregate agg;
                agg.method = tag;
                agg.b_frac = f;
                std::vector<double> rars, taus, jaccards;
                std::vector<double> t_full, t_select, t_train, e_select, e_train;
                for (const std::uint64_t seed : config.seeds) {
                    std::map<std::string, double> sub_acc, full_acc;
                    for (const ReportCell& c : cells) {
                        if (c.method != tag || c.b_frac != f || c.seed != seed ||
                            c.status != "ok")
                            continue;
                        sub_acc[c.arch_id] = c.acc_subset;
                        full_acc[c.arch_id] = c.acc_full;
                        t_full.push_back(c.full_train_seconds);
                        t_select.push_back(c.select_seconds);
                        t_train.push_back(c.train_seconds);
                        e_select.push_back(static_cast<double>(c.select_grad_evals));
                        e_train.push_back(static_cast<double>(c.train_grad_evals));
                    }
                    if (sub_acc.empty()) continue;
                    rars.push_back(rar(sub_acc, full_acc));
                    const std::size_t k = std::min(config.ranking_k, full_acc.size());
                    const RankingMetrics rm = ranking_metrics(full_acc, sub_acc, k);
                    taus.push_back(rm.kendall_tau);
                    jaccards.push_back(rm.jaccard);
                }
                agg.rar_mean = mean_of(rars);
                agg.rar_std = std_of(rars);
                agg.kendall_tau = mean_of(taus);
                agg.jaccard = mean_of(jaccards);
                agg.mean_select_grad_evals = mean_of(e_select);
                agg.mean_train_grad_evals = mean_of(e_train);
                const double mf = mean_of(t_full);
                const double ms = mean_of(t_select);
                const double mt = mean_of(t_train);
                agg.speedup = (mf > 0.0 && ms + mt > 0.0) ? speedup(mf, ms, mt) : 0.0;
                aggregates.push_back(std::move(agg));
            }

        // Mean pairwise Jaccard between methods' subsets, per budget and
        // seed, averaged over test architectures.
        njson overlaps = njson::array();
        for (const double f : config.budget_fracs)
            for (const std::uint64_t seed : config.seeds) {
                Tensor acc = Tensor::zeros({tags.size(), tags.size()});
                std::size_t archs_used = 0;
                for (const std::string& arch_id : split.test) {
                    std::vector<SubsetSelection> sels;
                    bool complete = true;
                    for (const std::string& tag : tags) {
                        const auto it = sel_sets.find({f, seed, arch_id, tag});
                        if (it == sel_sets.end()) {
                            complete = false;
                            break;
                        }
                        SubsetSelection s;
                        s.order = it->second;
                        sels.push_back(std::move(s));
                    }
                    if (!complete) continue;
                    const Tensor m = subset_overlap(sels);
                    for (std::size_t i = 0; i < tags.size(); ++i)
                        for (std::size_t jx = 0; jx < tags.size(); ++jx)
                            acc.at(i, jx) += m.at(i, jx);
                    ++archs_used;
                }
                if (archs_used == 0) continue;
                njson entry;
                entry["b_frac"] = f;
                entry["seed"] = seed;
                entry["methods"] = tags;
                njson matrix = njson::array();
                for (std::size_t i = 0; i < tags.size(); ++i) {
                    njson row = njson::array();
                    for (std::size_t jx = 0; jx < tags.size(); ++jx)
                        row.push_back(acc.at(i, jx) / static_cast<double>(archs_used));
                    matrix.push_back(std::move(row));
                }
                entry["matrix"] = std::move(matrix);
                overlaps.push_back(std::move(entry));
            }

        njson metrics;
        metrics["cells"] = njson::array();
        for (const ReportCell& c : cells) metrics["cells"].push_back(cell_to_json(c));
        metrics["aggregates"] = njson::array();
        for (const MethodAggregate& a : aggregates)
            metrics["aggregates"].push_back(aggregate_to_json(a));
        metrics["overlap"] = std::move(overlaps);
        metrics["fingerprints_seen"] =
            std::vector<std::string>(fingerprints.begin(), fingerprints.end());
        write_json_file(dir / "metrics.json", metrics);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("evaluate", e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_stage_marker(dir, "evaluate", d.report, secs);
}

RunReport stage_report(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    const std::filesystem::path metrics_dir = run_dir / "report" / "metrics";
    if (!stage_complete(metrics_dir, d.report))
        throw StageError("report", "upstream stage 'evaluate' is missing or stale; rerun it first");
    const std::filesystem::path dir = run_dir / "report";
    if (!stage_complete(dir, d.report)) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const njson metrics = read_json_file(metrics_dir / "metrics.json");
            RunReport report;
            report.config_digest = config_digest(config);
            report.machine_fingerprint = machine_fingerprint();
            const auto seen = metrics.at("fingerprints_seen").get<std::vector<std::string>>();
            std::set<std::string> prints(seen.begin(), seen.end());
            prints.insert(report.machine_fingerprint);
            for (const std::string stage :
                 {"space", "data", "zoo", "encoder", "approximator", "inductive"}) {
                const std::string fp = stage_fingerprint(stage_dir(run_dir, stage));
                if (!fp.empty()) prints.insert(fp);
            }
            report.fingerprints_seen.assign(prints.begin(), prints.end());
            report.mixed_machines = prints.size() > 1;
            report.amortized_overhead_seconds =
                stage_seconds(stage_dir(run_dir, "encoder")) +
                stage_seconds(stage_dir(run_dir, "approximator")) +
                stage_seconds(stage_dir(run_dir, "inductive"));
            for (const njson& c : metrics.at("cells"))
                report.cells.push_back(cell_from_json(c));
            for (const njson& a : metrics.at("aggregates"))
                report.aggregates.push_back(aggregate_from_json(a));

            write_json_file(dir / "report.json", report_to_json(report));

            std::ofstream cells_csv(dir / "cells.csv");
            cells_csv << "method,arch_id,b_frac,b,seed,status,acc_subset,acc_full,"
                         "select_seconds,train_seconds,full_train_seconds,"
                         "select_grad_evals,train_grad_evals,full_train_grad_evals,reason\n";
            for (const ReportCell& c : report.cells)
                cells_csv << csv_escape(c.method) << ',' << csv_escape(c.arch_id) << ','
                          << c.b_frac << ',' << c.b << ',' << c.seed << ',' << c.status << ','
                          << c.acc_subset << ',' << c.acc_full << ',' << c.select_seconds << ','
                          << c.train_seconds << ',' << c.full_train_seconds << ','
                          << c.select_grad_evals << ',' << c.train_grad_evals << ','
                          << c.full_train_grad_evals << ',' << csv_escape(c.reason) << '\n';

            std::ofstream agg_csv(dir / "aggregates.csv");
            agg_csv << "method,b_frac,rar_mean,rar_std,speedup,kendall_tau,jaccard,"
                       "mean_select_grad_evals,mean_train_grad_evals\n";
            for (const MethodAggregate& a : report.aggregates)
                agg_csv << csv_escape(a.method) << ',' << a.b_frac << ',' << a.rar_mean << ','
                        << a.rar_std << ',' << a.speedup << ',' << a.kendall_tau << ','
                        << a.jaccard << ',' << a.mean_select_grad_evals << ','
                        << a.mean_train_grad_evals << '\n';
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError("report", e.what());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_stage_marker(dir, "report", d.report, secs);
    }
    try {
        return report_from_json(read_json_file(dir / "report.json"));
    } catch (const std::exception& e) {
        throw StageError("report", e.what());
    }
}

std::vector<std::size_t> uncertainty_top_b(const Tensor& o, std::size_t b) {
    if (b > o.rows()) throw std::invalid_argument("uncertainty_top_b: b exceeds rows");
    std::vector<std::pair<double, std::size_t>> keyed(o.rows());
    for (std::size_t i = 0; i < o.rows(); ++i) {
        double h = 0.0;
        for (std::size_t j = 0; j < o.cols(); ++j) {
            const double p = o.at(i, j);
            if (p > 0.0) h -= p * std::log(p);
        }
        keyed[i] = {h, i};
    }
    std::sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    std::vector<std::size_t> out(b);
    for (std::size_t i = 0; i < b; ++i) out[i] = keyed[i].second;
    return out;
}

std::vector<std::size_t> loss_bottom_b(const std::vector<double>& losses, std::size_t b) {
    if (b > losses.size()) throw std::invalid_argument("loss_bottom_b: b exceeds size");
    std::vector<std::pair<double, std::size_t>> keyed(losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i) keyed[i] = {losses[i], i};
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> out(b);
    for (std::size_t i = 0; i < b; ++i) out[i] = keyed[i].second;
    return out;
}

RunReport ablation_matrix(const ExperimentConfig& config, const std::filesystem::path& run_dir) {
    validate_config(config);
    const StageDigests d = compute_digests(config);
    require_stage(run_dir, "downstream", d.downstream, "ablation");
    // The report digest does not cover the ablation knobs (the main report is
    // unaffected by them), so extend it here for the ablation marker.
    const std::string digest = fnv1a_hex(
        njson{{"stage", "ablation"},
              {"report", d.report},
              {"b_frac", config.ablation_b_frac},
              {"kl_repeats", config.ablation_kl_repeats}}
            .dump());
    const std::filesystem::path dir = run_dir / "report" / "ablation";
    RunReport report = stage_report(config, run_dir);

    if (!stage_complete(dir, digest)) {
        std::filesystem::create_directories(dir);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const std::vector<Architecture> space =
                load_space(run_dir / "space" / "space.json");
            const ArchSplit split = load_arch_split(run_dir / "space" / "splits.json");
            std::map<std::string, Architecture> by_id;
            for (const Architecture& a : space) by_id[a.id] = a;
            const DatasetBundle data = load_bundle(run_dir / "data");
            const ZooRoles roles = load_zoo_roles(run_dir);
            EncoderParams enc = load_encoder_from_run(config, run_dir);
            const Dims dims{data.dim(), config.d_hidden, data.classes};
            const std::uint64_t seed0 = config.seeds.front();

            const Tensor x_tr = rows_at(data.features, data.train_idx);
            const std::vector<std::size_t> y_tr = labels_at(data.labels, data.train_idx);
            const std::size_t n_tr = data.train_idx.size();
            const std::size_t b = budget_from_frac(config.ablation_b_frac, n_tr);

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

            const std::vector<ApproxVariant> variants = {
                ApproxVariant::Attention, ApproxVariant::Feedforward, ApproxVariant::Recurrent};

            // Train the non-attention variants (attention reuses the main
            // pipeline checkpoints) and the per-variant inductive scorers.
            auto train_variant = [&](ApproxVariant v, std::uint64_t seed,
                                     const std::filesystem::path& out_dir) {
                ApproxTrainConfig tc = config.approx_train;
                tc.seed = seed;
                TrainedApproximator trained =
                    train_approximator(train_sup, val_sup, x_tr, tc,
                                       resolved_approx_config(config, v));
                if (!out_dir.empty()) {
                    std::filesystem::create_directories(out_dir);
                    save_checkpoint(out_dir / "checkpoint.json", out_dir / "checkpoint.bin",
                                    trained.params.params);
                    njson extras;
                    extras["variant"] = approx_variant_name(v);
                    extras["best_val_kl"] = trained.best_val_kl;
                    write_json_file(out_dir / "training.json", extras);
                }
                return trained.best_val_kl;
            };
            for (const ApproxVariant v : {ApproxVariant::Feedforward, ApproxVariant::Recurrent}) {
                const std::string name = approx_variant_name(v);
                const std::filesystem::path vdir =
                    run_dir / "approximator" / ("variant_" + name);
                if (!std::filesystem::exists(vdir / "checkpoint.json"))
                    train_variant(v, derive_seed(seed0, "approx_train|" + name), vdir);
            }

            std::map<std::string, double> val_kl;
            njson cells_json = njson::array();
            std::vector<AblationCell> ablation_cells;
            for (const ApproxVariant v : variants) {
                const std::string name = approx_variant_name(v);
                const std::string subdir =
                    v == ApproxVariant::Attention ? "" : "variant_" + name;
                ApproximatorParams ap = load_approximator_from_run(config, run_dir, subdir);
                val_kl[name] = mean_kl(val_sup, x_tr, ap);

                // Per-variant contexts for supervision (inductive training)
                // and test (selection) architectures.
                std::vector<SamplerArchContext> sup_ctx(roles.supervision.size());
                parallel_for(roles.supervision.size(), config.workers, [&](std::size_t i) {
                    sup_ctx[i] =
                        make_arch_context(by_id.at(roles.supervision[i]), enc, ap, x_tr, y_tr);
                });
                std::vector<SamplerArchContext> test_ctx(split.test.size());
                parallel_for(split.test.size(), config.workers, [&](std::size_t i) {
                    test_ctx[i] =
                        make_arch_context(by_id.at(split.test[i]), enc, ap, x_tr, y_tr);
                });

                const std::filesystem::path idir =
                    run_dir / "inductive" /
                    (subdir.empty() ? std::filesystem::path(".") : std::filesystem::path(subdir));
                InductiveParams ind = [&] {
                    if (v == ApproxVariant::Attention)
                        return load_inductive_from_run(config, run_dir);
                    const std::filesystem::path vdir = run_dir / "inductive" / subdir;
                    if (!std::filesystem::exists(vdir / "checkpoint.json")) {
                        InductiveTrainConfig tc;
                        tc.epochs = config.inductive_epochs;
                        tc.lr = config.inductive_lr;
                        tc.lambda = config.lambda;
                        tc.lambda_prime = config.lambda_prime;
                        tc.seed = derive_seed(seed0, "inductive_train|" + name);
                        const std::size_t b_train =
                            budget_from_frac(config.inductive_train_b_frac, n_tr);
                        InductiveParams trained = train_inductive(
                            sup_ctx, x_tr, y_tr, b_train, tc, resolved_inductive_config(config));
                        std::filesystem::create_directories(vdir);
                        save_checkpoint(vdir / "checkpoint.json", vdir / "checkpoint.bin",
                                        trained.params);
                        return trained;
                    }
                    return load_inductive_from_run(config, run_dir, subdir);
                }();
                (void)idir;

                for (const std::string strategy : {"uncertainty", "loss", "inductive"}) {
                    // Subsets per test arch, then downstream retraining with
                    // the same seeds as the main pipeline (so the full-data
                    // reference runs are reusable).
                    std::vector<std::vector<std::size_t>> subsets(split.test.size());
                    for (std::size_t i = 0; i < split.test.size(); ++i) {
                        if (strategy == "uncertainty") {
                            subsets[i] = uncertainty_top_b(test_ctx[i].o, b);
                        } else if (strategy == "loss") {
                            subsets[i] = loss_bottom_b(test_ctx[i].losses, b);
                        } else {
                            SubsetSelection sel = inductive_select(
                                ind, test_ctx[i], x_tr, y_tr, b,
                                derive_seed(seed0, "ablate|" + name + "|" + split.test[i]));
                            subsets[i] = sel.order;
                        }
                        std::sort(subsets[i].begin(), subsets[i].end());
                    }
                    std::map<std::string, double> sub_acc, full_acc;
                    std::vector<double> accs(split.test.size());
                    parallel_for(split.test.size(), config.workers, [&](std::size_t i) {
                        const std::string& arch_id = split.test[i];
                        const DatasetBundle view = restrict_to_subset(data, subsets[i]);
                        MaterializedNet net =
                            materialize(by_id.at(arch_id), dims,
                                        derive_seed(seed0, "downstream_init|" + arch_id));
                        PretrainConfig pc = config.downstream;
                        pc.seed = derive_seed(seed0, "downstream_train|" + arch_id);
                        accs[i] = pretrain(net, view, pc).test_acc;
                    });
                    for (std::size_t i = 0; i < split.test.size(); ++i) {
                        const std::string& arch_id = split.test[i];
                        const DownstreamRecord fr = load_downstream(
                            downstream_path(run_dir, arch_id, "full", 1.0, seed0));
                        if (fr.status != "ok") continue;
                        sub_acc[arch_id] = accs[i];
                        full_acc[arch_id] = fr.acc_test;
                    }
                    AblationCell cell;
                    cell.variant = name;
                    cell.strategy = strategy;
                    cell.b_frac = config.ablation_b_frac;
                    cell.rar = sub_acc.empty() ? 0.0 : rar(sub_acc, full_acc);
                    cells_json.push_back(ablation_cell_to_json(cell));
                    ablation_cells.push_back(std::move(cell));
                }
            }

            // Attention vs feedforward fidelity, re-trained per repeat seed.
            std::vector<double> att_kl(config.ablation_kl_repeats);
            std::vector<double> ff_kl(config.ablation_kl_repeats);
            for (std::size_t r = 0; r < config.ablation_kl_repeats; ++r) {
                att_kl[r] = train_variant(
                    ApproxVariant::Attention,
                    derive_seed(seed0, "ablate_kl|attention|" + std::to_string(r)), {});
                ff_kl[r] = train_variant(
                    ApproxVariant::Feedforward,
                    derive_seed(seed0, "ablate_kl|feedforward|" + std::to_string(r)), {});
            }
            std::size_t reversals = 0;
            for (std::size_t r = 0; r < config.ablation_kl_repeats; ++r)
                if (ff_kl[r] < att_kl[r]) ++reversals;

            njson out;
            out["cells"] = std::move(cells_json);
            out["val_kl"] = val_kl;
            out["attention_kl_repeats"] = att_kl;
            out["feedforward_kl_repeats"] = ff_kl;
            out["kl_reversals"] = reversals;
            write_json_file(dir / "ablation.json", out);
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError("ablation", e.what());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_stage_marker(dir, "ablation", digest, secs);
    }

    try {
        const njson j = read_json_file(dir / "ablation.json");
        for (const njson& c : j.at("cells"))
            report.ablation_cells.push_back(ablation_cell_from_json(c));
        report.ablation_val_kl = j.at("val_kl").get<std::map<std::string, double>>();
        report.ablation_attention_kl_repeats =
            j.at("attention_kl_repeats").get<std::vector<double>>();
        report.ablation_feedforward_kl_repeats =
            j.at("feedforward_kl_repeats").get<std::vector<double>>();
        report.ablation_kl_reversals = j.at("kl_reversals").get<std::size_t>();
    } catch (const std::exception& e) {
        throw StageError("ablation", e.what());
    }
    return report;
}

}  // namespace subsel
