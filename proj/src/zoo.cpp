#include "subsel/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "subsel/checkpoint.hpp"
#include "subsel/math.hpp"
#include "subsel/optim.hpp"
#include "subsel/rng.hpp"
#include "subsel/util.hpp"

namespace subsel {

using nlohmann::json;

std::size_t expected_param_count(const Architecture& arch, const Dims& dims) {
    std::size_t count = dims.d_x * dims.d_hidden + dims.d_hidden;  // stem
    for (OpCode op : arch.nodes)
        if (op == OpCode::OpA || op == OpCode::OpB)
            count += dims.d_hidden * dims.d_hidden + dims.d_hidden;
    count += dims.d_hidden * dims.classes + dims.classes;  // head
    return count;
}

namespace {

Tensor gaussian_init(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

}  // namespace

MaterializedNet materialize(const Architecture& arch, const Dims& dims, std::uint64_t seed) {
    if (dims.d_x == 0 || dims.d_hidden == 0 || dims.classes == 0)
        throw std::invalid_argument("materialize: dims must be positive");
    const auto bad = validate(arch);
    if (!bad.empty()) throw std::invalid_argument("materialize: invalid arch: " + bad[0]);

    MaterializedNet net;
    net.arch = arch;
    net.arch.id = arch.id.empty() ? canonical_hash(arch) : arch.id;
    net.dims = dims;

    Rng rng(seed);
    const double stem_scale = 1.0 / std::sqrt(static_cast<double>(dims.d_x));
    const double mid_scale = 1.0 / std::sqrt(static_cast<double>(dims.d_hidden));
    net.params.add("net/stem/w", gaussian_init(rng, dims.d_x, dims.d_hidden, stem_scale));
    net.params.add("net/stem/b", Tensor::zeros({1, dims.d_hidden}));
    for (std::size_t v = 0; v < arch.node_count(); ++v) {
        const OpCode op = arch.nodes[v];
        if (op != OpCode::OpA && op != OpCode::OpB) continue;
        const std::string base = "net/node" + std::to_string(v);
        net.params.add(base + "/w", gaussian_init(rng, dims.d_hidden, dims.d_hidden, mid_scale));
        net.params.add(base + "/b", Tensor::zeros({1, dims.d_hidden}));
    }
    net.params.add("net/head/w", gaussian_init(rng, dims.d_hidden, dims.classes, mid_scale));
    net.params.add("net/head/b", Tensor::zeros({1, dims.classes}));
    return net;
}

Val net_penultimate(Tape& tape, MaterializedNet& net, Val x) {
    const Architecture& arch = net.arch;
    const auto in_adj = in_adjacency(arch);
    const std::size_t n = arch.node_count();
    std::vector<Val> act(n, Val{});

    act[0] = tape.add_row(tape.matmul(x, tape.param(net.params.at("net/stem/w"))),
                          tape.param(net.params.at("net/stem/b")));

    // Nodes are topologically ordered by index (edges only run forward).
    for (std::size_t v = 1; v + 1 < n; ++v) {
        const std::string base = "net/node" + std::to_string(v);
        std::vector<Val> parts;
        for (std::size_t u : in_adj[v]) {
            if (arch.nodes[v] == OpCode::OpC) {
                parts.push_back(tape.maxpool1d3(act[u]));
            } else {
                parts.push_back(tape.add_row(
                    tape.matmul(act[u], tape.param(net.params.at(base + "/w"))),
                    tape.param(net.params.at(base + "/b"))));
            }
        }
        Val summed = parts.size() == 1 ? parts[0] : tape.add_many(parts);
        act[v] = arch.nodes[v] == OpCode::OpA ? tape.relu(summed) : summed;
    }

    std::vector<Val> into_out;
    for (std::size_t u : in_adj[n - 1]) into_out.push_back(act[u]);
    return into_out.size() == 1 ? into_out[0] : tape.add_many(into_out);
}

Val net_head(Tape& tape, MaterializedNet& net, Val penultimate) {
    return tape.add_row(tape.matmul(penultimate, tape.param(net.params.at("net/head/w"))),
                        tape.param(net.params.at("net/head/b")));
}

Val net_forward(Tape& tape, MaterializedNet& net, Val x) {
    return net_head(tape, net, net_penultimate(tape, net, x));
}

Tensor net_predict(MaterializedNet& net, const Tensor& x) {
    Tape tape;
    const Val logits = net_forward(tape, net, tape.constant(x, "input"));
    return softmax(tape.value(logits));
}

namespace {

double accuracy(MaterializedNet& net, const DatasetBundle& data,
                const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    const Tensor probs = net_predict(net, rows_at(data.features, idx));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < idx.size(); ++i)
        hits += argmax_row(probs, i) == data.labels[idx[i]];
    return static_cast<double>(hits) / static_cast<double>(idx.size());
}

}  // namespace

TrainedModelRecord pretrain(MaterializedNet& net, const DatasetBundle& data,
                            const PretrainConfig& config) {
    if (net.dims.d_x != data.dim() || net.dims.classes != data.classes)
        throw std::invalid_argument("pretrain: net dims do not match data");

    OptimizerState opt = make_adam(config.lr);
    Rng rng(config.seed);
    std::vector<std::size_t> order = data.train_idx;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            const std::size_t stop = std::min(order.size(), start + config.batch);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
            try {
                Tape tape;
                const Val x = tape.constant(rows_at(data.features, batch), "batch");
                const Val logits = net_forward(tape, net, x);
                const Val loss =
                    tape.cross_entropy_mean(logits, labels_at(data.labels, batch));
                forward_backward(tape, loss, net.params);
                optimizer_step(opt, net.params);
            } catch (const NumericError& e) {
                throw NumericError("pretrain diverged: arch " + net.arch.id + ", step " +
                                   std::to_string(step) + ": " + e.what());
            }
            ++step;
        }
    }

    // Snap to checkpoint precision first so a reload reproduces everything.
    round_to_f32(net.params);

    TrainedModelRecord rec;
    rec.source_id = net.arch.id;
    rec.predictions = net_predict(net, rows_at(data.features, data.train_idx));
    rec.train_acc = accuracy(net, data, data.train_idx);
    rec.val_acc = accuracy(net, data, data.val_idx);
    rec.test_acc = accuracy(net, data, data.test_idx);
    json cfg;
    cfg["epochs"] = config.epochs;
    cfg["lr"] = config.lr;
    cfg["batch"] = config.batch;
    cfg["seed"] = config.seed;
    rec.config_digest = fnv1a_hex(cfg.dump());
    return rec;
}

std::vector<std::size_t> pick_diverse(const std::vector<Architecture>& archs, std::size_t m,
                                      const Dims& dims) {
    if (m > archs.size()) throw std::invalid_argument("pick_diverse: m exceeds pool size");
    std::vector<std::size_t> order(archs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const std::size_t pa = expected_param_count(archs[a], dims);
        const std::size_t pb = expected_param_count(archs[b], dims);
        return pa != pb ? pa < pb : archs[a].id < archs[b].id;
    });
    std::vector<std::size_t> picked;
    if (m == 0) return picked;
    if (m == 1) return {order[0]};
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t pos = k * (order.size() - 1) / (m - 1);
        picked.push_back(order[pos]);
    }
    std::sort(picked.begin(), picked.end());
    picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
    // Evenly spaced positions can collide on tiny pools; pad from the front.
    for (std::size_t i = 0; i < order.size() && picked.size() < m; ++i)
        if (std::find(picked.begin(), picked.end(), order[i]) == picked.end())
            picked.push_back(order[i]);
    std::sort(picked.begin(), picked.end());
    return picked;
}

void save_model_record(const std::filesystem::path& zoo_dir, const MaterializedNet& net,
                       const TrainedModelRecord& record) {
    const auto dir = zoo_dir / record.source_id;
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "checkpoint.json", dir / "checkpoint.bin", net.params);
    write_f32_blob(dir / "predictions.bin", record.predictions.data);
}

void write_zoo_index(const std::filesystem::path& zoo_dir,
                     const std::vector<TrainedModelRecord>& records, const Dims& dims,
                     std::size_t n_train) {
    json idx;
    idx["dims"] = {{"d_x", dims.d_x}, {"d_hidden", dims.d_hidden}, {"classes", dims.classes}};
    idx["n_train"] = n_train;
    idx["arch_ids"] = json::array();
    idx["records"] = json::object();
    for (const auto& r : records) {
        idx["arch_ids"].push_back(r.source_id);
        idx["records"][r.source_id] = {{"train_acc", r.train_acc},
                                       {"val_acc", r.val_acc},
                                       {"test_acc", r.test_acc},
                                       {"config_digest", r.config_digest}};
    }
    write_text_file(zoo_dir / "index.json", idx.dump(2) + "\n");
}

Tensor load_zoo_predictions(const std::filesystem::path& zoo_dir, const std::string& arch_id,
                            std::size_t n_train, std::size_t classes) {
    auto data = read_f32_blob(zoo_dir / arch_id / "predictions.bin");
    if (data.size() != n_train * classes)
        throw std::runtime_error("predictions.bin for " + arch_id + " has " +
                                 std::to_string(data.size()) + " values, expected " +
                                 std::to_string(n_train * classes));
    return Tensor({n_train, classes}, std::move(data));
}

void load_net_checkpoint(const std::filesystem::path& zoo_dir, MaterializedNet& net) {
    const auto dir = zoo_dir / net.arch.id;
    load_checkpoint(dir / "checkpoint.json", dir / "checkpoint.bin", net.params);
}

}  // namespace subsel
