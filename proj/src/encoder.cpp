#include "subsel/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "subsel/optim.hpp"
#include "subsel/rng.hpp"

namespace subsel {

namespace {

constexpr std::size_t kOpCount = 5;

Tensor gaussian_init(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

void add_mlp_block(ParamSet& ps, Rng& rng, const std::string& base, std::size_t in,
                   std::size_t hidden, std::size_t out) {
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    ps.add(base + "/w1", gaussian_init(rng, in, hidden, s1));
    ps.add(base + "/b1", Tensor::zeros({1, hidden}));
    ps.add(base + "/gamma", Tensor::full({1, hidden}, 1.0));
    ps.add(base + "/beta", Tensor::zeros({1, hidden}));
    ps.add(base + "/w2", gaussian_init(rng, hidden, out, s2));
    ps.add(base + "/b2", Tensor::zeros({1, out}));
}

// linear -> LayerNorm -> ReLU -> linear (the paper's BatchNorm swapped for
// per-row layer normalization).
Val mlp_block(Tape& tape, ParamSet& ps, const std::string& base, Val x) {
    Val h = tape.add_row(tape.matmul(x, tape.param(ps.at(base + "/w1"))),
                         tape.param(ps.at(base + "/b1")));
    h = tape.layer_norm(h, tape.param(ps.at(base + "/gamma")), tape.param(ps.at(base + "/beta")));
    h = tape.relu(h);
    return tape.add_row(tape.matmul(h, tape.param(ps.at(base + "/w2"))),
                        tape.param(ps.at(base + "/b2")));
}

Tensor one_hot_features(const Architecture& arch) {
    Tensor f = Tensor::zeros({arch.node_count(), kOpCount});
    for (std::size_t u = 0; u < arch.node_count(); ++u)
        f.at(u, static_cast<std::size_t>(arch.nodes[u])) = 1.0;
    return f;
}

}  // namespace

EncoderParams make_encoder(const EncoderConfig& config) {
    if (config.k_stages < 1) throw std::invalid_argument("make_encoder: K must be >= 1");
    EncoderParams enc;
    enc.config = config;
    Rng rng(config.init_seed);
    ParamSet& ps = enc.params;

    const double s_in = 1.0 / std::sqrt(static_cast<double>(kOpCount));
    const double s_d = 1.0 / std::sqrt(static_cast<double>(config.d));
    ps.add("encoder/init/w1", gaussian_init(rng, kOpCount, config.d, s_in));
    ps.add("encoder/init/b1", Tensor::zeros({1, config.d}));
    ps.add("encoder/init/w2", gaussian_init(rng, config.d, config.d, s_d));
    ps.add("encoder/init/b2", Tensor::zeros({1, config.d}));

    for (std::size_t k = 0; k + 1 < config.k_stages; ++k) {
        const std::string layer = "encoder/layer" + std::to_string(k);
        add_mlp_block(ps, rng, layer + "/edge", 2 * config.d, config.hidden, config.d);
        add_mlp_block(ps, rng, layer + "/update", 2 * config.d, config.hidden, config.d);
    }

    const std::size_t kd = config.k_stages * config.d;
    const double s_kd = 1.0 / std::sqrt(static_cast<double>(kd));
    ps.add("encoder/vgae/mu_w", gaussian_init(rng, kd, config.latent, s_kd));
    ps.add("encoder/vgae/mu_b", Tensor::zeros({1, config.latent}));
    ps.add("encoder/vgae/logvar_w", gaussian_init(rng, kd, config.latent, s_kd));
    ps.add("encoder/vgae/logvar_b", Tensor::zeros({1, config.latent}));
    ps.add("encoder/vgae/log_tau", Tensor::scalar(0.0));
    return enc;
}

Val encode_on_tape(Tape& tape, const Architecture& arch, EncoderParams& enc) {
    const auto bad = validate(arch);
    if (!bad.empty()) throw std::invalid_argument("encode: invalid arch: " + bad[0]);
    ParamSet& ps = enc.params;
    const std::size_t n = arch.node_count();

    Val f = tape.constant(one_hot_features(arch), "one_hot");
    Val h = tape.add_row(tape.matmul(f, tape.param(ps.at("encoder/init/w1"))),
                         tape.param(ps.at("encoder/init/b1")));
    h = tape.relu(h);
    h = tape.add_row(tape.matmul(h, tape.param(ps.at("encoder/init/w2"))),
                     tape.param(ps.at("encoder/init/b2")));

    std::vector<Val> stages{h};

    // Directed pair list (u, v) for every undirected neighbor v of u, plus the
    // per-node groups of pair-row indices.
    const auto nbr = undirected_adjacency(arch);
    std::vector<std::size_t> pair_u, pair_v;
    std::vector<std::vector<std::size_t>> groups(n);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v : nbr[u]) {
            groups[u].push_back(pair_u.size());
            pair_u.push_back(u);
            pair_v.push_back(v);
        }

    for (std::size_t k = 0; k + 1 < enc.config.k_stages; ++k) {
        const std::string layer = "encoder/layer" + std::to_string(k);
        Val hu = tape.gather_rows(h, pair_u);
        Val hv = tape.gather_rows(h, pair_v);
        Val messages = mlp_block(tape, ps, layer + "/edge", tape.concat_cols(hu, hv));
        Val agg = tape.neighbor_sum(messages, groups);
        h = mlp_block(tape, ps, layer + "/update", tape.concat_cols(h, agg));
        stages.push_back(h);
    }
    return stages.size() == 1 ? stages[0] : tape.concat_cols(stages);
}

EmbeddingMatrix encode(const Architecture& arch, EncoderParams& enc) {
    Tape tape;
    const Val h = encode_on_tape(tape, arch, enc);
    EmbeddingMatrix out;
    out.arch_id = arch.id.empty() ? canonical_hash(arch) : arch.id;
    out.h = tape.value(h);
    return out;
}

Val elbo_on_tape(Tape& tape, const Architecture& arch, EncoderParams& enc,
                 std::uint64_t latent_sample_seed) {
    ParamSet& ps = enc.params;
    const std::size_t n = arch.node_count();
    const std::size_t latent = enc.config.latent;

    Val h = encode_on_tape(tape, arch, enc);
    Val mu = tape.add_row(tape.matmul(h, tape.param(ps.at("encoder/vgae/mu_w"))),
                          tape.param(ps.at("encoder/vgae/mu_b")));
    Val logvar = tape.add_row(tape.matmul(h, tape.param(ps.at("encoder/vgae/logvar_w"))),
                              tape.param(ps.at("encoder/vgae/logvar_b")));

    Rng rng(latent_sample_seed);
    Tensor eps = Tensor::zeros({n, latent});
    for (double& v : eps.data) v = rng.normal();
    Val z = tape.add(mu, tape.mul(tape.constant(std::move(eps), "latent_eps"),
                                  tape.exp_(tape.scale(logvar, 0.5))));

    // Scores s_uv = z_u . z_v / tau over all ordered pairs.
    Val tau_inv = tape.exp_(tape.scale(tape.param(ps.at("encoder/vgae/log_tau")), -1.0));
    Val scores = tape.scale_by(tape.matmul(z, tape.transpose(z)), tau_inv);

    Tensor present = Tensor::zeros({n, n});
    for (auto [s, d] : arch.edges) present.at(s, d) = 1.0;
    Tensor absent = Tensor::full({n, n}, 1.0);
    for (std::size_t u = 0; u < n; ++u) absent.at(u, u) = 0.0;
    for (std::size_t i = 0; i < absent.data.size(); ++i) absent.data[i] -= present.data[i];

    // log sigma(s) = -softplus(-s); log(1 - sigma(s)) = -softplus(s).
    Val log_on = tape.scale(tape.softplus(tape.scale(scores, -1.0)), -1.0);
    Val log_off = tape.scale(tape.softplus(scores), -1.0);
    Val recon = tape.add(tape.sum_all(tape.mul(log_on, tape.constant(present, "edge_mask"))),
                         tape.sum_all(tape.mul(log_off, tape.constant(absent, "nonedge_mask"))));

    // KL(q || N(0,I)) = 0.5 * sum(exp(l) + mu^2 - 1 - l).
    Val kl_terms = tape.sub(tape.add(tape.exp_(logvar), tape.mul(mu, mu)),
                            tape.affine(logvar, 1.0, 1.0));
    Val kl = tape.scale(tape.sum_all(kl_terms), 0.5);
    return tape.sub(recon, kl);
}

double elbo(const Architecture& arch, EncoderParams& enc, std::uint64_t latent_sample_seed) {
    Tape tape;
    return tape.value(elbo_on_tape(tape, arch, enc, latent_sample_seed)).value();
}

TrainedEncoder train_encoder(const std::vector<Architecture>& space,
                             const TrainEncoderConfig& config, const EncoderConfig& enc_config) {
    if (space.size() < config.batch)
        throw std::invalid_argument("train_encoder: need at least one full batch of archs");
    TrainedEncoder out;
    out.enc = make_encoder(enc_config);
    OptimizerState opt = make_adam(config.lr);
    Rng rng(config.seed);

    std::vector<std::size_t> order(space.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_elbo = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start + config.batch <= order.size();
             start += config.batch) {
            Tape tape;
            std::vector<Val> elbos;
            for (std::size_t i = start; i < start + config.batch; ++i)
                elbos.push_back(elbo_on_tape(tape, space[order[i]], out.enc, rng.bits()));
            Val total = elbos.size() == 1 ? elbos[0] : tape.add_many(elbos);
            Val loss = tape.scale(total, -1.0 / static_cast<double>(config.batch));
            forward_backward(tape, loss, out.enc.params);
            optimizer_step(opt, out.enc.params);
            epoch_elbo += -tape.value(loss).value();
            ++seen;
        }
        out.elbo_curve.push_back(epoch_elbo / static_cast<double>(seen));
    }
    return out;
}

double edge_auc(const std::vector<Architecture>& archs, EncoderParams& enc) {
    std::vector<double> pos, neg;
    ParamSet& ps = enc.params;
    const double tau_inv = std::exp(-ps.at("encoder/vgae/log_tau").value.value());
    for (const auto& arch : archs) {
        Tape tape;
        Val h = encode_on_tape(tape, arch, enc);
        Val mu = tape.add_row(tape.matmul(h, tape.param(ps.at("encoder/vgae/mu_w"))),
                              tape.param(ps.at("encoder/vgae/mu_b")));
        const Tensor m = tape.value(mu);
        const std::size_t n = arch.node_count();
        Tensor present = Tensor::zeros({n, n});
        for (auto [s, d] : arch.edges) present.at(s, d) = 1.0;
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t v = 0; v < n; ++v) {
                if (u == v) continue;
                double dot = 0.0;
                for (std::size_t j = 0; j < m.cols(); ++j) dot += m.at(u, j) * m.at(v, j);
                (present.at(u, v) > 0.0 ? pos : neg).push_back(dot * tau_inv);
            }
    }
    if (pos.empty() || neg.empty()) throw std::invalid_argument("edge_auc: need both classes");
    // Mann-Whitney U with tie correction.
    double wins = 0.0;
    for (double p : pos)
        for (double q : neg) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace subsel
