#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "subsel/encoder.hpp"
#include "subsel/rng.hpp"
#include "testutil.hpp"

using namespace subsel;

namespace {

using Row = std::vector<double>;

Architecture arch_from(std::vector<OpCode> nodes,
                       std::vector<std::pair<std::size_t, std::size_t>> edges) {
    Architecture a;
    a.nodes = std::move(nodes);
    a.edges = std::move(edges);
    a.id = canonical_hash(a);
    return a;
}

// Relabel nodes by `perm` (old index u moves to perm[u]); perm must fix the
// Input and Output endpoints for the result to stay valid.
Architecture permute(const Architecture& a, const std::vector<std::size_t>& perm) {
    Architecture out;
    out.nodes.resize(a.node_count());
    for (std::size_t u = 0; u < a.node_count(); ++u) out.nodes[perm[u]] = a.nodes[u];
    for (const auto& [s, d] : a.edges) out.edges.push_back({perm[s], perm[d]});
    out.id = canonical_hash(out);
    return out;
}

void fill_pattern(Tensor& t, int salt) {
    for (std::size_t i = 0; i < t.data.size(); ++i)
        t.data[i] = 0.05 * (static_cast<double>((i * 7 + salt * 3) % 11) - 5.0);
}

// ---- plain-loop oracle for the encoder building blocks ----

Row affine_row(const Row& x, const Tensor& w, const Tensor& b) {
    Row y(w.cols(), 0.0);
    for (std::size_t j = 0; j < w.cols(); ++j) {
        y[j] = b.at(0, j);
        for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * w.at(i, j);
    }
    return y;
}

Row relu_row(Row x) {
    for (double& v : x) v = std::max(v, 0.0);
    return x;
}

Row layer_norm_row(const Row& x, const Tensor& gamma, const Tensor& beta) {
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (const double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (const double v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    Row y(x.size());
    for (std::size_t j = 0; j < x.size(); ++j)
        y[j] = (x[j] - mean) * inv * gamma.at(0, j) + beta.at(0, j);
    return y;
}

Row concat(const Row& a, const Row& b) {
    Row y = a;
    y.insert(y.end(), b.begin(), b.end());
    return y;
}

Row mlp_block_row(const ParamSet& ps, const std::string& base, const Row& x) {
    Row h = affine_row(x, ps.at(base + "/w1").value, ps.at(base + "/b1").value);
    h = layer_norm_row(h, ps.at(base + "/gamma").value, ps.at(base + "/beta").value);
    h = relu_row(std::move(h));
    return affine_row(h, ps.at(base + "/w2").value, ps.at(base + "/b2").value);
}

Row init_node_row(const ParamSet& ps, std::size_t op_ordinal) {
    Row onehot(5, 0.0);
    onehot[op_ordinal] = 1.0;
    Row h = relu_row(affine_row(onehot, ps.at("encoder/init/w1").value,
                                ps.at("encoder/init/b1").value));
    return affine_row(h, ps.at("encoder/init/w2").value, ps.at("encoder/init/b2").value);
}

}  // namespace

TEST_CASE("relabeling interior nodes permutes embedding rows bit-exactly") {
    auto enc = make_encoder(EncoderConfig{3, 5, 8, 4, 21});
    for (const Architecture& a : generate_space(13, 10)) {
        const std::size_t n = a.node_count();
        if (n < 4) continue;
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        std::reverse(perm.begin() + 1, perm.end() - 1);
        const Architecture b = permute(a, perm);
        REQUIRE(validate(b).empty());

        const Tensor ha = encode(a, enc).h;
        const Tensor hb = encode(b, enc).h;
        REQUIRE(ha.shape == hb.shape);
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t j = 0; j < ha.cols(); ++j)
                CHECK(hb.at(perm[u], j) == ha.at(u, j));
    }
}

TEST_CASE("K=1 reduces to InitNode outputs") {
    auto enc = make_encoder(EncoderConfig{1, 4, 8, 4, 3});
    const Architecture a = arch_from({OpCode::Input, OpCode::OpB, OpCode::Output},
                                     {{0, 1}, {1, 2}});
    const Tensor h = encode(a, enc).h;
    REQUIRE(h.rows() == 3);
    REQUIRE(h.cols() == 4);  // K*d with K=1
    for (std::size_t u = 0; u < 3; ++u) {
        const Row want = init_node_row(enc.params, static_cast<std::size_t>(a.nodes[u]));
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(h.at(u, j) == doctest::Approx(want[j]).epsilon(1e-12));
    }
}

TEST_CASE("two-node graph matches the hand-unrolled message-passing oracle") {
    auto enc = make_encoder(EncoderConfig{2, 3, 4, 2, 1});
    int salt = 1;
    for (const auto& p : enc.params.all()) fill_pattern(p->value, salt++);

    const Architecture a = arch_from({OpCode::Input, OpCode::Output}, {{0, 1}});
    const Tensor h = encode(a, enc).h;
    REQUIRE(h.rows() == 2);
    REQUIRE(h.cols() == 6);  // K*d = 2*3

    const ParamSet& ps = enc.params;
    const Row h0_in = init_node_row(ps, 0);   // Input one-hot
    const Row h0_out = init_node_row(ps, 1);  // Output one-hot

    // One message layer: each node's sole neighbor is the other node.
    const Row msg_in = mlp_block_row(ps, "encoder/layer0/edge", concat(h0_in, h0_out));
    const Row msg_out = mlp_block_row(ps, "encoder/layer0/edge", concat(h0_out, h0_in));
    const Row h1_in = mlp_block_row(ps, "encoder/layer0/update", concat(h0_in, msg_in));
    const Row h1_out = mlp_block_row(ps, "encoder/layer0/update", concat(h0_out, msg_out));

    const Row want_in = concat(h0_in, h1_in);
    const Row want_out = concat(h0_out, h1_out);
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(h.at(0, j) == doctest::Approx(want_in[j]).epsilon(1e-10));
        CHECK(h.at(1, j) == doctest::Approx(want_out[j]).epsilon(1e-10));
    }
}

TEST_CASE("elbo matches a closed-form oracle and splits into recon - KL") {
    auto enc = make_encoder(EncoderConfig{2, 3, 4, 2, 5});
    const Architecture a = arch_from({OpCode::Input, OpCode::Output}, {{0, 1}});
    const std::uint64_t seed = 99;

    const Tensor h = encode(a, enc).h;
    const ParamSet& ps = enc.params;
    const Tensor& mu_w = ps.at("encoder/vgae/mu_w").value;
    const Tensor& mu_b = ps.at("encoder/vgae/mu_b").value;
    const Tensor& lv_w = ps.at("encoder/vgae/logvar_w").value;
    const Tensor& lv_b = ps.at("encoder/vgae/logvar_b").value;
    const double tau_inv = std::exp(-ps.at("encoder/vgae/log_tau").value.value());

    Tensor mu = Tensor::zeros({2, 2}), lv = Tensor::zeros({2, 2});
    for (std::size_t u = 0; u < 2; ++u)
        for (std::size_t j = 0; j < 2; ++j) {
            mu.at(u, j) = mu_b.at(0, j);
            lv.at(u, j) = lv_b.at(0, j);
            for (std::size_t k = 0; k < h.cols(); ++k) {
                mu.at(u, j) += h.at(u, k) * mu_w.at(k, j);
                lv.at(u, j) += h.at(u, k) * lv_w.at(k, j);
            }
        }

    Rng rng(seed);
    Tensor z = Tensor::zeros({2, 2});
    for (std::size_t i = 0; i < 4; ++i)
        z.data[i] = mu.data[i] + rng.normal() * std::exp(0.5 * lv.data[i]);

    auto score = [&](std::size_t u, std::size_t v) {
        double dot = 0.0;
        for (std::size_t j = 0; j < 2; ++j) dot += z.at(u, j) * z.at(v, j);
        return dot * tau_inv;
    };
    auto log_sigmoid = [](double s) { return -std::log1p(std::exp(-s)); };
    const double recon = log_sigmoid(score(0, 1)) + log_sigmoid(-score(1, 0));
    CHECK(recon <= 0.0);

    double kl = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        kl += 0.5 * (std::exp(lv.data[i]) + mu.data[i] * mu.data[i] - 1.0 - lv.data[i]);
    CHECK(kl >= 0.0);

    CHECK(elbo(a, enc, seed) == doctest::Approx(recon - kl).epsilon(1e-9));

    // Zeroed heads pin q to the prior: KL vanishes and the ELBO is pure
    // reconstruction with z = eps.
    for (const char* name : {"encoder/vgae/mu_w", "encoder/vgae/mu_b", "encoder/vgae/logvar_w",
                             "encoder/vgae/logvar_b"})
        std::fill(enc.params.at(name).value.data.begin(), enc.params.at(name).value.data.end(),
                  0.0);
    Rng rng2(seed);
    Tensor eps = Tensor::zeros({2, 2});
    for (double& v : eps.data) v = rng2.normal();
    auto score0 = [&](std::size_t u, std::size_t v) {
        return (eps.at(u, 0) * eps.at(v, 0) + eps.at(u, 1) * eps.at(v, 1)) * tau_inv;
    };
    const double recon0 = log_sigmoid(score0(0, 1)) + log_sigmoid(-score0(1, 0));
    CHECK(elbo(a, enc, seed) == doctest::Approx(recon0).epsilon(1e-12));
}

TEST_CASE("elbo gradients pass the finite-difference bound on a 3-node graph") {
    auto enc = make_encoder(EncoderConfig{2, 3, 4, 3, 7});
    const Architecture a = arch_from({OpCode::Input, OpCode::OpA, OpCode::Output},
                                     {{0, 1}, {1, 2}, {0, 2}});
    const auto r = testutil::fd_check(
        enc.params, [&](Tape& tape) { return elbo_on_tape(tape, a, enc, 31); });
    INFO("worst entry: ", r.worst);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("training raises the mean ELBO and yields informative edge scores") {
    const auto space = generate_space(41, 16);
    const std::vector<Architecture> train(space.begin(), space.begin() + 12);
    const std::vector<Architecture> held_out(space.begin() + 12, space.end());

    TrainEncoderConfig cfg;
    cfg.epochs = 8;
    cfg.lr = 3e-3;
    cfg.batch = 4;
    cfg.seed = 2;
    auto trained = train_encoder(train, cfg, EncoderConfig{2, 4, 8, 4, 11});
    REQUIRE(trained.elbo_curve.size() == 8);
    CHECK(trained.elbo_curve.back() > trained.elbo_curve.front());

    CHECK(edge_auc(held_out, trained.enc) > 0.5);

    // Frozen parameters give deterministic embeddings.
    const Tensor h1 = encode(train[0], trained.enc).h;
    const Tensor h2 = encode(train[0], trained.enc).h;
    CHECK(h1.data == h2.data);

    CHECK_THROWS_AS(train_encoder(held_out, TrainEncoderConfig{}, EncoderConfig{}),
                    std::invalid_argument);
}
