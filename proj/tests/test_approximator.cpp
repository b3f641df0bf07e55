#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "subsel/approximator.hpp"
#include "subsel/zoo.hpp"
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

ApproxConfig tiny_config(ApproxVariant variant = ApproxVariant::Attention) {
    ApproxConfig c;
    c.in_width = 6;
    c.proj = 4;
    c.att = 3;
    c.ffn = 5;
    c.head_hidden = 8;
    c.d_x = 2;
    c.classes = 3;
    c.init_seed = 17;
    c.variant = variant;
    return c;
}

Row matvec(const Row& x, const Tensor& w) {
    Row y(w.cols(), 0.0);
    for (std::size_t j = 0; j < w.cols(); ++j)
        for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * w.at(i, j);
    return y;
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

// The two layer norms + FFN applied to one pre-residual row.
Row zeta_tail(const ParamSet& ps, const Row& pre) {
    const Row z1 = layer_norm_row(pre, ps.at("approx/ln1/gamma").value,
                                  ps.at("approx/ln1/beta").value);
    Row hidden = matvec(z1, ps.at("approx/ffn/w1").value);
    for (double& v : hidden) v = std::max(v, 0.0);
    const Row z2 = matvec(hidden, ps.at("approx/ffn/w2").value);
    Row sum(z1.size());
    for (std::size_t j = 0; j < z1.size(); ++j) sum[j] = z1[j] + z2[j];
    return layer_norm_row(sum, ps.at("approx/ln2/gamma").value, ps.at("approx/ln2/beta").value);
}

}  // namespace

TEST_CASE("a singleton sequence attends to itself with weight exactly 1") {
    auto ap = make_approximator(tiny_config());
    const ParamSet& ps = ap.params;
    const Tensor h_proj = testutil::random_tensor(1, 4, 5, 0.7);

    const Tensor got = attention_block(ap, h_proj);
    REQUIRE(got.rows() == 1);
    REQUIRE(got.cols() == 4);

    // Oracle assumes the attention weight is 1: mixed row = (v . wc) + h.
    const Row h(h_proj.data.begin(), h_proj.data.end());
    const Row v = matvec(h, ps.at("approx/att/wv").value);
    Row pre = matvec(v, ps.at("approx/att/wc").value);
    for (std::size_t j = 0; j < 4; ++j) pre[j] += h[j];
    const Row want = zeta_tail(ps, pre);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(got.at(0, j) == doctest::Approx(want[j]).epsilon(1e-10));
}

TEST_CASE("attention rows sum to 1 and the 2-row block matches the hand-unrolled oracle") {
    auto ap = make_approximator(tiny_config());
    const ParamSet& ps = ap.params;
    const Tensor h_proj = testutil::random_tensor(2, 4, 9, 0.8);

    const Row h0(h_proj.data.begin(), h_proj.data.begin() + 4);
    const Row h1(h_proj.data.begin() + 4, h_proj.data.end());

    // Eq. (6): a_{u,v} = softmax_v(q_u . k_v / sqrt(att)).
    const Tensor& wq = ps.at("approx/att/wq").value;
    const Tensor& wk = ps.at("approx/att/wk").value;
    const Tensor& wv = ps.at("approx/att/wv").value;
    const Tensor& wc = ps.at("approx/att/wc").value;
    const Row q[2] = {matvec(h0, wq), matvec(h1, wq)};
    const Row k[2] = {matvec(h0, wk), matvec(h1, wk)};
    const Row v[2] = {matvec(h0, wv), matvec(h1, wv)};

    double a[2][2];
    for (int u = 0; u < 2; ++u) {
        double s[2];
        for (int w = 0; w < 2; ++w) {
            s[w] = 0.0;
            for (std::size_t j = 0; j < 3; ++j) s[w] += q[u][j] * k[w][j];
            s[w] /= std::sqrt(3.0);
        }
        const double m = std::max(s[0], s[1]);
        const double z = std::exp(s[0] - m) + std::exp(s[1] - m);
        for (int w = 0; w < 2; ++w) a[u][w] = std::exp(s[w] - m) / z;
        CHECK(a[u][0] + a[u][1] == doctest::Approx(1.0).epsilon(1e-9));
    }

    const Tensor got = attention_block(ap, h_proj);
    for (int u = 0; u < 2; ++u) {
        Row mixed_v(3, 0.0);
        for (int w = 0; w < 2; ++w)
            for (std::size_t j = 0; j < 3; ++j) mixed_v[j] += a[u][w] * v[w][j];
        Row pre = matvec(mixed_v, wc);
        const Row& hu = u == 0 ? h0 : h1;
        for (std::size_t j = 0; j < 4; ++j) pre[j] += hu[j];
        const Row want = zeta_tail(ps, pre);
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(got.at(u, j) == doctest::Approx(want[j]).epsilon(1e-10));
    }
}

TEST_CASE("predict is row-stochastic, deterministic, and per-instance independent") {
    auto cfg = tiny_config();
    cfg.in_width = 8;  // K*d of the encoder below
    auto ap = make_approximator(cfg);
    auto enc = make_encoder(EncoderConfig{2, 4, 8, 4, 3});
    const Architecture a = arch_from({OpCode::Input, OpCode::OpA, OpCode::Output},
                                     {{0, 1}, {1, 2}});
    const EmbeddingMatrix h = encode(a, enc);
    const BfsOrder rho = bfs_order(a);

    const Tensor batch = testutil::random_tensor(3, 2, 33, 1.2);
    const Tensor probs = predict(h, rho, batch, ap);
    REQUIRE(probs.rows() == 3);
    REQUIRE(probs.cols() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(probs.at(r, c) > 0.0);
            CHECK(probs.at(r, c) < 1.0);
            sum += probs.at(r, c);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }

    CHECK(predict(h, rho, batch, ap).data == probs.data);

    // Each row depends only on its own instance.
    for (std::size_t r = 0; r < 3; ++r) {
        Tensor one = Tensor::zeros({1, 2});
        one.at(0, 0) = batch.at(r, 0);
        one.at(0, 1) = batch.at(r, 1);
        const Tensor p1 = predict(h, rho, one, ap);
        for (std::size_t c = 0; c < 3; ++c) CHECK(p1.at(0, c) == probs.at(r, c));
    }
}

TEST_CASE("feedforward and recurrent variants run and differ from attention") {
    const Tensor h_proj = testutil::random_tensor(3, 4, 21, 0.9);

    auto att = make_approximator(tiny_config(ApproxVariant::Attention));
    auto ff = make_approximator(tiny_config(ApproxVariant::Feedforward));
    auto rnn = make_approximator(tiny_config(ApproxVariant::Recurrent));
    CHECK(ff.params.has("approx/ffn/w1"));
    CHECK_FALSE(ff.params.has("approx/att/wq"));
    CHECK(rnn.params.has("approx/rnn/w_rec"));

    Tensor out[3];
    ApproximatorParams* aps[3] = {&att, &ff, &rnn};
    for (int i = 0; i < 3; ++i) {
        Tape tape;
        const Val z = approx_block_on_tape(tape, *aps[i], tape.constant(h_proj, "h"));
        out[i] = tape.value(z);
        REQUIRE(out[i].rows() == 3);
        REQUIRE(out[i].cols() == 4);
        Tape tape2;
        CHECK(tape2.value(approx_block_on_tape(tape2, *aps[i], tape2.constant(h_proj, "h"))).data ==
              out[i].data);
    }
    CHECK(out[0].data != out[1].data);
    CHECK(out[1].data != out[2].data);

    CHECK_THROWS_AS(attention_block(ff, h_proj), std::invalid_argument);
    CHECK_THROWS_AS(attention_block(rnn, h_proj), std::invalid_argument);
    CHECK_THROWS_AS(make_approximator(ApproxConfig{}), std::invalid_argument);
}

TEST_CASE("KL loss gradients pass the finite-difference bound") {
    auto cfg = tiny_config();
    cfg.in_width = 8;
    auto ap = make_approximator(cfg);
    auto enc = make_encoder(EncoderConfig{2, 4, 8, 4, 13});
    const Architecture a = arch_from(
        {OpCode::Input, OpCode::OpB, OpCode::OpA, OpCode::Output},
        {{0, 1}, {0, 2}, {1, 3}, {2, 3}});
    const EmbeddingMatrix h = encode(a, enc);
    const BfsOrder rho = bfs_order(a);
    const Tensor x = testutil::random_tensor(2, 2, 3, 1.1);
    Tensor targets = Tensor::matrix(2, 3, {0.6, 0.3, 0.1, 0.2, 0.5, 0.3});

    const auto r = testutil::fd_check(ap.params, [&](Tape& tape) {
        Val zeta = zeta_last_on_tape(tape, ap, h.h, rho);
        Val probs = head_probs_on_tape(tape, ap, zeta, tape.constant(x, "x"), nullptr);
        return tape.kl_div_mean(tape.constant(targets, "t"), probs);
    });
    INFO("worst entry: ", r.worst);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("training beats the uniform-prediction floor on zoo supervision") {
    const auto data = make_blobs(120, 6, 3, 6.0, 51);
    const auto space = generate_space(7, 8);
    auto enc = make_encoder(EncoderConfig{2, 4, 8, 4, 19});

    std::vector<ArchSupervision> train_sup, val_sup;
    for (std::size_t i = 0; i < space.size(); ++i) {
        auto net = materialize(space[i], Dims{6, 8, 3}, 100 + i);
        const auto record = pretrain(net, data, PretrainConfig{6, 0.01, 16, 40 + i});
        ArchSupervision sup;
        sup.arch_id = space[i].id;
        sup.h = encode(space[i], enc).h;
        sup.rho = bfs_order(space[i]);
        sup.targets = record.predictions;
        (i < 6 ? train_sup : val_sup).push_back(std::move(sup));
    }
    const Tensor train_x = rows_at(data.features, data.train_idx);

    ApproxConfig net_cfg = tiny_config();
    net_cfg.in_width = 8;
    net_cfg.d_x = 6;
    net_cfg.proj = 8;
    net_cfg.att = 4;
    net_cfg.ffn = 16;
    net_cfg.head_hidden = 32;

    ApproxTrainConfig tcfg;
    tcfg.epochs = 10;
    tcfg.batch = 32;
    tcfg.lr = 2e-3;
    tcfg.seed = 5;
    auto trained = train_approximator(train_sup, val_sup, train_x, tcfg, net_cfg);

    REQUIRE(trained.train_kl_curve.size() == 10);
    REQUIRE(trained.val_kl_curve.size() == 10);
    CHECK(trained.best_val_kl > 0.0);
    CHECK(trained.best_val_kl <= trained.val_kl_curve.front() + 1e-12);

    double train_floor = 0.0;
    for (const auto& sup : train_sup) train_floor += uniform_kl(sup.targets);
    train_floor /= static_cast<double>(train_sup.size());
    CHECK(mean_kl(train_sup, train_x, trained.params) < train_floor);

    double val_floor = 0.0;
    for (const auto& sup : val_sup) val_floor += uniform_kl(sup.targets);
    val_floor /= static_cast<double>(val_sup.size());
    CHECK(trained.best_val_kl < val_floor);

    CHECK_THROWS_AS(train_approximator({}, val_sup, train_x, tcfg, net_cfg),
                    std::invalid_argument);
}
