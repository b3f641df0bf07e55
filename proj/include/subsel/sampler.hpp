#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subsel/approximator.hpp"
#include "subsel/archspace.hpp"
#include "subsel/dataset.hpp"
#include "subsel/encoder.hpp"
#include "subsel/params.hpp"
#include "subsel/tape.hpp"

namespace subsel {

// Ordered subset draw. Downstream training treats `order` as a set; the order
// only documents how the draw unfolded.
struct SubsetSelection {
    std::vector<std::size_t> order;
    std::vector<std::size_t> argtop;  // deterministic top-b of pi (when meaningful)
    std::vector<double> pi;           // logit snapshot
    std::string method;
    std::uint64_t seed = 0;
    std::string config_digest;
};

// Exact Plackett-Luce probability of drawing the ordered list s under logits
// pi, computed in log space. Throws on repeats or out-of-range indices.
double sequence_log_prob(const std::vector<double>& pi, const std::vector<std::size_t>& s);
double sequence_prob(const std::vector<double>& pi, const std::vector<std::size_t>& s);

// Exact sampler for the Plackett-Luce distribution via Gumbel-top-b.
SubsetSelection sample_subset(const std::vector<double>& pi, std::size_t b, std::uint64_t seed);

// Entropy of the single-step categorical softmax(pi).
double sampler_entropy(const std::vector<double>& pi);

// Mean-field surrogate: b * sum_i softmax(pi)_i * loss_i - lambda * entropy.
double surrogate_loss(const std::vector<double>& pi, const std::vector<double>& losses,
                      std::size_t b, double lambda);
Val surrogate_loss_on_tape(Tape& tape, Val pi, const std::vector<double>& losses, std::size_t b,
                           double lambda);

// Everything selection needs about one architecture, computed once from the
// frozen encoder and approximator (forward passes only).
struct SamplerArchContext {
    std::string arch_id;
    Tensor pooled_h;             // 1 x K*d mean over node rows
    Tensor o;                    // |D_tr| x C approximator outputs
    std::vector<double> losses;  // cross-entropy of o rows against labels
};

SamplerArchContext make_arch_context(const Architecture& arch, EncoderParams& enc,
                                     ApproximatorParams& ap, const Tensor& train_features,
                                     const std::vector<std::size_t>& train_labels);

struct TransductiveConfig {
    std::size_t steps = 200;
    double lr = 0.05;
    double lambda = 0.1;
    std::uint64_t seed = 0;
};

// Optimizes pi over the given per-instance losses (Adam, one gradient
// evaluation per step), then draws the subset. Shared by the transductive and
// hybrid paths.
SubsetSelection optimize_and_sample(const std::vector<double>& losses, std::size_t b,
                                    const TransductiveConfig& config);

SubsetSelection transductive_select(const SamplerArchContext& ctx, std::size_t b,
                                    const TransductiveConfig& config);

// Inductive scorer psi: dense((pooled H) ++ o ++ x ++ one-hot y) -> 64 -> 16
// -> 1 with two Leaky-ReLUs and a sigmoid output.
struct InductiveConfig {
    std::size_t pooled_width = 80;
    std::size_t d_x = 0;
    std::size_t classes = 0;
    std::size_t h1 = 64;
    std::size_t h2 = 16;
    double leaky_slope = 0.01;
    std::uint64_t init_seed = 3;
};

struct InductiveParams {
    InductiveConfig config;
    ParamSet params;
};

InductiveParams make_inductive(const InductiveConfig& config);

// Rows: [pooled_h, o_i, x_i, onehot(y_i)] for every instance.
Tensor inductive_input_matrix(const Tensor& pooled_h, const Tensor& o, const Tensor& x,
                              const std::vector<std::size_t>& labels, std::size_t classes);

// Sigmoid scores, n x 1.
Val inductive_scores_on_tape(Tape& tape, InductiveParams& ind, Val input_rows);
Tensor inductive_scores(InductiveParams& ind, const SamplerArchContext& ctx, const Tensor& x,
                        const std::vector<std::size_t>& labels);

// Single-instance convenience.
double inductive_score(const Tensor& pooled_h, const Tensor& x_row, std::size_t y,
                       const Tensor& o_row, InductiveParams& ind);

struct InductiveTrainConfig {
    std::size_t epochs = 60;
    double lr = 1e-3;
    double lambda = 0.1;        // entropy weight inside the surrogate
    double lambda_prime = 0.1;  // budget regularizer weight
    std::uint64_t seed = 0;
};

// Minimizes surrogate_loss with pi = logit(scores) plus the literal budget
// penalty lambda' * (sum_i score_i - b), one Adam step per (epoch, arch).
InductiveParams train_inductive(const std::vector<SamplerArchContext>& contexts,
                                const Tensor& train_features,
                                const std::vector<std::size_t>& train_labels, std::size_t b,
                                const InductiveTrainConfig& config,
                                const InductiveConfig& net_config);

// pi = logit of sigmoid scores (the pre-sigmoid activation); pure forward,
// zero gradient evaluations.
SubsetSelection inductive_select(InductiveParams& ind, const SamplerArchContext& ctx,
                                 const Tensor& x, const std::vector<std::size_t>& labels,
                                 std::size_t b, std::uint64_t seed);

// Stage 1: inductive superset of size B (sub-seed derived from seed), kept in
// ascending index order; stage 2: transductive optimization restricted to the
// superset, final draw seeded with `config.seed` so B = |D_tr| reproduces
// transductive_select exactly.
SubsetSelection hybrid_select(InductiveParams& ind, const SamplerArchContext& ctx,
                              const Tensor& x, const std::vector<std::size_t>& labels,
                              std::size_t big_b, std::size_t b,
                              const TransductiveConfig& config);

}  // namespace subsel
