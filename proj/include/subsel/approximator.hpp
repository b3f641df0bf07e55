#pragma once

#include <cstdint>
#include <vector>

#include "subsel/archspace.hpp"
#include "subsel/dataset.hpp"
#include "subsel/encoder.hpp"
#include "subsel/params.hpp"
#include "subsel/tape.hpp"

namespace subsel {

// Token-mixing flavor of the block feeding the head. Attention is the real
// model; the other two exist for the ablation grid.
enum class ApproxVariant { Attention, Feedforward, Recurrent };

const char* approx_variant_name(ApproxVariant v);
ApproxVariant approx_variant_from_name(const std::string& name);

// Width set for the attention approximator. Defaults follow the reference
// sizes (projection to 16, attention width 8, FFN 64, head hidden 256).
struct ApproxConfig {
    std::size_t in_width = 80;  // encoder rows are K*d wide
    std::size_t proj = 16;
    std::size_t att = 8;        // attention width, reused as the RNN state width
    std::size_t ffn = 64;
    std::size_t head_hidden = 256;
    std::size_t d_x = 0;
    std::size_t classes = 0;
    double dropout = 0.3;
    std::uint64_t init_seed = 2;
    ApproxVariant variant = ApproxVariant::Attention;
};

struct ApproximatorParams {
    ApproxConfig config;
    ParamSet params;
};

ApproximatorParams make_approximator(const ApproxConfig& config);

// Variant-specific token mixing + FFN with the two layer norms, over rows
// already projected to `proj` width. Input and output are |V| x proj.
// Attention mixes rows by softmax(QK^T/sqrt(att)); Recurrent runs an Elman
// cell down the rows; Feedforward skips mixing (the first residual is the
// projection itself).
Val approx_block_on_tape(Tape& tape, ApproximatorParams& ap, Val h_proj);

// Attention-flavored block; throws unless the params were built with the
// Attention variant.
Val attention_block_on_tape(Tape& tape, ApproximatorParams& ap, Val h_proj);
Tensor attention_block(ApproximatorParams& ap, const Tensor& h_proj);

// zeta row of the last BFS node: projection + attention block on the
// BFS-ordered embedding rows. 1 x proj.
Val zeta_last_on_tape(Tape& tape, ApproximatorParams& ap, const Tensor& h,
                      const BfsOrder& rho);

// Head probabilities for a batch: softmax(dense(relu(dense(concat(zeta, x))))).
// zeta_last is broadcast across the batch rows; dropout_mask (batch x
// head_hidden, entries 0 or 1/(1-p)) may be null for inference.
Val head_probs_on_tape(Tape& tape, ApproximatorParams& ap, Val zeta_last, Val x_rows,
                       const Tensor* dropout_mask);

// Inference: o = softmax(head(concat(zeta_last, x))), dropout off.
Tensor predict(const EmbeddingMatrix& h, const BfsOrder& rho, const Tensor& x_row,
               ApproximatorParams& ap);

// Per-arch supervision bundle assembled by the caller: frozen embeddings,
// BFS order, and zoo prediction targets over D_tr rows.
struct ArchSupervision {
    std::string arch_id;
    Tensor h;        // |V| x in_width
    BfsOrder rho;
    Tensor targets;  // |D_tr| x C
};

struct ApproxTrainConfig {
    std::size_t epochs = 20;
    std::size_t batch = 64;
    double lr = 1e-3;
    double weight_decay = 0.005;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
};

struct TrainedApproximator {
    ApproximatorParams params;
    std::vector<double> train_kl_curve;  // mean batch KL per epoch
    std::vector<double> val_kl_curve;    // mean KL on val archs per epoch
    double best_val_kl = 0.0;
};

// Minimizes mean KL(target || predicted) over uniform (arch, instance) pairs
// with AdamW + cosine annealing + clip-norm 5. Keeps the best-val-KL
// parameter snapshot (validation = held-out archs, instances still from
// D_tr).
TrainedApproximator train_approximator(const std::vector<ArchSupervision>& train_archs,
                                       const std::vector<ArchSupervision>& val_archs,
                                       const Tensor& train_features,
                                       const ApproxTrainConfig& config,
                                       const ApproxConfig& net_config);

// Mean KL(target row || uniform) over all rows: the no-information floor.
double uniform_kl(const Tensor& targets);

// Mean KL(targets || head predictions) over every instance row of each arch.
double mean_kl(const std::vector<ArchSupervision>& archs, const Tensor& train_features,
               ApproximatorParams& ap);

}  // namespace subsel
