#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subsel/archspace.hpp"
#include "subsel/params.hpp"
#include "subsel/tape.hpp"

namespace subsel {

struct EncoderConfig {
    std::size_t k_stages = 5;  // K: number of embedding stages (K-1 message layers)
    std::size_t d = 16;        // per-stage embedding width
    std::size_t hidden = 128;  // EdgeEmb/Update hidden width
    std::size_t latent = 16;   // VGAE latent width
    std::uint64_t init_seed = 1;
};

// GNN + VGAE heads. EdgeEmb/Update parameter sets are decoupled per layer;
// the decoder has a learnable temperature (stored as log tau).
struct EncoderParams {
    EncoderConfig config;
    ParamSet params;
};

struct EmbeddingMatrix {
    std::string arch_id;
    Tensor h;  // |V| x (K*d); row u = concat of all K stages for node u
};

EncoderParams make_encoder(const EncoderConfig& config = {});

// Differentiable encode; rows of the result are bit-exact equivariant under
// node relabeling (grouped sums run in canonical byte order).
Val encode_on_tape(Tape& tape, const Architecture& arch, EncoderParams& enc);

EmbeddingMatrix encode(const Architecture& arch, EncoderParams& enc);

// Single-sample reparameterized ELBO: Bernoulli reconstruction over all
// ordered node pairs u != v minus KL(q || N(0, I)).
Val elbo_on_tape(Tape& tape, const Architecture& arch, EncoderParams& enc,
                 std::uint64_t latent_sample_seed);

double elbo(const Architecture& arch, EncoderParams& enc, std::uint64_t latent_sample_seed);

struct TrainEncoderConfig {
    std::size_t epochs = 10;
    double lr = 1e-3;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
};

struct TrainedEncoder {
    EncoderParams enc;
    std::vector<double> elbo_curve;  // mean training ELBO per epoch
};

// Maximizes mean ELBO over the space with Adam. Throws on divergence or when
// |space| < batch size.
TrainedEncoder train_encoder(const std::vector<Architecture>& space,
                             const TrainEncoderConfig& config = {},
                             const EncoderConfig& enc_config = {});

// Ranking AUC of decoder edge scores (using latent means) against true edge
// presence, pooled over the given graphs.
double edge_auc(const std::vector<Architecture>& archs, EncoderParams& enc);

}  // namespace subsel
