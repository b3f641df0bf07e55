#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "subsel/archspace.hpp"
#include "subsel/dataset.hpp"
#include "subsel/params.hpp"
#include "subsel/tape.hpp"

namespace subsel {

struct Dims {
    std::size_t d_x = 0;
    std::size_t d_hidden = 0;
    std::size_t classes = 0;
};

// A DAG cell realized as a trainable network over vector inputs:
// Input = dense stem, OpA = dense+ReLU, OpB = dense linear, OpC = max pool
// (window 3, stride 1, same padding), Output = sum of in-neighbors + dense head.
struct MaterializedNet {
    Architecture arch;
    Dims dims;
    ParamSet params;
};

struct PretrainConfig {
    std::size_t epochs = 30;
    double lr = 0.01;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
};

struct TrainedModelRecord {
    std::string source_id;
    Tensor predictions;  // |D_tr| x C, rows sum to 1; row i covers train_idx[i]
    double train_acc = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    std::string config_digest;
};

// Parameters the analytic count formula says the net must have.
std::size_t expected_param_count(const Architecture& arch, const Dims& dims);

// Builds the net with seeded Gaussian init. Throws on non-positive dims or
// invalid arch.
MaterializedNet materialize(const Architecture& arch, const Dims& dims, std::uint64_t seed);

// Forward pass for a batch X (rows x d_x) -> logits (rows x classes).
// Per node v: a(v) = Act(sum over in-edges u of Op_v(a(u))).
Val net_forward(Tape& tape, MaterializedNet& net, Val x);

// The Output node's summed input (rows x d_hidden), i.e. the activation the
// dense head consumes. Used by gradient-norm scoring.
Val net_penultimate(Tape& tape, MaterializedNet& net, Val x);

// Dense head applied to a penultimate activation batch -> logits.
Val net_head(Tape& tape, MaterializedNet& net, Val penultimate);

// Plain forward returning softmax probabilities (no tape kept).
Tensor net_predict(MaterializedNet& net, const Tensor& x);

// Cross-entropy training on the train split. Parameters are snapped to f32
// before predictions/accuracies are computed, so reloading the checkpoint
// reproduces the stored predictions bit-exactly. Throws on divergence,
// naming the arch id and step.
TrainedModelRecord pretrain(MaterializedNet& net, const DatasetBundle& data,
                            const PretrainConfig& config);

// Evenly spaced sample of m architectures after sorting by analytic parameter
// count (ties by id); covers the low/high ends.
std::vector<std::size_t> pick_diverse(const std::vector<Architecture>& archs, std::size_t m,
                                      const Dims& dims);

// Zoo directory layout: zoo/<arch-id>/checkpoint.{json,bin},
// zoo/<arch-id>/predictions.bin, zoo/index.json.
void save_model_record(const std::filesystem::path& zoo_dir, const MaterializedNet& net,
                       const TrainedModelRecord& record);
void write_zoo_index(const std::filesystem::path& zoo_dir,
                     const std::vector<TrainedModelRecord>& records, const Dims& dims,
                     std::size_t n_train);
Tensor load_zoo_predictions(const std::filesystem::path& zoo_dir, const std::string& arch_id,
                            std::size_t n_train, std::size_t classes);
void load_net_checkpoint(const std::filesystem::path& zoo_dir, MaterializedNet& net);

}  // namespace subsel
