#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "subsel/params.hpp"
#include "subsel/tensor.hpp"

namespace subsel {

// Handle to a value on a Tape.
struct Val {
    int id = -1;
};

// Reverse-mode autodiff over an explicit op tape. Forward evaluation is
// eager; backward() replays registered closures in reverse. Every forward op
// checks its output for non-finite values and raises NumericError naming the
// op; backward does the same for completed node gradients.
class Tape {
public:
    Val constant(Tensor t, const char* name = "constant");
    Val param(Parameter& p);

    // Linear algebra.
    Val matmul(Val a, Val b);
    Val transpose(Val a);

    // Elementwise and broadcast arithmetic.
    Val add(Val a, Val b);
    Val add_row(Val a, Val row);       // row (1 x n) broadcast over rows of a
    Val add_many(const std::vector<Val>& xs);
    Val sub(Val a, Val b);
    Val mul(Val a, Val b);             // Hadamard
    Val affine(Val a, double k, double c);  // k*a + c
    Val scale(Val a, double k) { return affine(a, k, 0.0); }
    Val scale_by(Val a, Val s);        // s is a scalar Val (learnable scaling)

    // Nonlinearities.
    Val relu(Val a);
    Val leaky_relu(Val a, double slope);
    Val sigmoid(Val a);
    Val tanh_(Val a);
    Val exp_(Val a);
    Val log_(Val a);                   // ln(max(x, 1e-12))
    Val softplus(Val a);
    Val softmax_rows(Val a);
    Val layer_norm(Val a, Val gain, Val bias, double eps = 1e-5);
    Val maxpool1d3(Val a);             // window 3, stride 1, same padding, per row

    // Shape ops.
    Val concat_cols(const std::vector<Val>& xs);
    Val concat_cols(Val a, Val b) { return concat_cols(std::vector<Val>{a, b}); }
    Val concat_rows(const std::vector<Val>& xs);
    Val gather_rows(Val a, std::vector<std::size_t> idx);

    // Grouped aggregation: out row u = sum of rows m[i] for i in nbrs[u],
    // summed in lexicographic byte order of the rows so the result is
    // bit-identical under any relabeling of the graph. Groups may index any
    // rows of m (e.g. per-pair edge messages).
    Val neighbor_sum(Val m, const std::vector<std::vector<std::size_t>>& nbrs);

    // Reductions.
    Val sum_all(Val a);
    Val mean_all(Val a);
    Val sum_rows(Val a);               // column sums -> 1 x n
    Val dot(Val a, Val b);             // same shape -> scalar

    // Losses.
    Val cross_entropy_mean(Val logits, const std::vector<std::size_t>& labels);
    Val kl_div_mean(Val target_probs, Val pred_probs);  // mean over rows of KL(t || p)

    const Tensor& value(Val v) const { return nodes_.at(v.id).out; }
    // Gradient of the last backward() wrt v; zeros if v was off-path.
    Tensor grad_of(Val v) const;

    // Seeds d(loss)/d(loss) = 1 and accumulates into Parameter::grad for every
    // param leaf on the path. Increments the thread-local grad-eval counter.
    void backward(Val loss);

    static std::uint64_t grad_evals();
    static void reset_grad_evals();

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor out;
        std::vector<int> inputs;
        std::function<void(Tape&, int)> back;  // self id passed in
        const char* op;
        bool needs_grad = false;
        Parameter* leaf = nullptr;
    };

    int push(Tensor out, std::vector<int> inputs, const char* op,
             std::function<void(Tape&, int)> back);
    bool needs(int id) const { return nodes_[id].needs_grad; }
    const Tensor& v(int id) const { return nodes_[id].out; }
    Tensor& g(int id) { return grads_[id]; }
    void acc(int id, const Tensor& t);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;  // parallel to nodes_, live during backward
};

// Zeroes grads in params, then runs tape.backward(loss). loss must be a finite
// scalar. Parameters in params that never touched the tape keep zero grad.
void forward_backward(Tape& tape, Val loss, ParamSet& params);

}  // namespace subsel
