#pragma once

#include <cstddef>
#include <vector>

#include "subsel/tensor.hpp"

namespace subsel {

// Plain tensor math used by scoring and evaluation paths (no gradients).
// Differentiable counterparts live on the Tape.

// Row-wise softmax; axis must address the last dimension (-1 or 1).
Tensor softmax(const Tensor& logits, int axis = -1);

// -log(probs[label]); probs is a single distribution row.
double cross_entropy(const Tensor& probs, std::size_t label);

// Mean over rows of KL(p || q). Both must be distributions per row
// (non-negative, sums within 1e-9 of 1); q is floored at 1e-12 before log.
double kl_div(const Tensor& p, const Tensor& q);

// Row standardization followed by the gain/bias affine (both 1 x cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);

// Shannon entropy of one distribution row, natural log.
double entropy(const Tensor& p);

double logsumexp(const std::vector<double>& xs);

std::size_t argmax_row(const Tensor& t, std::size_t row);

}  // namespace subsel
