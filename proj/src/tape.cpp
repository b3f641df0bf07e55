#include "subsel/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "subsel/kernels.hpp"

namespace subsel {

namespace {

thread_local std::uint64_t t_grad_evals = 0;

constexpr double kLogFloor = 1e-12;

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::uint64_t Tape::grad_evals() { return t_grad_evals; }
void Tape::reset_grad_evals() { t_grad_evals = 0; }

int Tape::push(Tensor out, std::vector<int> inputs, const char* op,
               std::function<void(Tape&, int)> back) {
    require_finite(out, op);
    Node n;
    n.out = std::move(out);
    n.inputs = std::move(inputs);
    n.back = std::move(back);
    n.op = op;
    for (int in : n.inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::acc(int id, const Tensor& t) {
    if (!needs(id)) return;
    Tensor& dst = grads_[id];
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += t.data[i];
}

Val Tape::constant(Tensor t, const char* name) {
    return {push(std::move(t), {}, name, nullptr)};
}

Val Tape::param(Parameter& p) {
    Node n;
    n.out = p.value;
    n.op = "param";
    n.needs_grad = true;
    n.leaf = &p;
    require_finite(n.out, p.name.c_str());
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

Val Tape::matmul(Val a, Val b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (B.rows() != k)
        throw NumericError("matmul: inner extents differ, " + A.shape_str() + " vs " + B.shape_str());
    Tensor out = Tensor::zeros({m, n});
    kern::matmul(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    return {push(std::move(out), {a.id, b.id}, "matmul", [a, b, m, k, n](Tape& t, int self) {
        const Tensor& dOut = t.g(self);
        const Tensor& A2 = t.v(a.id);
        const Tensor& B2 = t.v(b.id);
        if (t.needs(a.id)) {
            Tensor dA = Tensor::zeros({m, k});
            kern::matmul_nt(dOut.data.data(), B2.data.data(), dA.data.data(), m, n, k);
            t.acc(a.id, dA);
        }
        if (t.needs(b.id)) {
            Tensor dB = Tensor::zeros({k, n});
            kern::matmul_tn(A2.data.data(), dOut.data.data(), dB.data.data(), m, k, n);
            t.acc(b.id, dB);
        }
    })};
}

Val Tape::transpose(Val a) {
    const Tensor& A = v(a.id);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
    return {push(std::move(out), {a.id}, "transpose", [a, m, n](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        const Tensor& dOut = t.g(self);
        Tensor dA = Tensor::zeros({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dA.at(i, j) = dOut.at(j, i);
        t.acc(a.id, dA);
    })};
}

Val Tape::add(Val a, Val b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (!A.same_shape(B))
        throw NumericError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
    return {push(std::move(out), {a.id, b.id}, "add", [a, b](Tape& t, int self) {
        t.acc(a.id, t.g(self));
        t.acc(b.id, t.g(self));
    })};
}

Val Tape::add_row(Val a, Val row) {
    const Tensor& A = v(a.id);
    const Tensor& R = v(row.id);
    const std::size_t m = A.rows(), n = A.cols();
    if (R.rows() != 1 || R.cols() != n)
        throw NumericError("add_row: row must be 1 x " + std::to_string(n) + ", got " + R.shape_str());
    Tensor out = A;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += R.data[j];
    return {push(std::move(out), {a.id, row.id}, "add_row", [a, row, m, n](Tape& t, int self) {
        const Tensor& dOut = t.g(self);
        t.acc(a.id, dOut);
        if (t.needs(row.id)) {
            Tensor dR = Tensor::zeros({1, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dR.data[j] += dOut.at(i, j);
            t.acc(row.id, dR);
        }
    })};
}

Val Tape::add_many(const std::vector<Val>& xs) {
    if (xs.empty()) throw NumericError("add_many: no inputs");
    Tensor out = v(xs[0].id);
    std::vector<int> ids{xs[0].id};
    for (std::size_t i = 1; i < xs.size(); ++i) {
        const Tensor& X = v(xs[i].id);
        if (!X.same_shape(out)) throw NumericError("add_many: shape mismatch");
        for (std::size_t j = 0; j < out.data.size(); ++j) out.data[j] += X.data[j];
        ids.push_back(xs[i].id);
    }
    std::vector<int> captured = ids;
    return {push(std::move(out), std::move(ids), "add_many", [captured](Tape& t, int self) {
        for (int id : captured) t.acc(id, t.g(self));
    })};
}

Val Tape::sub(Val a, Val b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (!A.same_shape(B))
        throw NumericError("sub: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i];
    return {push(std::move(out), {a.id, b.id}, "sub", [a, b](Tape& t, int self) {
        const Tensor& dOut = t.g(self);
        t.acc(a.id, dOut);
        if (t.needs(b.id)) {
            Tensor neg = dOut;
            for (double& x : neg.data) x = -x;
            t.acc(b.id, neg);
        }
    })};
}

Val Tape::mul(Val a, Val b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (!A.same_shape(B))
        throw NumericError("mul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
    return {push(std::move(out), {a.id, b.id}, "mul", [a, b](Tape& t, int self) {
        const Tensor& dOut = t.g(self);
        if (t.needs(a.id)) {
            Tensor dA = dOut;
            const Tensor& B2 = t.v(b.id);
            for (std::size_t i = 0; i < dA.data.size(); ++i) dA.data[i] *= B2.data[i];
            t.acc(a.id, dA);
        }
        if (t.needs(b.id)) {
            Tensor dB = dOut;
            const Tensor& A2 = t.v(a.id);
            for (std::size_t i = 0; i < dB.data.size(); ++i) dB.data[i] *= A2.data[i];
            t.acc(b.id, dB);
        }
    })};
}

Val Tape::affine(Val a, double k, double c) {
    Tensor out = v(a.id);
    for (double& x : out.data) x = k * x + c;
    return {push(std::move(out), {a.id}, "affine", [a, k](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        Tensor dA = t.g(self);
        for (double& x : dA.data) x *= k;
        t.acc(a.id, dA);
    })};
}

Val Tape::scale_by(Val a, Val s) {
    const Tensor& A = v(a.id);
    const Tensor& S = v(s.id);
    if (!S.is_scalar()) throw NumericError("scale_by: scale must be scalar, got " + S.shape_str());
    const double sv = S.value();
    Tensor out = A;
    for (double& x : out.data) x *= sv;
    return {push(std::move(out), {a.id, s.id}, "scale_by", [a, s, sv](Tape& t, int self) {
        const Tensor& dOut = t.g(self);
        if (t.needs(a.id)) {
            Tensor dA = dOut;
            for (double& x : dA.data) x *= sv;
            t.acc(a.id, dA);
        }
        if (t.needs(s.id)) {
            const Tensor& A2 = t.v(a.id);
            double ds = 0.0;
            for (std::size_t i = 0; i < A2.data.size(); ++i) ds += dOut.data[i] * A2.data[i];
            t.acc(s.id, Tensor::scalar(ds));
        }
    })};
}

Val Tape::relu(Val a) {
    Tensor out = v(a.id);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return {push(std::move(out), {a.id}, "relu", [a](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        Tensor dA = t.g(self);
        const Tensor& A2 = t.v(a.id);
        for (std::size_t i = 0; i < dA.data.size(); ++i)
            if (A2.data[i] <= 0.0) dA.data[i] = 0.0;
        t.acc(a.id, dA);
    })};
}

Val Tape::leaky_relu(Val a, double slope) {
    Tensor out = v(a.id);
    for (double& x : out.data) x = x > 0.0 ? x : slope * x;
    return {push(std::move(out), {a.id}, "leaky_relu", [a, slope](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        Tensor dA = t.g(self);
        const Tensor& A2 = t.v(a.id);
        for (std::size_t i = 0; i < dA.data.size(); ++i)
            if (A2.data[i] <= 0.0) dA.data[i] *= slope;
        t.acc(a.id, dA);
    })};
}

Val Tape::sigmoid(Val a) {
    Tensor out = v(a.id);
    for (double& x : out.data) x = stable_sigmoid(x);
    Tensor saved = out;
    return {push(std::move(out), {a.id}, "sigmoid", [a, saved](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        Tensor dA = t.g(self);
        for (std::size_t i = 0; i < dA.data.size(); ++i)
            dA.data[i] *= saved.data[i] * (1.0 - saved.data[i]);
        t.acc(a.id, dA);
    })};
}

Val Tape::tanh_(Val a) {
    Tensor out = v(a.id);
    for (double& x : out.data) x = std::tanh(x);
    Tensor saved = out;
    return {push(std::move(out), {a.id}, "tanh", [a, saved](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        Tensor dA = t.g(self);
        for (std::size_t i = 0; i < dA.data.size(); ++i)
            dA.data[i] *= 1.0 - saved.data[i] * saved.data[i];
        t.acc(a.id, dA);
    })};
}

Val Tape::exp_(Val a) {
    Tensor out = v(a.id);
    for (double& x : out.data) x = std::exp(x);
    Tensor saved = out;
    return {push(std::move(out), {a.id}, "exp", [a, saved](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        Tensor dA = t.g(self);
        for (std::size_t i = 0; i < dA.data.size(); ++i) dA.data[i] *= saved.data[i];
        t.acc(a.id, dA);
    })};
}

Val Tape::log_(Val a) {
    Tensor out = v(a.id);
    for (double& x : out.data) x = std::log(std::max(x, kLogFloor));
    return {push(std::move(out), {a.id}, "log", [a](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        Tensor dA = t.g(self);
        const Tensor& A2 = t.v(a.id);
        for (std::size_t i = 0; i < dA.data.size(); ++i)
            dA.data[i] = A2.data[i] > kLogFloor ? dA.data[i] / A2.data[i] : 0.0;
        t.acc(a.id, dA);
    })};
}

Val Tape::softplus(Val a) {
    Tensor out = v(a.id);
    for (double& x : out.data) x = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    return {push(std::move(out), {a.id}, "softplus", [a](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        Tensor dA = t.g(self);
        const Tensor& A2 = t.v(a.id);
        for (std::size_t i = 0; i < dA.data.size(); ++i) dA.data[i] *= stable_sigmoid(A2.data[i]);
        t.acc(a.id, dA);
    })};
}

Val Tape::softmax_rows(Val a) {
    const Tensor& A = v(a.id);
    Tensor out = Tensor::zeros({A.rows(), A.cols()});
    kern::rows_softmax(A.data.data(), out.data.data(), A.rows(), A.cols());
    Tensor saved = out;
    return {push(std::move(out), {a.id}, "softmax", [a, saved](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        const Tensor& dOut = t.g(self);
        const std::size_t m = saved.rows(), n = saved.cols();
        Tensor dA = Tensor::zeros({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < n; ++j) inner += dOut.at(i, j) * saved.at(i, j);
            for (std::size_t j = 0; j < n; ++j)
                dA.at(i, j) = saved.at(i, j) * (dOut.at(i, j) - inner);
        }
        t.acc(a.id, dA);
    })};
}

Val Tape::layer_norm(Val a, Val gain, Val bias, double eps) {
    const Tensor& A = v(a.id);
    const Tensor& G = v(gain.id);
    const Tensor& B = v(bias.id);
    const std::size_t m = A.rows(), n = A.cols();
    if (G.rows() != 1 || G.cols() != n || B.rows() != 1 || B.cols() != n)
        throw NumericError("layer_norm: gain/bias must be 1 x " + std::to_string(n));
    Tensor xhat = Tensor::zeros({m, n});
    kern::rows_standardize(A.data.data(), xhat.data.data(), m, n, eps);
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = xhat.at(i, j) * G.data[j] + B.data[j];
    Tensor saved_xhat = xhat;
    return {push(std::move(out), {a.id, gain.id, bias.id}, "layer_norm",
                 [a, gain, bias, saved_xhat, eps, m, n](Tape& t, int self) {
        const Tensor& dOut = t.g(self);
        const Tensor& G2 = t.v(gain.id);
        if (t.needs(gain.id)) {
            Tensor dG = Tensor::zeros({1, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    dG.data[j] += dOut.at(i, j) * saved_xhat.at(i, j);
            t.acc(gain.id, dG);
        }
        if (t.needs(bias.id)) {
            Tensor dB = Tensor::zeros({1, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dB.data[j] += dOut.at(i, j);
            t.acc(bias.id, dB);
        }
        if (t.needs(a.id)) {
            const Tensor& A2 = t.v(a.id);
            Tensor dA = Tensor::zeros({m, n});
            for (std::size_t i = 0; i < m; ++i) {
                double mean = 0.0, var = 0.0;
                for (std::size_t j = 0; j < n; ++j) mean += A2.at(i, j);
                mean /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = A2.at(i, j) - mean;
                    var += d * d;
                }
                var /= static_cast<double>(n);
                const double inv = 1.0 / std::sqrt(var + eps);
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double dxh = dOut.at(i, j) * G2.data[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * saved_xhat.at(i, j);
                }
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double dxh = dOut.at(i, j) * G2.data[j];
                    dA.at(i, j) = inv * (dxh - inv_n * sum_dxhat -
                                         saved_xhat.at(i, j) * inv_n * sum_dxhat_xhat);
                }
            }
            t.acc(a.id, dA);
        }
    })};
}

Val Tape::maxpool1d3(Val a) {
    const Tensor& A = v(a.id);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::zeros({m, n});
    std::vector<std::size_t> arg(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t lo = j == 0 ? 0 : j - 1;
            const std::size_t hi = std::min(n - 1, j + 1);
            std::size_t best = lo;
            for (std::size_t jj = lo + 1; jj <= hi; ++jj)
                if (A.at(i, jj) > A.at(i, best)) best = jj;
            out.at(i, j) = A.at(i, best);
            arg[i * n + j] = best;
        }
    }
    return {push(std::move(out), {a.id}, "maxpool1d3",
                 [a, arg = std::move(arg), m, n](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        const Tensor& dOut = t.g(self);
        Tensor dA = Tensor::zeros({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                dA.at(i, arg[i * n + j]) += dOut.at(i, j);
        t.acc(a.id, dA);
    })};
}

Val Tape::concat_cols(const std::vector<Val>& xs) {
    if (xs.empty()) throw NumericError("concat_cols: no inputs");
    const std::size_t m = v(xs[0].id).rows();
    std::size_t total = 0;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (Val x : xs) {
        const Tensor& X = v(x.id);
        if (X.rows() != m) throw NumericError("concat_cols: row count mismatch");
        widths.push_back(X.cols());
        total += X.cols();
        ids.push_back(x.id);
    }
    Tensor out = Tensor::zeros({m, total});
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
        const Tensor& X = v(ids[p]);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[p]; ++j) out.at(i, off + j) = X.at(i, j);
        off += widths[p];
    }
    std::vector<int> captured = ids;
    return {push(std::move(out), std::move(ids), "concat_cols",
                 [captured, widths, m](Tape& t, int self) {
        const Tensor& dOut = t.g(self);
        std::size_t off = 0;
        for (std::size_t p = 0; p < captured.size(); ++p) {
            if (t.needs(captured[p])) {
                Tensor dX = Tensor::zeros({m, widths[p]});
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < widths[p]; ++j) dX.at(i, j) = dOut.at(i, off + j);
                t.acc(captured[p], dX);
            }
            off += widths[p];
        }
    })};
}

Val Tape::concat_rows(const std::vector<Val>& xs) {
    if (xs.empty()) throw NumericError("concat_rows: no inputs");
    const std::size_t n = v(xs[0].id).cols();
    std::size_t total = 0;
    std::vector<int> ids;
    std::vector<std::size_t> heights;
    for (Val x : xs) {
        const Tensor& X = v(x.id);
        if (X.cols() != n) throw NumericError("concat_rows: column count mismatch");
        heights.push_back(X.rows());
        total += X.rows();
        ids.push_back(x.id);
    }
    Tensor out = Tensor::zeros({total, n});
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
        const Tensor& X = v(ids[p]);
        for (std::size_t i = 0; i < heights[p]; ++i)
            for (std::size_t j = 0; j < n; ++j) out.at(off + i, j) = X.at(i, j);
        off += heights[p];
    }
    std::vector<int> captured = ids;
    return {push(std::move(out), std::move(ids), "concat_rows",
                 [captured, heights, n](Tape& t, int self) {
        const Tensor& dOut = t.g(self);
        std::size_t off = 0;
        for (std::size_t p = 0; p < captured.size(); ++p) {
            if (t.needs(captured[p])) {
                Tensor dX = Tensor::zeros({heights[p], n});
                for (std::size_t i = 0; i < heights[p]; ++i)
                    for (std::size_t j = 0; j < n; ++j) dX.at(i, j) = dOut.at(off + i, j);
                t.acc(captured[p], dX);
            }
            off += heights[p];
        }
    })};
}

Val Tape::gather_rows(Val a, std::vector<std::size_t> idx) {
    const Tensor& A = v(a.id);
    const std::size_t n = A.cols();
    for (std::size_t i : idx)
        if (i >= A.rows()) throw NumericError("gather_rows: index out of range");
    Tensor out = Tensor::zeros({idx.size(), n});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = A.at(idx[i], j);
    const std::size_t src_rows = A.rows();
    return {push(std::move(out), {a.id}, "gather_rows",
                 [a, idx = std::move(idx), src_rows, n](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        const Tensor& dOut = t.g(self);
        Tensor dA = Tensor::zeros({src_rows, n});
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) dA.at(idx[i], j) += dOut.at(i, j);
        t.acc(a.id, dA);
    })};
}

Val Tape::neighbor_sum(Val m, const std::vector<std::vector<std::size_t>>& nbrs) {
    const Tensor& M = v(m.id);
    const std::size_t src_rows = M.rows(), d = M.cols();
    const std::size_t out_rows = nbrs.size();
    for (const auto& group : nbrs)
        for (std::size_t idx : group)
            if (idx >= src_rows) throw NumericError("neighbor_sum: index out of range");
    // Byte-lexicographic order over row contents is invariant under node
    // relabeling, which makes the float summation order (and hence the bits
    // of the result) canonical.
    auto byte_less = [&M, d](std::size_t x, std::size_t y) {
        return std::memcmp(&M.data[x * d], &M.data[y * d], d * sizeof(double)) < 0;
    };
    Tensor out = Tensor::zeros({out_rows, d});
    for (std::size_t u = 0; u < out_rows; ++u) {
        std::vector<std::size_t> order = nbrs[u];
        std::sort(order.begin(), order.end(), byte_less);
        for (std::size_t vv : order)
            for (std::size_t j = 0; j < d; ++j) out.at(u, j) += M.at(vv, j);
    }
    std::vector<std::vector<std::size_t>> captured = nbrs;
    return {push(std::move(out), {m.id}, "neighbor_sum",
                 [m, captured = std::move(captured), src_rows, out_rows, d](Tape& t, int self) {
        if (!t.needs(m.id)) return;
        const Tensor& dOut = t.g(self);
        Tensor dM = Tensor::zeros({src_rows, d});
        for (std::size_t u = 0; u < out_rows; ++u)
            for (std::size_t vv : captured[u])
                for (std::size_t j = 0; j < d; ++j) dM.at(vv, j) += dOut.at(u, j);
        t.acc(m.id, dM);
    })};
}

Val Tape::sum_all(Val a) {
    const Tensor& A = v(a.id);
    double s = 0.0;
    for (double x : A.data) s += x;
    return {push(Tensor::scalar(s), {a.id}, "sum_all", [a](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        const double d = t.g(self).value();
        Tensor dA = t.v(a.id);
        for (double& x : dA.data) x = d;
        t.acc(a.id, dA);
    })};
}

Val Tape::mean_all(Val a) {
    const Tensor& A = v(a.id);
    double s = 0.0;
    for (double x : A.data) s += x;
    const double nel = static_cast<double>(A.numel());
    return {push(Tensor::scalar(s / nel), {a.id}, "mean_all", [a, nel](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        const double d = t.g(self).value() / nel;
        Tensor dA = t.v(a.id);
        for (double& x : dA.data) x = d;
        t.acc(a.id, dA);
    })};
}

Val Tape::sum_rows(Val a) {
    const Tensor& A = v(a.id);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::zeros({1, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j] += A.at(i, j);
    return {push(std::move(out), {a.id}, "sum_rows", [a, m, n](Tape& t, int self) {
        if (!t.needs(a.id)) return;
        const Tensor& dOut = t.g(self);
        Tensor dA = Tensor::zeros({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dA.at(i, j) = dOut.data[j];
        t.acc(a.id, dA);
    })};
}

Val Tape::dot(Val a, Val b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.numel() != B.numel())
        throw NumericError("dot: size mismatch " + A.shape_str() + " vs " + B.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < A.numel(); ++i) s += A.data[i] * B.data[i];
    return {push(Tensor::scalar(s), {a.id, b.id}, "dot", [a, b](Tape& t, int self) {
        const double d = t.g(self).value();
        if (t.needs(a.id)) {
            Tensor dA = t.v(b.id);
            for (double& x : dA.data) x *= d;
            dA.shape = t.v(a.id).shape;
            t.acc(a.id, dA);
        }
        if (t.needs(b.id)) {
            Tensor dB = t.v(a.id);
            for (double& x : dB.data) x *= d;
            dB.shape = t.v(b.id).shape;
            t.acc(b.id, dB);
        }
    })};
}

Val Tape::cross_entropy_mean(Val logits, const std::vector<std::size_t>& labels) {
    const Tensor& L = v(logits.id);
    const std::size_t m = L.rows(), n = L.cols();
    if (labels.size() != m) throw NumericError("cross_entropy: label count mismatch");
    for (std::size_t y : labels)
        if (y >= n) throw NumericError("cross_entropy: label index out of range");
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = L.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, L.at(i, j));
        double se = 0.0;
        for (std::size_t j = 0; j < n; ++j) se += std::exp(L.at(i, j) - mx);
        loss += mx + std::log(se) - L.at(i, labels[i]);
    }
    loss /= static_cast<double>(m);
    return {push(Tensor::scalar(loss), {logits.id}, "cross_entropy",
                 [logits, labels, m, n](Tape& t, int self) {
        if (!t.needs(logits.id)) return;
        const double d = t.g(self).value() / static_cast<double>(m);
        const Tensor& L2 = t.v(logits.id);
        Tensor dL = Tensor::zeros({m, n});
        kern::rows_softmax(L2.data.data(), dL.data.data(), m, n);
        for (std::size_t i = 0; i < m; ++i) {
            dL.at(i, labels[i]) -= 1.0;
            for (std::size_t j = 0; j < n; ++j) dL.at(i, j) *= d;
        }
        t.acc(logits.id, dL);
    })};
}

Val Tape::kl_div_mean(Val target_probs, Val pred_probs) {
    const Tensor& T = v(target_probs.id);
    const Tensor& P = v(pred_probs.id);
    if (!T.same_shape(P))
        throw NumericError("kl_div: shape mismatch " + T.shape_str() + " vs " + P.shape_str());
    const std::size_t m = T.rows(), n = T.cols();
    for (const Tensor* dist : {&T, &P}) {
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double x = dist->at(i, j);
                if (x < 0.0) throw NumericError("kl_div: negative probability");
                s += x;
            }
            if (std::abs(s - 1.0) > 1e-9)
                throw NumericError("kl_div: row does not sum to 1");
        }
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double tv = T.at(i, j);
            if (tv <= 0.0) continue;
            loss += tv * (std::log(std::max(tv, kLogFloor)) -
                          std::log(std::max(P.at(i, j), kLogFloor)));
        }
    loss /= static_cast<double>(m);
    return {push(Tensor::scalar(loss), {target_probs.id, pred_probs.id}, "kl_div",
                 [target_probs, pred_probs, m, n](Tape& t, int self) {
        const double d = t.g(self).value() / static_cast<double>(m);
        const Tensor& T2 = t.v(target_probs.id);
        const Tensor& P2 = t.v(pred_probs.id);
        if (t.needs(pred_probs.id)) {
            Tensor dP = Tensor::zeros({m, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double tv = T2.at(i, j);
                    const double pv = P2.at(i, j);
                    dP.at(i, j) = (tv > 0.0 && pv > kLogFloor) ? -d * tv / pv : 0.0;
                }
            t.acc(pred_probs.id, dP);
        }
        if (t.needs(target_probs.id)) {
            Tensor dT = Tensor::zeros({m, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double tv = T2.at(i, j);
                    if (tv <= 0.0) continue;
                    dT.at(i, j) = d * (std::log(std::max(tv, kLogFloor)) -
                                       std::log(std::max(P2.at(i, j), kLogFloor)) +
                                       (tv > kLogFloor ? 1.0 : 0.0));
                }
            t.acc(target_probs.id, dT);
        }
    })};
}

Tensor Tape::grad_of(Val val) const {
    if (val.id < 0 || static_cast<std::size_t>(val.id) >= nodes_.size())
        throw NumericError("grad_of: bad handle");
    if (static_cast<std::size_t>(val.id) < grads_.size() && grads_[val.id].numel() > 0)
        return grads_[val.id];
    return Tensor::zeros(nodes_[val.id].out.shape);
}

void Tape::backward(Val loss) {
    if (loss.id < 0 || static_cast<std::size_t>(loss.id) >= nodes_.size())
        throw NumericError("backward: bad handle");
    if (!nodes_[loss.id].out.is_scalar())
        throw NumericError("backward: loss must be scalar, got " + nodes_[loss.id].out.shape_str());
    grads_.assign(nodes_.size(), Tensor{});
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].needs_grad) grads_[i] = Tensor::zeros(nodes_[i].out.shape);
    if (nodes_[loss.id].needs_grad) grads_[loss.id].data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& node = nodes_[i];
        if (!node.needs_grad) continue;
        if (!grads_[i].all_finite())
            throw NumericError(std::string("backward of ") + node.op + ": non-finite gradient");
        if (node.leaf != nullptr) {
            for (std::size_t j = 0; j < grads_[i].data.size(); ++j)
                node.leaf->grad.data[j] += grads_[i].data[j];
        }
        if (node.back) node.back(*this, i);
    }
    ++t_grad_evals;
}

void forward_backward(Tape& tape, Val loss, ParamSet& params) {
    params.zero_grad();
    tape.backward(loss);
    ++params.grad_passes;
}

}  // namespace subsel
