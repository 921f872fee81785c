// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/nn/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "logitlab/errors.hpp"

namespace logitlab::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

void require(bool ok, const std::string& what) {
    if (!ok) {
        throw DimensionError(what);
    }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    require(a == b, std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Writes softmax(row) into `probs` and returns log-sum-exp(row), both
// evaluated in double with the max shifted out.
template <typename T>
double softmax_row(const T* row, std::size_t n, T* probs, Eigen::ArrayXd& scratch) {
    const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> l(row, static_cast<Eigen::Index>(n));
    const T mx = l.maxCoeff();
    scratch = (l - mx).template cast<double>().exp();
    const double z = scratch.sum();
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(probs, static_cast<Eigen::Index>(n)) =
        (scratch / z).template cast<T>();
    return static_cast<double>(mx) + std::log(z);
}

}  // namespace

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
    Node node;
    node.needs_grad = record_ && value.requires_grad();
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::parameter(Tensor<T>& param) {
    Node node;
    node.param = &param;
    node.needs_grad = record_ && param.requires_grad();
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::val(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr ? *n.param : n.value;
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
    if (v.id >= nodes_.size()) {
        throw ContractError("variable does not belong to this graph");
    }
    return val(v.id);
}

template <typename T>
std::span<const T> Graph<T>::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.param != nullptr) {
        return n.param->grad();
    }
    return n.grad;
}

template <typename T>
std::span<T> Graph<T>::acc(std::size_t id) {
    Node& n = nodes_[id];
    if (n.param != nullptr) {
        return n.param->grad();
    }
    if (n.grad.size() != n.value.size()) {
        n.grad.assign(n.value.size(), T{0});
    }
    return n.grad;
}

template <typename T>
bool Graph<T>::has_grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr ? n.param->has_grad() : !n.grad.empty();
}

template <typename T>
bool Graph<T>::any_needs_grad(std::initializer_list<Var> vars) const {
    return std::any_of(vars.begin(), vars.end(), [this](Var v) { return nodes_[v.id].needs_grad; });
}

template <typename T>
Var Graph<T>::emit(Tensor<T> value, bool needs_grad, BackwardRule backward) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    nodes_.push_back(std::move(node));
    const std::size_t id = nodes_.size() - 1;
    if (needs_grad) {
        ops_.push_back(Op{id, std::move(backward)});
    }
    return Var{id};
}

template <typename T>
std::size_t Graph<T>::backward(Var root) {
    if (root.id >= nodes_.size()) {
        throw ContractError("backward: root does not belong to this graph");
    }
    if (val(root.id).size() != 1) {
        throw ContractError("backward: root must be a scalar, got shape " + shape_string(val(root.id).shape()));
    }
    if (!nodes_[root.id].needs_grad) {
        return 0;
    }
    for (Node& n : nodes_) {
        if (n.param == nullptr) {
            n.grad.clear();
        }
    }
    acc(root.id)[0] += T(1);
    std::size_t visited = 0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        if (it->output > root.id || !has_grad(it->output)) {
            continue;
        }
        it->backward(it->output);
        ++visited;
    }
    return visited;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
    const Tensor<T>& A = val(a.id);
    const Tensor<T>& B = val(b.id);
    require(B.rank() == 2, "matmul: right operand must be rank 2");
    require(A.rank() >= 1 && A.cols() == B.shape()[0],
            "matmul: inner dims differ " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Shape out_shape = A.shape();
    out_shape.back() = n;
    Tensor<T> out(out_shape);
    MutMap<T>(out.data(), m, n).noalias() = ConstMap<T>(A.data(), m, k) * ConstMap<T>(B.data(), k, n);
    return emit(std::move(out), any_needs_grad({a, b}), [this, a, b, m, k, n](std::size_t o) {
        ConstMap<T> dC(nodes_[o].grad.data(), m, n);
        if (nodes_[a.id].needs_grad) {
            MutMap<T>(acc(a.id).data(), m, k).noalias() += dC * ConstMap<T>(val(b.id).data(), k, n).transpose();
        }
        if (nodes_[b.id].needs_grad) {
            MutMap<T>(acc(b.id).data(), k, n).noalias() += ConstMap<T>(val(a.id).data(), m, k).transpose() * dC;
        }
    });
}

template <typename T>
Var Graph<T>::matmul_transposed(Var a, Var b) {
    const Tensor<T>& A = val(a.id);
    const Tensor<T>& B = val(b.id);
    require(B.rank() == 2, "matmul_transposed: right operand must be rank 2");
    require(A.rank() >= 1 && A.cols() == B.cols(),
            "matmul_transposed: inner dims differ " + shape_string(A.shape()) + " x " + shape_string(B.shape()) +
                "^T");
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    Shape out_shape = A.shape();
    out_shape.back() = n;
    Tensor<T> out(out_shape);
    MutMap<T>(out.data(), m, n).noalias() = ConstMap<T>(A.data(), m, k) * ConstMap<T>(B.data(), n, k).transpose();
    return emit(std::move(out), any_needs_grad({a, b}), [this, a, b, m, k, n](std::size_t o) {
        ConstMap<T> dC(nodes_[o].grad.data(), m, n);
        if (nodes_[a.id].needs_grad) {
            MutMap<T>(acc(a.id).data(), m, k).noalias() += dC * ConstMap<T>(val(b.id).data(), n, k);
        }
        if (nodes_[b.id].needs_grad) {
            MutMap<T>(acc(b.id).data(), n, k).noalias() += dC.transpose() * ConstMap<T>(val(a.id).data(), m, k);
        }
    });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
    const Tensor<T>& A = val(a.id);
    const Tensor<T>& B = val(b.id);
    require_same_shape(A.shape(), B.shape(), "add");
    Tensor<T> out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = A[i] + B[i];
    }
    return emit(std::move(out), any_needs_grad({a, b}), [this, a, b](std::size_t o) {
        const auto& g = nodes_[o].grad;
        for (Var in : {a, b}) {
            if (nodes_[in.id].needs_grad) {
                auto d = acc(in.id);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    d[i] += g[i];
                }
            }
        }
    });
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
    const Tensor<T>& A = val(a.id);
    const Tensor<T>& B = val(b.id);
    require_same_shape(A.shape(), B.shape(), "mul");
    Tensor<T> out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = A[i] * B[i];
    }
    return emit(std::move(out), any_needs_grad({a, b}), [this, a, b](std::size_t o) {
        const auto& g = nodes_[o].grad;
        if (nodes_[a.id].needs_grad) {
            auto d = acc(a.id);
            const Tensor<T>& B = val(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                d[i] += g[i] * B[i];
            }
        }
        if (nodes_[b.id].needs_grad) {
            auto d = acc(b.id);
            const Tensor<T>& A = val(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                d[i] += g[i] * A[i];
            }
        }
    });
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
    const Tensor<T>& A = val(a.id);
    Tensor<T> out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = A[i] * factor;
    }
    return emit(std::move(out), any_needs_grad({a}), [this, a, factor](std::size_t o) {
        const auto& g = nodes_[o].grad;
        auto d = acc(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            d[i] += g[i] * factor;
        }
    });
}

template <typename T>
Var Graph<T>::swiglu(Var gate, Var value) {
    const Tensor<T>& A = val(gate.id);
    const Tensor<T>& B = val(value.id);
    require_same_shape(A.shape(), B.shape(), "swiglu");
    Tensor<T> out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = B[i] * A[i] * sigmoid(A[i]);
    }
    return emit(std::move(out), any_needs_grad({gate, value}), [this, gate, value](std::size_t o) {
        const auto& g = nodes_[o].grad;
        const Tensor<T>& A = val(gate.id);
        const Tensor<T>& B = val(value.id);
        const bool dgate = nodes_[gate.id].needs_grad;
        const bool dvalue = nodes_[value.id].needs_grad;
        std::span<T> da = dgate ? acc(gate.id) : std::span<T>{};
        std::span<T> db = dvalue ? acc(value.id) : std::span<T>{};
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T s = sigmoid(A[i]);
            if (dgate) {
                da[i] += g[i] * B[i] * (s + A[i] * s * (T(1) - s));
            }
            if (dvalue) {
                db[i] += g[i] * A[i] * s;
            }
        }
    });
}

template <typename T>
Var Graph<T>::tanh_cap(Var x, T cap) {
    if (!(cap > T(0))) {
        throw ContractError("tanh_cap: cap must be positive");
    }
    const Tensor<T>& X = val(x.id);
    Tensor<T> out(X.shape());
    auto saved = std::make_shared<Buffer<T>>(X.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T t = std::tanh(X[i] / cap);
        (*saved)[i] = t;
        out[i] = cap * t;
    }
    return emit(std::move(out), any_needs_grad({x}), [this, x, saved](std::size_t o) {
        const auto& g = nodes_[o].grad;
        auto d = acc(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T t = (*saved)[i];
            d[i] += g[i] * (T(1) - t * t);
        }
    });
}

template <typename T>
Var Graph<T>::sum(Var a) {
    const Tensor<T>& A = val(a.id);
    T total{0};
    for (T v : A.values()) {
        total += v;
    }
    return emit(Tensor<T>(Shape{}, std::vector<T>{total}), any_needs_grad({a}), [this, a](std::size_t o) {
        const T g = nodes_[o].grad[0];
        for (T& d : acc(a.id)) {
            d += g;
        }
    });
}

template <typename T>
Var Graph<T>::mean(Var a) {
    const std::size_t n = val(a.id).size();
    if (n == 0) {
        throw ContractError("mean of an empty tensor");
    }
    return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var Graph<T>::sum_squares(Var a) {
    const Tensor<T>& A = val(a.id);
    T total{0};
    for (T v : A.values()) {
        total += v * v;
    }
    return emit(Tensor<T>(Shape{}, std::vector<T>{total}), any_needs_grad({a}), [this, a](std::size_t o) {
        const T g = nodes_[o].grad[0];
        const Tensor<T>& A = val(a.id);
        auto d = acc(a.id);
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] += T(2) * A[i] * g;
        }
    });
}

template <typename T>
Var Graph<T>::gather_rows(Var table, std::span<const int> ids) {
    const Tensor<T>& E = val(table.id);
    require(E.rank() == 2, "gather_rows: table must be rank 2");
    const std::size_t vocab = E.rows(), width = E.cols();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
        }
    }
    Tensor<T> out(Shape{ids.size(), width});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        std::copy_n(E.data() + static_cast<std::size_t>(ids[r]) * width, width, out.data() + r * width);
    }
    auto rows = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    return emit(std::move(out), any_needs_grad({table}), [this, table, rows, width](std::size_t o) {
        const auto& g = nodes_[o].grad;
        auto d = acc(table.id);
        for (std::size_t r = 0; r < rows->size(); ++r) {
            T* dst = d.data() + static_cast<std::size_t>((*rows)[r]) * width;
            const T* src = g.data() + r * width;
            for (std::size_t c = 0; c < width; ++c) {
                dst[c] += src[c];
            }
        }
    });
}

template <typename T>
Var Graph<T>::column_mean(Var table) {
    const Tensor<T>& E = val(table.id);
    require(E.rank() == 2 && E.rows() >= 1, "column_mean: need a non-empty rank-2 table");
    const std::size_t vocab = E.rows(), width = E.cols();
    std::vector<double> sums(width, 0.0);
    for (std::size_t r = 0; r < vocab; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            sums[c] += static_cast<double>(E.at(r, c));
        }
    }
    Tensor<T> out(Shape{width});
    for (std::size_t c = 0; c < width; ++c) {
        out[c] = static_cast<T>(sums[c] / static_cast<double>(vocab));
    }
    return emit(std::move(out), any_needs_grad({table}), [this, table, vocab, width](std::size_t o) {
        const auto& g = nodes_[o].grad;
        auto d = acc(table.id);
        const T inv = T(1) / static_cast<T>(vocab);
        for (std::size_t r = 0; r < vocab; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                d[r * width + c] += g[c] * inv;
            }
        }
    });
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gain, std::size_t width) {
    const Tensor<T>& X = val(x.id);
    const Tensor<T>& G = val(gain.id);
    require(width >= 1 && X.size() % width == 0, "layer_norm: size not divisible by width");
    require(G.size() == width, "layer_norm: gain length " + std::to_string(G.size()) + " != width " +
                                   std::to_string(width));
    const std::size_t chunks = X.size() / width;
    Tensor<T> out(X.shape());
    auto xhat = std::make_shared<Buffer<T>>(X.size());
    auto inv_std = std::make_shared<Buffer<T>>(chunks);
    for (std::size_t r = 0; r < chunks; ++r) {
        const T* src = X.data() + r * width;
        double mu = 0.0;
        for (std::size_t c = 0; c < width; ++c) {
            mu += static_cast<double>(src[c]);
        }
        mu /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t c = 0; c < width; ++c) {
            const double dev = static_cast<double>(src[c]) - mu;
            var += dev * dev;
        }
        var /= static_cast<double>(width);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(kLayerNormEps));
        (*inv_std)[r] = static_cast<T>(inv);
        for (std::size_t c = 0; c < width; ++c) {
            const T xh = static_cast<T>((static_cast<double>(src[c]) - mu) * inv);
            (*xhat)[r * width + c] = xh;
            out[r * width + c] = xh * G[c];
        }
    }
    return emit(std::move(out), any_needs_grad({x, gain}),
                [this, x, gain, width, chunks, xhat, inv_std](std::size_t o) {
                    const auto& g = nodes_[o].grad;
                    const Tensor<T>& G = val(gain.id);
                    if (nodes_[gain.id].needs_grad) {
                        auto dg = acc(gain.id);
                        for (std::size_t r = 0; r < chunks; ++r) {
                            for (std::size_t c = 0; c < width; ++c) {
                                dg[c] += g[r * width + c] * (*xhat)[r * width + c];
                            }
                        }
                    }
                    if (!nodes_[x.id].needs_grad) {
                        return;
                    }
                    auto dx = acc(x.id);
                    std::vector<T> dxh(width);
                    for (std::size_t r = 0; r < chunks; ++r) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t c = 0; c < width; ++c) {
                            dxh[c] = g[r * width + c] * G[c];
                            mean_d += static_cast<double>(dxh[c]);
                            mean_dx += static_cast<double>(dxh[c]) * static_cast<double>((*xhat)[r * width + c]);
                        }
                        mean_d /= static_cast<double>(width);
                        mean_dx /= static_cast<double>(width);
                        const T inv = (*inv_std)[r];
                        for (std::size_t c = 0; c < width; ++c) {
                            const double xh = static_cast<double>((*xhat)[r * width + c]);
                            dx[r * width + c] += inv * static_cast<T>(static_cast<double>(dxh[c]) - mean_d - xh * mean_dx);
                        }
                    }
                });
}

template <typename T>
Var Graph<T>::rope(Var x, std::size_t head_dim, std::size_t seq_len) {
    const Tensor<T>& X = val(x.id);
    require(head_dim >= 2 && head_dim % 2 == 0, "rope: head_dim must be even");
    require(X.cols() % head_dim == 0, "rope: row width not divisible by head_dim");
    require(seq_len >= 1 && X.rows() % seq_len == 0, "rope: rows not divisible by seq_len");
    const std::size_t half = head_dim / 2;
    auto table = std::make_shared<Buffer<T>>(seq_len * head_dim);  // cos, sin interleaved
    for (std::size_t p = 0; p < seq_len; ++p) {
        for (std::size_t j = 0; j < half; ++j) {
            const double theta = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(p) * theta;
            (*table)[p * head_dim + 2 * j] = static_cast<T>(std::cos(angle));
            (*table)[p * head_dim + 2 * j + 1] = static_cast<T>(std::sin(angle));
        }
    }
    const std::size_t rows = X.rows(), width = X.cols();
    Tensor<T> out(X.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* cs = table->data() + (r % seq_len) * head_dim;
        for (std::size_t base = 0; base < width; base += head_dim) {
            for (std::size_t j = 0; j < half; ++j) {
                const std::size_t i0 = r * width + base + 2 * j;
                const T c = cs[2 * j], s = cs[2 * j + 1];
                const T x0 = X[i0], x1 = X[i0 + 1];
                out[i0] = x0 * c - x1 * s;
                out[i0 + 1] = x0 * s + x1 * c;
            }
        }
    }
    return emit(std::move(out), any_needs_grad({x}),
                [this, x, table, rows, width, head_dim, seq_len, half](std::size_t o) {
                    const auto& g = nodes_[o].grad;
                    auto d = acc(x.id);
                    for (std::size_t r = 0; r < rows; ++r) {
                        const T* cs = table->data() + (r % seq_len) * head_dim;
                        for (std::size_t base = 0; base < width; base += head_dim) {
                            for (std::size_t j = 0; j < half; ++j) {
                                const std::size_t i0 = r * width + base + 2 * j;
                                const T c = cs[2 * j], s = cs[2 * j + 1];
                                d[i0] += g[i0] * c + g[i0 + 1] * s;
                                d[i0 + 1] += -g[i0] * s + g[i0 + 1] * c;
                            }
                        }
                    }
                });
}

template <typename T>
Var Graph<T>::causal_attention(Var q, Var k, Var v, std::size_t n_heads, std::size_t seq_len) {
    const Tensor<T>& Q = val(q.id);
    const Tensor<T>& K = val(k.id);
    const Tensor<T>& Vv = val(v.id);
    require_same_shape(Q.shape(), K.shape(), "causal_attention");
    require_same_shape(Q.shape(), Vv.shape(), "causal_attention");
    require(n_heads >= 1 && Q.cols() % n_heads == 0, "causal_attention: width not divisible by heads");
    require(seq_len >= 1 && Q.rows() % seq_len == 0, "causal_attention: rows not divisible by seq_len");
    const std::size_t width = Q.cols(), hd = width / n_heads, batch = Q.rows() / seq_len, len = seq_len;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    auto probs = std::make_shared<Buffer<T>>(batch * n_heads * len * len, T{0});
    Tensor<T> out(Q.shape());
    ConstMap<T> Qm(Q.data(), Q.rows(), width), Km(K.data(), K.rows(), width), Vm(Vv.data(), Vv.rows(), width);
    MutMap<T> Om(out.data(), out.rows(), width);
    RowMat<T> scores(len, len);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            const auto r0 = static_cast<Eigen::Index>(b * len), c0 = static_cast<Eigen::Index>(h * hd);
            const auto L = static_cast<Eigen::Index>(len), D = static_cast<Eigen::Index>(hd);
            scores.noalias() = Qm.block(r0, c0, L, D) * Km.block(r0, c0, L, D).transpose();
            MutMap<T> P(probs->data() + (b * n_heads + h) * len * len, L, L);
            for (Eigen::Index i = 0; i < L; ++i) {
                auto s_row = scores.row(i).head(i + 1).array();
                auto p_row = P.row(i).head(i + 1).array();
                const T mx = s_row.maxCoeff() * scale;
                p_row = (s_row * scale - mx).exp();
                const double z = p_row.template cast<double>().sum();
                p_row *= static_cast<T>(1.0 / z);
            }
            Om.block(r0, c0, L, D).noalias() = P * Vm.block(r0, c0, L, D);
        }
    }
    return emit(std::move(out), any_needs_grad({q, k, v}),
                [this, q, k, v, n_heads, len, batch, hd, width, scale, probs](std::size_t o) {
                    const Tensor<T>& Q = val(q.id);
                    const Tensor<T>& K = val(k.id);
                    const Tensor<T>& Vv = val(v.id);
                    const auto rows = static_cast<Eigen::Index>(Q.rows());
                    const auto W = static_cast<Eigen::Index>(width);
                    ConstMap<T> Qm(Q.data(), rows, W), Km(K.data(), rows, W), Vm(Vv.data(), rows, W);
                    ConstMap<T> dO(nodes_[o].grad.data(), rows, W);
                    const bool need_q = nodes_[q.id].needs_grad;
                    const bool need_k = nodes_[k.id].needs_grad;
                    const bool need_v = nodes_[v.id].needs_grad;
                    T* dq = need_q ? acc(q.id).data() : nullptr;
                    T* dk = need_k ? acc(k.id).data() : nullptr;
                    T* dv = need_v ? acc(v.id).data() : nullptr;
                    const auto L = static_cast<Eigen::Index>(len), D = static_cast<Eigen::Index>(hd);
                    RowMat<T> dP(L, L);
                    for (std::size_t b = 0; b < batch; ++b) {
                        for (std::size_t h = 0; h < n_heads; ++h) {
                            const auto r0 = static_cast<Eigen::Index>(b * len), c0 = static_cast<Eigen::Index>(h * hd);
                            ConstMap<T> P(probs->data() + (b * n_heads + h) * len * len, L, L);
                            if (need_v) {
                                MutMap<T>(dv, rows, W).block(r0, c0, L, D).noalias() +=
                                    P.transpose() * dO.block(r0, c0, L, D);
                            }
                            if (!need_q && !need_k) {
                                continue;
                            }
                            dP.noalias() = dO.block(r0, c0, L, D) * Vm.block(r0, c0, L, D).transpose();
                            for (Eigen::Index i = 0; i < L; ++i) {
                                double dot = 0.0;
                                for (Eigen::Index j = 0; j <= i; ++j) {
                                    dot += static_cast<double>(P(i, j)) * static_cast<double>(dP(i, j));
                                }
                                for (Eigen::Index j = 0; j <= i; ++j) {
                                    dP(i, j) = P(i, j) * (dP(i, j) - static_cast<T>(dot)) * scale;
                                }
                                for (Eigen::Index j = i + 1; j < L; ++j) {
                                    dP(i, j) = T(0);
                                }
                            }
                            if (need_q) {
                                MutMap<T>(dq, rows, W).block(r0, c0, L, D).noalias() += dP * Km.block(r0, c0, L, D);
                            }
                            if (need_k) {
                                MutMap<T>(dk, rows, W).block(r0, c0, L, D).noalias() +=
                                    dP.transpose() * Qm.block(r0, c0, L, D);
                            }
                        }
                    }
                });
}

template <typename T>
Var Graph<T>::cross_entropy(Var logits, std::span<const int> targets) {
    const Tensor<T>& Lg = val(logits.id);
    const std::size_t rows = Lg.rows(), vocab = Lg.cols();
    require(targets.size() == rows, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                        std::to_string(rows) + " rows");
    for (int t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw IndexError("target " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
        }
    }
    auto probs = std::make_shared<Buffer<T>>(Lg.size());
    double total = 0.0;
    Eigen::ArrayXd scratch;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* l = Lg.data() + r * vocab;
        const double lse = softmax_row(l, vocab, probs->data() + r * vocab, scratch);
        total += lse - static_cast<double>(l[targets[r]]);
    }
    const T loss = static_cast<T>(total / static_cast<double>(rows));
    auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    return emit(Tensor<T>(Shape{}, std::vector<T>{loss}), any_needs_grad({logits}),
                [this, logits, probs, tg, rows, vocab](std::size_t o) {
                    const T g = nodes_[o].grad[0] / static_cast<T>(rows);
                    auto d = acc(logits.id);
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < vocab; ++j) {
                            d[r * vocab + j] += g * (*probs)[r * vocab + j];
                        }
                        d[r * vocab + static_cast<std::size_t>((*tg)[r])] -= g;
                    }
                });
}

template <typename T>
Var Graph<T>::log_partition_squared(Var logits) {
    const Tensor<T>& Lg = val(logits.id);
    const std::size_t rows = Lg.rows(), vocab = Lg.cols();
    require(rows >= 1 && vocab >= 1, "log_partition_squared: empty logits");
    auto probs = std::make_shared<Buffer<T>>(Lg.size());
    auto lse = std::make_shared<Buffer<T>>(rows);
    double total = 0.0;
    Eigen::ArrayXd scratch;
    for (std::size_t r = 0; r < rows; ++r) {
        const double log_z = softmax_row(Lg.data() + r * vocab, vocab, probs->data() + r * vocab, scratch);
        (*lse)[r] = static_cast<T>(log_z);
        total += log_z * log_z;
    }
    const T value = static_cast<T>(total / static_cast<double>(rows));
    return emit(Tensor<T>(Shape{}, std::vector<T>{value}), any_needs_grad({logits}),
                [this, logits, probs, lse, rows, vocab](std::size_t o) {
                    const T g = nodes_[o].grad[0] / static_cast<T>(rows);
                    auto d = acc(logits.id);
                    for (std::size_t r = 0; r < rows; ++r) {
                        const T coef = T(2) * (*lse)[r] * g;
                        for (std::size_t j = 0; j < vocab; ++j) {
                            d[r * vocab + j] += coef * (*probs)[r * vocab + j];
                        }
                    }
                });
}

template class Graph<float>;
template class Graph<double>;

}  // namespace logitlab::nn
