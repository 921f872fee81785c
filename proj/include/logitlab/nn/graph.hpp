// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode autodiff. A Graph records primitive ops as they
// are applied; backward() replays the tape in reverse and accumulates
// gradients into every node that needs one. Parameter nodes write their
// gradients straight into the bound Tensor's grad buffer, so a tensor used
// twice (for example a tied embedding) receives the sum of both paths.
//
// Tensors of rank >= 2 are treated as row matrices: the trailing dimension is
// the column count, everything before it is flattened into rows.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "logitlab/nn/tensor.hpp"

namespace logitlab::nn {

struct Var {
    std::size_t id = 0;
};

template <typename T>
class Graph {
public:
    Graph() = default;
    /// With `record` false nothing is differentiable and no backward state is
    /// kept; used for evaluation.
    explicit Graph(bool record) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf holding a copy of `value`. Differentiable iff value.requires_grad().
    Var constant(Tensor<T> value);
    /// Leaf bound to an external parameter. The tensor must outlive the graph.
    Var parameter(Tensor<T>& param);

    const Tensor<T>& value(Var v) const;
    /// Gradient of a non-parameter node after backward(); empty if none flowed.
    std::span<const T> grad(Var v) const;
    bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::size_t op_count() const noexcept { return ops_.size(); }

    /// Runs the reverse sweep from a scalar root; returns how many ops were visited.
    std::size_t backward(Var root);

    // Linear algebra. `a` may have any rank >= 1; `b` must be rank 2.
    Var matmul(Var a, Var b);             // a[m x k] * b[k x n]
    Var matmul_transposed(Var a, Var b);  // a[m x k] * b[n x k]^T

    // Elementwise, equal shapes.
    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, T factor);
    Var swiglu(Var gate, Var value);    // value * silu(gate)
    Var tanh_cap(Var x, T cap);         // cap * tanh(x / cap)

    // Reductions to a scalar.
    Var sum(Var a);
    Var mean(Var a);
    Var sum_squares(Var a);

    /// Row lookup into a [V x H] table.
    Var gather_rows(Var table, std::span<const int> ids);
    /// Column means of a [V x H] table, shape [H].
    Var column_mean(Var table);

    /// Normalizes every consecutive chunk of `width` values to zero mean and
    /// unit variance (eps 1e-5 under the root) and scales by gain[width].
    Var layer_norm(Var x, Var gain, std::size_t width);

    /// Rotary position encoding on rows laid out as [batch*seq, heads*head_dim];
    /// the position of a row is its index modulo seq_len.
    Var rope(Var x, std::size_t head_dim, std::size_t seq_len);

    /// Causal multi-head scaled dot-product attention on [batch*seq, heads*head_dim]
    /// projections. Scores are scaled by 1/sqrt(head_dim).
    Var causal_attention(Var q, Var k, Var v, std::size_t n_heads, std::size_t seq_len);

    /// Mean over rows of -log softmax(logits)[target].
    Var cross_entropy(Var logits, std::span<const int> targets);
    /// Mean over rows of log^2(Z), Z the row's softmax normalizer.
    Var log_partition_squared(Var logits);

    static constexpr T kLayerNormEps = T(1e-5);

private:
    struct Node {
        Tensor<T> value;
        Buffer<T> grad;
        Tensor<T>* param = nullptr;
        bool needs_grad = false;
    };

    const Tensor<T>& val(std::size_t id) const;
    std::span<T> acc(std::size_t id);  // gradient accumulator, zero-initialised on demand
    bool has_grad(std::size_t id) const;
    // The backward rule receives the output node id.
    using BackwardRule = std::function<void(std::size_t)>;
    Var emit(Tensor<T> value, bool needs_grad, BackwardRule backward);
    bool any_needs_grad(std::initializer_list<Var> vars) const;

    std::vector<Node> nodes_;
    struct Op {
        std::size_t output;
        BackwardRule backward;
    };
    std::vector<Op> ops_;
    bool record_ = true;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace logitlab::nn
