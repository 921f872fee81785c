// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer backbone: pre-norm residual blocks with causal
// multi-head attention (qk-layernorm, then RoPE) and a SwiGLU feed-forward,
// gain-only LayerNorm, no biases, optional input/output weight tying.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "logitlab/nn/graph.hpp"
#include "logitlab/nn/tensor.hpp"

namespace logitlab::model {

struct ModelConfig {
    std::size_t vocab_size = 257;
    std::size_t hidden_dim = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t ffn_dim = 256;
    std::size_t seq_len = 256;
    bool weight_tying = false;
    std::uint64_t seed = 0;

    std::size_t head_dim() const noexcept { return n_heads == 0 ? 0 : hidden_dim / n_heads; }
    /// Throws ConfigError on zero dims, H not divisible by heads, or odd head_dim.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Rotates pairs (x[2j], x[2j+1]) by position * 10000^(-2j/d), d = x.size().
template <typename T>
std::vector<T> apply_rope(std::span<const T> x, double position);

/// value * gate * sigmoid(gate), elementwise.
template <typename T>
std::vector<T> swiglu(std::span<const T> gate, std::span<const T> value);

template <typename T>
struct Parameter {
    std::string name;
    nn::Tensor<T> tensor;
};

template <typename T>
class Model {
public:
    /// Deterministic in config.seed. Embedding tables ~ Normal(0, 1/sqrt(H));
    /// projections ~ Normal(0, sqrt(2 / (fan_in + fan_out))); gains 1.
    static Model init(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }

    std::vector<Parameter<T>>& parameters() noexcept { return params_; }
    const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const noexcept;

    nn::Tensor<T>& input_embedding() noexcept { return params_[embed_index_].tensor; }
    const nn::Tensor<T>& input_embedding() const noexcept { return params_[embed_index_].tensor; }
    /// Same storage as input_embedding() when tied.
    nn::Tensor<T>& output_table() noexcept { return params_[output_index_].tensor; }
    const nn::Tensor<T>& output_table() const noexcept { return params_[output_index_].tensor; }

    /// Binds every parameter to `graph`, one Var per entry of parameters().
    std::vector<nn::Var> bind(nn::Graph<T>& graph);
    nn::Var output_table_var(const std::vector<nn::Var>& bound) const { return bound[output_index_]; }

    /// Final normalized hidden states [batch*seq x H] for `tokens` laid out
    /// row-major as [batch x seq]. Throws IndexError on ids >= V.
    nn::Var hidden_states(nn::Graph<T>& graph, const std::vector<nn::Var>& bound, std::span<const int> tokens,
                          std::size_t batch, std::size_t seq) const;

    /// Per-position logits [batch*seq x V] against the output table.
    nn::Var forward(nn::Graph<T>& graph, const std::vector<nn::Var>& bound, std::span<const int> tokens,
                    std::size_t batch, std::size_t seq) const;

    void zero_grad();

    /// Copies parameter values from `values` by name; throws on a missing name or shape mismatch.
    template <typename U>
    void load_values(const std::vector<Parameter<U>>& values);

private:
    struct LayerIndex {
        std::size_t ln_attn, wq, wk, wv, wo, q_norm, k_norm, ln_ffn, w_gate, w_up, w_down;
    };

    ModelConfig config_;
    std::vector<Parameter<T>> params_;
    std::vector<LayerIndex> layers_;
    std::size_t embed_index_ = 0;
    std::size_t output_index_ = 0;
    std::size_t final_norm_index_ = 0;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace logitlab::model
