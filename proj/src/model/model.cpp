// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/model/model.hpp"

#include <cmath>
#include <random>
#include <unordered_map>

#include "logitlab/errors.hpp"

namespace logitlab::model {

void ModelConfig::validate() const {
    if (vocab_size == 0 || hidden_dim == 0 || n_layers == 0 || n_heads == 0 || ffn_dim == 0 || seq_len == 0) {
        throw ConfigError("model dimensions must all be at least 1");
    }
    if (hidden_dim % n_heads != 0) {
        throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (head_dim() % 2 != 0) {
        throw ConfigError("head_dim must be even for rotary embeddings, got " + std::to_string(head_dim()));
    }
}

template <typename T>
std::vector<T> apply_rope(std::span<const T> x, double position) {
    if (x.size() % 2 != 0) {
        throw ConfigError("rotary embedding needs an even head_dim");
    }
    const double d = static_cast<double>(x.size());
    std::vector<T> out(x.size());
    for (std::size_t j = 0; 2 * j < x.size(); ++j) {
        const double angle = position * std::pow(10000.0, -2.0 * static_cast<double>(j) / d);
        const T c = static_cast<T>(std::cos(angle));
        const T s = static_cast<T>(std::sin(angle));
        out[2 * j] = x[2 * j] * c - x[2 * j + 1] * s;
        out[2 * j + 1] = x[2 * j] * s + x[2 * j + 1] * c;
    }
    return out;
}

template <typename T>
std::vector<T> swiglu(std::span<const T> gate, std::span<const T> value) {
    if (gate.size() != value.size()) {
        throw DimensionError("swiglu: gate and value differ in length");
    }
    std::vector<T> out(gate.size());
    for (std::size_t i = 0; i < gate.size(); ++i) {
        out[i] = value[i] * gate[i] / (T(1) + std::exp(-gate[i]));
    }
    return out;
}

template <typename T>
Model<T> Model<T>::init(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config_ = config;
    std::mt19937_64 rng(config.seed);
    const std::size_t H = config.hidden_dim, F = config.ffn_dim, V = config.vocab_size;

    auto add = [&m](std::string name, nn::Shape shape) {
        nn::Tensor<T> t(std::move(shape));
        t.set_requires_grad(true);
        m.params_.push_back({std::move(name), std::move(t)});
        return m.params_.size() - 1;
    };
    auto fill_normal = [&rng, &m](std::size_t index, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (T& v : m.params_[index].tensor.values()) {
            v = static_cast<T>(dist(rng));
        }
    };
    auto xavier = [&](std::size_t index, std::size_t fan_in, std::size_t fan_out) {
        fill_normal(index, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
    };
    auto ones = [&m](std::size_t index) {
        for (T& v : m.params_[index].tensor.values()) {
            v = T(1);
        }
    };
    const double embed_std = 1.0 / std::sqrt(static_cast<double>(H));

    m.params_.reserve(3 + 11 * config.n_layers);
    m.embed_index_ = add("embed", {V, H});
    fill_normal(m.embed_index_, embed_std);
    const std::size_t hd = config.head_dim();
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerIndex li{};
        li.ln_attn = add(p + "ln_attn", {H});
        li.wq = add(p + "wq", {H, H});
        li.wk = add(p + "wk", {H, H});
        li.wv = add(p + "wv", {H, H});
        li.wo = add(p + "wo", {H, H});
        li.q_norm = add(p + "q_norm", {hd});
        li.k_norm = add(p + "k_norm", {hd});
        li.ln_ffn = add(p + "ln_ffn", {H});
        li.w_gate = add(p + "w_gate", {H, F});
        li.w_up = add(p + "w_up", {H, F});
        li.w_down = add(p + "w_down", {F, H});
        for (std::size_t g : {li.ln_attn, li.q_norm, li.k_norm, li.ln_ffn}) {
            ones(g);
        }
        for (std::size_t w : {li.wq, li.wk, li.wv, li.wo}) {
            xavier(w, H, H);
        }
        xavier(li.w_gate, H, F);
        xavier(li.w_up, H, F);
        xavier(li.w_down, F, H);
        m.layers_.push_back(li);
    }
    m.final_norm_index_ = add("final_norm", {H});
    ones(m.final_norm_index_);
    if (config.weight_tying) {
        m.output_index_ = m.embed_index_;
    } else {
        m.output_index_ = add("output", {V, H});
        fill_normal(m.output_index_, embed_std);
    }
    return m;
}

template <typename T>
std::size_t Model<T>::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.tensor.size();
    }
    return n;
}

template <typename T>
std::vector<nn::Var> Model<T>::bind(nn::Graph<T>& graph) {
    std::vector<nn::Var> bound;
    bound.reserve(params_.size());
    for (auto& p : params_) {
        bound.push_back(graph.parameter(p.tensor));
    }
    return bound;
}

template <typename T>
nn::Var Model<T>::hidden_states(nn::Graph<T>& graph, const std::vector<nn::Var>& bound, std::span<const int> tokens,
                                std::size_t batch, std::size_t seq) const {
    if (bound.size() != params_.size()) {
        throw ContractError("parameters were not bound to this graph");
    }
    if (seq == 0 || seq > config_.seq_len || tokens.size() != batch * seq) {
        throw DimensionError("token block must be batch x seq with 1 <= seq <= " + std::to_string(config_.seq_len));
    }
    const std::size_t H = config_.hidden_dim, hd = config_.head_dim();
    nn::Var x = graph.gather_rows(bound[embed_index_], tokens);
    for (const LayerIndex& li : layers_) {
        const nn::Var a = graph.layer_norm(x, bound[li.ln_attn], H);
        nn::Var q = graph.matmul(a, bound[li.wq]);
        nn::Var k = graph.matmul(a, bound[li.wk]);
        const nn::Var v = graph.matmul(a, bound[li.wv]);
        q = graph.rope(graph.layer_norm(q, bound[li.q_norm], hd), hd, seq);
        k = graph.rope(graph.layer_norm(k, bound[li.k_norm], hd), hd, seq);
        const nn::Var attn = graph.causal_attention(q, k, v, config_.n_heads, seq);
        x = graph.add(x, graph.matmul(attn, bound[li.wo]));
        const nn::Var b = graph.layer_norm(x, bound[li.ln_ffn], H);
        const nn::Var f = graph.swiglu(graph.matmul(b, bound[li.w_gate]), graph.matmul(b, bound[li.w_up]));
        x = graph.add(x, graph.matmul(f, bound[li.w_down]));
    }
    return graph.layer_norm(x, bound[final_norm_index_], H);
}

template <typename T>
nn::Var Model<T>::forward(nn::Graph<T>& graph, const std::vector<nn::Var>& bound, std::span<const int> tokens,
                          std::size_t batch, std::size_t seq) const {
    const nn::Var h = hidden_states(graph, bound, tokens, batch, seq);
    return graph.matmul_transposed(h, bound[output_index_]);
}

template <typename T>
void Model<T>::zero_grad() {
    for (auto& p : params_) {
        p.tensor.zero_grad();
    }
}

template <typename T>
template <typename U>
void Model<T>::load_values(const std::vector<Parameter<U>>& values) {
    std::unordered_map<std::string, const nn::Tensor<U>*> by_name;
    for (const auto& v : values) {
        by_name[v.name] = &v.tensor;
    }
    for (auto& p : params_) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw DataError("missing parameter '" + p.name + "'");
        }
        if (it->second->shape() != p.tensor.shape()) {
            throw DimensionError("parameter '" + p.name + "' has shape " + nn::shape_string(it->second->shape()) +
                                 ", expected " + nn::shape_string(p.tensor.shape()));
        }
        for (std::size_t i = 0; i < p.tensor.size(); ++i) {
            p.tensor[i] = static_cast<T>((*it->second)[i]);
        }
    }
}

template class Model<float>;
template class Model<double>;
template void Model<float>::load_values<float>(const std::vector<Parameter<float>>&);
template void Model<double>::load_values<float>(const std::vector<Parameter<float>>&);
template void Model<double>::load_values<double>(const std::vector<Parameter<double>>&);
template std::vector<float> apply_rope<float>(std::span<const float>, double);
template std::vector<double> apply_rope<double>(std::span<const double>, double);
template std::vector<float> swiglu<float>(std::span<const float>, std::span<const float>);
template std::vector<double> swiglu<double>(std::span<const double>, std::span<const double>);

}  // namespace logitlab::model
