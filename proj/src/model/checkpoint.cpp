// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/model/checkpoint.hpp"

#include <fstream>

#include "logitlab/errors.hpp"
#include "logitlab/nn/serialize.hpp"

namespace logitlab::model {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"vocab_size", c.vocab_size}, {"hidden_dim", c.hidden_dim}, {"n_layers", c.n_layers},
                       {"n_heads", c.n_heads},       {"ffn_dim", c.ffn_dim},       {"seq_len", c.seq_len},
                       {"weight_tying", c.weight_tying}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    const ModelConfig d;
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
    c.n_layers = j.value("n_layers", d.n_layers);
    c.n_heads = j.value("n_heads", d.n_heads);
    c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
    c.seq_len = j.value("seq_len", d.seq_len);
    c.weight_tying = j.value("weight_tying", d.weight_tying);
    c.seed = j.value("seed", d.seed);
}

const nn::Tensor<float>& Checkpoint::output_table() const {
    const std::string wanted = config.weight_tying ? "embed" : "output";
    for (const auto& t : tensors) {
        if (t.name == wanted) {
            return t.tensor;
        }
    }
    throw IoError("checkpoint has no '" + wanted + "' tensor");
}

template <typename T>
void save_checkpoint(const fs::path& dir, const Model<T>& model, std::int64_t step, const nlohmann::json& run_config) {
    fs::create_directories(dir);
    std::ofstream payload(dir / kPayloadFile, std::ios::binary | std::ios::trunc);
    if (!payload) {
        throw IoError("cannot write " + (dir / kPayloadFile).string());
    }
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& p : model.parameters()) {
        const nn::Tensor<float> values = nn::tensor_cast<float>(p.tensor);
        const std::uint64_t n = nn::write_tensor_record(payload, p.name, values);
        index.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}, {"nbytes", n}});
        offset += n;
    }
    payload.close();
    nlohmann::json manifest = {{"format", "logitlab-checkpoint"},
                               {"version", 1},
                               {"config", run_config},
                               {"model", model.config()},
                               {"step", step},
                               {"payload", kPayloadFile},
                               {"tensors", index}};
    std::ofstream out(dir / kManifestFile, std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) {
        throw IoError("cannot write " + (dir / kManifestFile).string());
    }
}

Checkpoint load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / kManifestFile);
    if (!in) {
        throw IoError("missing " + (dir / kManifestFile).string());
    }
    Checkpoint ck;
    try {
        ck.manifest = nlohmann::json::parse(in);
        ck.config = ck.manifest.at("model").get<ModelConfig>();
        ck.step = ck.manifest.at("step").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt manifest in " + dir.string() + ": " + e.what());
    }
    std::ifstream payload(dir / ck.manifest.value("payload", std::string(kPayloadFile)), std::ios::binary);
    if (!payload) {
        throw IoError("missing tensor payload in " + dir.string());
    }
    for (auto& rec : nn::read_all_records(payload)) {
        ck.tensors.push_back({std::move(rec.name), std::move(rec.tensor)});
    }
    const auto& index = ck.manifest.at("tensors");
    if (index.size() != ck.tensors.size()) {
        throw IoError("tensor index and payload disagree in " + dir.string());
    }
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
        if (index[i].value("name", "") != ck.tensors[i].name ||
            index[i].value("shape", nn::Shape{}) != ck.tensors[i].tensor.shape()) {
            throw IoError("tensor '" + ck.tensors[i].name + "' does not match the manifest index");
        }
    }
    return ck;
}

template void save_checkpoint<float>(const fs::path&, const Model<float>&, std::int64_t, const nlohmann::json&);
template void save_checkpoint<double>(const fs::path&, const Model<double>&, std::int64_t, const nlohmann::json&);

}  // namespace logitlab::model
