// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// A checkpoint directory holds manifest.json (run config, model config, step
// and a tensor index with byte offsets) and tensors.bin, a sequence of tensor
// records in the nn serialization format.

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <vector>

#include "logitlab/model/model.hpp"

namespace logitlab::model {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Checkpoint {
    nlohmann::json manifest;
    ModelConfig config;
    std::int64_t step = 0;
    std::vector<Parameter<float>> tensors;

    /// The output embedding table ("output", or "embed" for tied models).
    const nn::Tensor<float>& output_table() const;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kPayloadFile = "tensors.bin";

/// Writes values (cast to float32) of every parameter. `run_config` is stored verbatim.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Model<T>& model, std::int64_t step,
                     const nlohmann::json& run_config);

/// Throws IoError on missing or corrupt files.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace logitlab::model
