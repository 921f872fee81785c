// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor record format: one line of JSON {"name", "dtype": "f32", "shape"}
// terminated by '\n', followed by product(shape) little-endian float32 values.
// Records are concatenated back to back in a payload file.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "logitlab/nn/tensor.hpp"

namespace logitlab::nn {

struct NamedTensor {
    std::string name;
    Tensor<float> tensor;
};

/// Writes one record; returns the number of bytes written.
std::uint64_t write_tensor_record(std::ostream& out, const std::string& name, const Tensor<float>& tensor);

/// Reads one record. Throws IoError on truncation or a malformed header.
NamedTensor read_tensor_record(std::istream& in);

std::vector<NamedTensor> read_all_records(std::istream& in);

}  // namespace logitlab::nn
