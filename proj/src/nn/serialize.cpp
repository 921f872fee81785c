// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/nn/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>

#include "logitlab/errors.hpp"

namespace logitlab::nn {

namespace {

constexpr std::size_t kMaxHeaderBytes = 1 << 16;

std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
    return v;
}

}  // namespace

std::uint64_t write_tensor_record(std::ostream& out, const std::string& name, const Tensor<float>& tensor) {
    nlohmann::json header = {{"name", name}, {"dtype", "f32"}, {"shape", tensor.shape()}};
    const std::string line = header.dump() + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    std::vector<std::uint32_t> words(tensor.size());
    for (std::size_t i = 0; i < tensor.size(); ++i) {
        words[i] = to_little_endian(std::bit_cast<std::uint32_t>(tensor[i]));
    }
    out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    if (!out) {
        throw IoError("failed writing tensor record '" + name + "'");
    }
    return line.size() + words.size() * 4;
}

NamedTensor read_tensor_record(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.size() > kMaxHeaderBytes) {
        throw IoError("missing or oversized tensor header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed tensor header: ") + e.what());
    }
    if (!header.contains("name") || !header.contains("shape") || header.value("dtype", "") != "f32") {
        throw IoError("tensor header lacks name/shape or has an unsupported dtype");
    }
    NamedTensor result;
    result.name = header["name"].get<std::string>();
    const Shape shape = header["shape"].get<Shape>();
    const std::size_t n = element_count(shape);
    std::vector<std::uint32_t> words(n);
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(n * 4));
    if (static_cast<std::size_t>(in.gcount()) != n * 4) {
        throw IoError("truncated payload for tensor '" + result.name + "'");
    }
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = std::bit_cast<float>(to_little_endian(words[i]));
    }
    result.tensor = Tensor<float>(shape, std::move(values));
    return result;
}

std::vector<NamedTensor> read_all_records(std::istream& in) {
    std::vector<NamedTensor> out;
    while (in.peek() != std::char_traits<char>::eof()) {
        out.push_back(read_tensor_record(in));
    }
    return out;
}

}  // namespace logitlab::nn
