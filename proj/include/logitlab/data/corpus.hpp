// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level corpus: every byte maps to its own id, id 256 is BOS, V = 257.
// The stream is split once into a leading train region and a trailing test
// region; batches draw random windows from the former, evaluation walks a
// fixed list of windows in the latter.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace logitlab::data {

inline constexpr int kBos = 256;
inline constexpr std::size_t kByteVocab = 257;

std::vector<int> tokenize_bytes(std::string_view text);
/// Inverse of tokenize_bytes; BOS ids are dropped.
std::string detokenize(std::span<const int> ids);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex_digest(std::uint64_t digest);

struct Corpus {
    std::vector<std::uint16_t> tokens;  // BOS followed by the file's bytes
    std::size_t train_end = 0;          // tokens[0, train_end) train, [train_end, size) test
    std::uint64_t digest = 0;           // of the source bytes
    std::string source;

    std::size_t size() const noexcept { return tokens.size(); }
};

/// Reads `path` and splits off the last `test_fraction` of the stream.
/// With a non-empty `cache_dir`, reuses or writes tokens.u16 + tokens.json.
Corpus load_corpus(const std::filesystem::path& path, double test_fraction = 0.1,
                   const std::filesystem::path& cache_dir = {});

Corpus corpus_from_text(std::string_view text, double test_fraction = 0.1, std::string source = "<memory>");

/// A [batch x (seq+1)] block of token ids; inputs are columns [0, seq),
/// targets columns [1, seq].
struct Batch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> tokens;
    std::vector<std::size_t> starts;  // corpus offset of each row

    std::vector<int> inputs() const;
    std::vector<int> targets() const;
};

/// Uniform random windows from the train region. Throws DataError when the
/// region cannot hold one window.
Batch next_batch(const Corpus& corpus, std::mt19937_64& rng, std::size_t batch_size, std::size_t seq_len);

/// `count` evenly spaced windows from the test region, always in the same order.
Batch test_windows(const Corpus& corpus, std::size_t count, std::size_t seq_len);

}  // namespace logitlab::data
