// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/data/corpus.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "logitlab/errors.hpp"

namespace logitlab::data {

namespace fs = std::filesystem;

std::vector<int> tokenize_bytes(std::string_view text) {
    std::vector<int> ids(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        ids[i] = static_cast<unsigned char>(text[i]);
    }
    return ids;
}

std::string detokenize(std::span<const int> ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id >= 0 && id < 256) {
            out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        }
    }
    return out;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex_digest(std::uint64_t digest) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
    return buf;
}

Corpus corpus_from_text(std::string_view text, double test_fraction, std::string source) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw DataError("test fraction must lie in (0, 1)");
    }
    Corpus c;
    c.source = std::move(source);
    c.digest = fnv1a64(text);
    c.tokens.reserve(text.size() + 1);
    c.tokens.push_back(static_cast<std::uint16_t>(kBos));
    for (unsigned char ch : text) {
        c.tokens.push_back(ch);
    }
    c.train_end = c.tokens.size() - static_cast<std::size_t>(static_cast<double>(c.tokens.size()) * test_fraction);
    return c;
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read corpus " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool load_cache(const fs::path& dir, std::uint64_t digest, double test_fraction, Corpus& out) {
    std::ifstream meta_in(dir / "tokens.json");
    std::ifstream tok_in(dir / "tokens.u16", std::ios::binary);
    if (!meta_in || !tok_in) {
        return false;
    }
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception&) {
        return false;
    }
    if (meta.value("digest", "") != hex_digest(digest) || meta.value("test_fraction", -1.0) != test_fraction) {
        return false;
    }
    const auto n = meta.value("n_tokens", std::size_t{0});
    std::vector<unsigned char> raw(n * 2);
    tok_in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(tok_in.gcount()) != raw.size()) {
        return false;
    }
    out.tokens.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.tokens[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
    }
    out.train_end = meta.value("train_end", std::size_t{0});
    out.digest = digest;
    return out.train_end > 0 && out.train_end <= n;
}

void write_cache(const fs::path& dir, const Corpus& c, double test_fraction) {
    fs::create_directories(dir);
    std::vector<unsigned char> raw(c.tokens.size() * 2);
    for (std::size_t i = 0; i < c.tokens.size(); ++i) {
        raw[2 * i] = static_cast<unsigned char>(c.tokens[i] & 0xff);
        raw[2 * i + 1] = static_cast<unsigned char>(c.tokens[i] >> 8);
    }
    std::ofstream tok_out(dir / "tokens.u16", std::ios::binary | std::ios::trunc);
    tok_out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    nlohmann::json meta = {{"digest", hex_digest(c.digest)}, {"n_tokens", c.tokens.size()},
                           {"train_end", c.train_end},       {"test_fraction", test_fraction},
                           {"source", c.source},             {"vocab_size", kByteVocab}};
    std::ofstream meta_out(dir / "tokens.json", std::ios::trunc);
    meta_out << meta.dump(2) << "\n";
    if (!tok_out || !meta_out) {
        throw IoError("cannot write corpus cache in " + dir.string());
    }
}

}  // namespace

Corpus load_corpus(const fs::path& path, double test_fraction, const fs::path& cache_dir) {
    const std::string text = read_file(path);
    if (!cache_dir.empty()) {
        Corpus cached;
        cached.source = path.string();
        if (load_cache(cache_dir, fnv1a64(text), test_fraction, cached)) {
            return cached;
        }
    }
    Corpus c = corpus_from_text(text, test_fraction, path.string());
    if (!cache_dir.empty()) {
        write_cache(cache_dir, c, test_fraction);
    }
    return c;
}

std::vector<int> Batch::inputs() const {
    std::vector<int> out;
    out.reserve(batch * seq);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto row = tokens.begin() + static_cast<std::ptrdiff_t>(b * (seq + 1));
        out.insert(out.end(), row, row + static_cast<std::ptrdiff_t>(seq));
    }
    return out;
}

std::vector<int> Batch::targets() const {
    std::vector<int> out;
    out.reserve(batch * seq);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto row = tokens.begin() + static_cast<std::ptrdiff_t>(b * (seq + 1));
        out.insert(out.end(), row + 1, row + 1 + static_cast<std::ptrdiff_t>(seq));
    }
    return out;
}

namespace {

Batch gather(const Corpus& corpus, std::vector<std::size_t> starts, std::size_t seq_len) {
    Batch b;
    b.batch = starts.size();
    b.seq = seq_len;
    b.tokens.reserve(starts.size() * (seq_len + 1));
    for (std::size_t s : starts) {
        for (std::size_t j = 0; j <= seq_len; ++j) {
            b.tokens.push_back(corpus.tokens[s + j]);
        }
    }
    b.starts = std::move(starts);
    return b;
}

}  // namespace

Batch next_batch(const Corpus& corpus, std::mt19937_64& rng, std::size_t batch_size, std::size_t seq_len) {
    if (seq_len == 0 || batch_size == 0) {
        throw DataError("batch size and sequence length must be positive");
    }
    if (corpus.train_end < seq_len + 1) {
        throw DataError("train region of " + std::to_string(corpus.train_end) + " tokens is shorter than one window of " +
                        std::to_string(seq_len + 1));
    }
    const std::size_t last_start = corpus.train_end - (seq_len + 1);
    std::vector<std::size_t> starts(batch_size);
    for (auto& s : starts) {
        // uniform_int_distribution is implementation-defined; a 64-bit draw
        // reduced by modulo keeps batches reproducible across standard libraries.
        s = static_cast<std::size_t>(rng() % (last_start + 1));
    }
    return gather(corpus, std::move(starts), seq_len);
}

Batch test_windows(const Corpus& corpus, std::size_t count, std::size_t seq_len) {
    if (count == 0 || seq_len == 0) {
        throw DataError("need at least one test window of positive length");
    }
    const std::size_t test_len = corpus.size() - corpus.train_end;
    if (test_len < seq_len + 1) {
        throw DataError("test region of " + std::to_string(test_len) + " tokens is shorter than one window of " +
                        std::to_string(seq_len + 1));
    }
    const std::size_t room = test_len - (seq_len + 1);
    std::vector<std::size_t> starts(count);
    for (std::size_t i = 0; i < count; ++i) {
        starts[i] = corpus.train_end + (count == 1 ? 0 : room * i / (count - 1));
    }
    return gather(corpus, std::move(starts), seq_len);
}

}  // namespace logitlab::data
