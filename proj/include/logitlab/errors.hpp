// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace logitlab {

/// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Token or target index outside the vocabulary.
class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Caller violated a documented precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace logitlab
