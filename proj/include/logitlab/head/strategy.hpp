// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

namespace logitlab::head {

enum class HeadKind { baseline, z_loss, soft_cap, mu_loss, mu_center };

inline constexpr double kDefaultLambda = 1e-4;
inline constexpr double kDefaultCap = 30.0;

/// Which stabilization the language-modeling head uses. `lambda` is read only
/// by z_loss and mu_loss, `cap` only by soft_cap.
struct HeadStrategy {
    HeadKind kind = HeadKind::baseline;
    double lambda = kDefaultLambda;
    double cap = kDefaultCap;

    bool uses_lambda() const noexcept { return kind == HeadKind::z_loss || kind == HeadKind::mu_loss; }
    bool uses_cap() const noexcept { return kind == HeadKind::soft_cap; }
    /// Throws ConfigError on a negative lambda or a non-positive cap.
    void validate() const;

    friend bool operator==(const HeadStrategy&, const HeadStrategy&) = default;
};

enum class Intervention { none, model, training };

struct StrategyTraits {
    Intervention intervention;
    std::string_view means;
    /// Positive and negative logit divergences are penalized alike.
    bool symmetric;
};

StrategyTraits traits(HeadKind kind) noexcept;

std::string_view to_string(HeadKind kind) noexcept;
/// Accepts the snake_case names and the dashed spellings ("z-loss", "mu-centering", ...).
HeadKind parse_head_kind(std::string_view name);

}  // namespace logitlab::head
