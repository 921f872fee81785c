// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "logitlab/head/strategy.hpp"

#include <array>
#include <cmath>
#include <utility>

#include "logitlab/errors.hpp"

namespace logitlab::head {

void HeadStrategy::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("head.lambda must be a finite non-negative number");
    }
    if (!(cap > 0.0) || !std::isfinite(cap)) {
        throw ConfigError("head.cap must be a finite positive number");
    }
}

StrategyTraits traits(HeadKind kind) noexcept {
    switch (kind) {
        case HeadKind::soft_cap:
            return {Intervention::model, "element-wise transformation", true};
        case HeadKind::z_loss:
            return {Intervention::training, "loss regularization", false};
        case HeadKind::mu_loss:
            return {Intervention::training, "loss regularization", true};
        case HeadKind::mu_center:
            return {Intervention::training, "parameter shift", true};
        case HeadKind::baseline:
            break;
    }
    return {Intervention::none, "none", true};
}

std::string_view to_string(HeadKind kind) noexcept {
    switch (kind) {
        case HeadKind::baseline:
            return "baseline";
        case HeadKind::z_loss:
            return "z_loss";
        case HeadKind::soft_cap:
            return "soft_cap";
        case HeadKind::mu_loss:
            return "mu_loss";
        case HeadKind::mu_center:
            return "mu_center";
    }
    return "baseline";
}

HeadKind parse_head_kind(std::string_view name) {
    static constexpr std::array<std::pair<std::string_view, HeadKind>, 12> kNames{{
        {"baseline", HeadKind::baseline},
        {"z_loss", HeadKind::z_loss},
        {"z-loss", HeadKind::z_loss},
        {"soft_cap", HeadKind::soft_cap},
        {"soft-cap", HeadKind::soft_cap},
        {"soft-capping", HeadKind::soft_cap},
        {"mu_loss", HeadKind::mu_loss},
        {"mu-loss", HeadKind::mu_loss},
        {"mu_center", HeadKind::mu_center},
        {"mu-center", HeadKind::mu_center},
        {"mu_centering", HeadKind::mu_center},
        {"mu-centering", HeadKind::mu_center},
    }};
    for (const auto& [key, kind] : kNames) {
        if (key == name) {
            return kind;
        }
    }
    throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

}  // namespace logitlab::head
