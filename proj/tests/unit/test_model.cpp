// Copyright 2026 The logitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "gradcheck.hpp"
#include "logitlab/errors.hpp"
#include "logitlab/head/head.hpp"
#include "logitlab/model/checkpoint.hpp"
#include "logitlab/model/model.hpp"
#include "logitlab/optim/optim.hpp"
#include "oracles.hpp"

using namespace logitlab;
using model::Model;
using model::ModelConfig;
using nn::Graph;
using nn::Tensor;
using nn::Var;

namespace {

ModelConfig tiny_config(std::size_t layers = 2, std::size_t H = 8, std::size_t V = 11, bool tied = false) {
    ModelConfig c;
    c.vocab_size = V;
    c.hidden_dim = H;
    c.n_layers = layers;
    c.n_heads = 2;
    c.ffn_dim = 2 * H;
    c.seq_len = 6;
    c.weight_tying = tied;
    c.seed = 3;
    return c;
}

std::vector<double> logits_of(Model<double>& m, const std::vector<int>& tokens, std::size_t batch, std::size_t seq) {
    Graph<double> g(false);
    const auto bound = m.bind(g);
    const auto& out = g.value(m.forward(g, bound, tokens, batch, seq));
    return {out.values().begin(), out.values().end()};
}

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("defaults are the desk-scale model") {
        const ModelConfig c;
        CHECK(c.vocab_size == 257);
        CHECK(c.hidden_dim == 64);
        CHECK(c.n_layers == 4);
        CHECK(c.n_heads == 4);
        CHECK(c.ffn_dim == 256);
        CHECK(c.seq_len == 256);
        CHECK(c.head_dim() == 16);
        CHECK_NOTHROW(c.validate());
    }

    TEST_CASE("invalid dimensions") {
        ModelConfig c = tiny_config();
        c.n_heads = 3;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = tiny_config();
        c.hidden_dim = 6;
        c.n_heads = 2;  // head_dim 3 is odd
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = tiny_config();
        c.n_layers = 0;
        CHECK_THROWS_AS(Model<double>::init(c), ConfigError);
    }
}

TEST_SUITE("init") {
    TEST_CASE("same seed gives bitwise identical parameters, another seed does not") {
        const auto a = Model<float>::init(tiny_config());
        const auto b = Model<float>::init(tiny_config());
        auto other = tiny_config();
        other.seed = 4;
        const auto c = Model<float>::init(other);
        bool any_diff = false;
        for (std::size_t i = 0; i < a.parameters().size(); ++i) {
            const auto& x = a.parameters()[i].tensor;
            CHECK(std::memcmp(x.data(), b.parameters()[i].tensor.data(), x.size() * sizeof(float)) == 0);
            any_diff |= std::memcmp(x.data(), c.parameters()[i].tensor.data(), x.size() * sizeof(float)) != 0;
        }
        CHECK(any_diff);
    }

    TEST_CASE("H = 64 embedding entries have std 1/8") {
        ModelConfig c;
        c.vocab_size = 1600;  // 1600 x 64 > 10^5 samples
        c.n_layers = 1;
        const auto m = Model<double>::init(c);
        const auto& e = m.input_embedding().values();
        const auto [mean, sd] = oracle::mean_std({e.begin(), e.end()});
        const double n = static_cast<double>(e.size());
        CHECK(n >= 1e5);
        CHECK(std::abs(mean) <= 3.0 * 0.125 / std::sqrt(n));
        CHECK(std::abs(sd - 0.125) <= 0.05 * 0.125);
        const auto& out = m.output_table().values();
        CHECK(std::abs(oracle::mean_std({out.begin(), out.end()}).second - 0.125) <= 0.05 * 0.125);
    }

    TEST_CASE("projections follow the averaged-fan normal, gains start at one") {
        ModelConfig c;
        c.n_layers = 8;
        const auto m = Model<double>::init(c);
        std::vector<double> square, gate;
        for (const auto& p : m.parameters()) {
            const auto& v = p.tensor.values();
            if (p.name.ends_with(".wq") || p.name.ends_with(".wo")) {
                square.insert(square.end(), v.begin(), v.end());
            } else if (p.name.ends_with(".w_gate") || p.name.ends_with(".w_down")) {
                gate.insert(gate.end(), v.begin(), v.end());
            } else if (p.name.find("norm") != std::string::npos || p.name.find("ln_") != std::string::npos) {
                for (double x : v) {
                    CHECK(x == 1.0);
                }
            }
        }
        CHECK(std::abs(oracle::mean_std(square).second - std::sqrt(2.0 / 128.0)) <= 0.05 * std::sqrt(2.0 / 128.0));
        CHECK(std::abs(oracle::mean_std(gate).second - std::sqrt(2.0 / 320.0)) <= 0.05 * std::sqrt(2.0 / 320.0));
    }

    TEST_CASE("weight tying aliases storage and drops exactly V x H parameters") {
        auto tied = Model<double>::init(tiny_config(2, 8, 11, true));
        const auto untied = Model<double>::init(tiny_config(2, 8, 11, false));
        CHECK(&tied.output_table() == &tied.input_embedding());
        tied.output_table()[0] = 42.0;
        CHECK(tied.input_embedding().row(0)[0] == 42.0);
        CHECK(untied.parameter_count() - tied.parameter_count() == 11 * 8);
        CHECK(untied.parameters().size() == tied.parameters().size() + 1);
        std::size_t embedding_blocks = 0;
        for (const auto& p : tied.parameters()) {
            embedding_blocks += p.tensor.shape() == nn::Shape{11, 8};
        }
        CHECK(embedding_blocks == 1);
    }
}

TEST_SUITE("apply_rope") {
    TEST_CASE("position 0 is the identity") {
        const std::vector<double> x{0.3, -1.2, 2.0, 0.7};
        CHECK(model::apply_rope<double>(x, 0.0) == x);
    }

    TEST_CASE("head_dim 2 rotates by the position") {
        const auto y = model::apply_rope<double>(std::vector<double>{1.0, 0.0}, std::numbers::pi / 2);
        CHECK(std::abs(y[0]) <= 1e-15);
        CHECK(std::abs(y[1] - 1.0) <= 1e-15);
    }

    TEST_CASE("pair norms are preserved") {
        std::mt19937_64 rng(1);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t d = 2 * oracle::uniform_index(rng, 1, 16);
            const auto x = oracle::normal_vector(d, rng);
            const auto y = model::apply_rope<double>(x, static_cast<double>(oracle::uniform_index(rng, 0, 4096)));
            for (std::size_t j = 0; j < d; j += 2) {
                CHECK(std::abs(std::hypot(y[j], y[j + 1]) - std::hypot(x[j], x[j + 1])) <= 1e-12);
            }
        }
    }

    TEST_CASE("odd width is rejected") {
        CHECK_THROWS_AS(model::apply_rope<double>(std::vector<double>{1, 2, 3}, 1.0), ConfigError);
    }

    TEST_CASE("the graph op agrees with the value function") {
        std::mt19937_64 rng(2);
        const std::size_t seq = 5, hd = 6, heads = 2;
        const auto x = oracle::random_tensor({seq, heads * hd}, rng);
        Graph<double> g(false);
        const auto& y = g.value(g.rope(g.constant(x), hd, seq));
        for (std::size_t t = 0; t < seq; ++t) {
            for (std::size_t h = 0; h < heads; ++h) {
                const auto ref = model::apply_rope<double>(x.row(t).subspan(h * hd, hd), static_cast<double>(t));
                for (std::size_t j = 0; j < hd; ++j) {
                    CHECK(std::abs(y.at(t, h * hd + j) - ref[j]) <= 1e-14);
                }
            }
        }
    }
}

TEST_SUITE("swiglu") {
    TEST_CASE("values") {
        const auto zero = model::swiglu<double>(std::vector<double>{0, 0}, std::vector<double>{5, -3});
        CHECK(zero == std::vector<double>{0, 0});
        const double y = model::swiglu<double>(std::vector<double>{1.0}, std::vector<double>{2.0})[0];
        CHECK(std::abs(y - 1.46212) <= 1e-5);
        CHECK(std::abs(model::swiglu<double>(std::vector<double>{40.0}, std::vector<double>{0.5})[0] - 20.0) <= 1e-12);
        CHECK_THROWS_AS(model::swiglu<double>(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), DimensionError);
    }
}

TEST_SUITE("forward") {
    TEST_CASE("one layer with zeroed mixing weights reduces to the table against the normalized embedding") {
        ModelConfig c = tiny_config(1, 8, 11);
        auto m = Model<double>::init(c);
        std::mt19937_64 rng(5);
        for (auto& p : m.parameters()) {
            if (p.name.starts_with("layer0.w")) {
                std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0);
            } else if (p.name == "final_norm") {
                for (double& v : p.tensor.values()) {
                    v = 1.0 + 0.3 * oracle::normal_vector(1, rng)[0];
                }
            }
        }
        const std::vector<int> tokens{3, 0, 10, 3};
        const auto logits = logits_of(m, tokens, 1, 4);
        const auto& gain = m.parameters()[m.parameters().size() - 2].tensor;
        REQUIRE(m.parameters()[m.parameters().size() - 2].name == "final_norm");
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            const auto e = m.input_embedding().row(static_cast<std::size_t>(tokens[t]));
            const auto [mean, sd] = oracle::mean_std({e.begin(), e.end()});
            std::vector<double> h(8);
            for (std::size_t j = 0; j < 8; ++j) {
                h[j] = gain[j] * (e[j] - mean) / std::sqrt(sd * sd + 1e-5);
            }
            for (std::size_t v = 0; v < 11; ++v) {
                CHECK(std::abs(logits[t * 11 + v] - oracle::dot(m.output_table().row(v), h)) <= 1e-12);
            }
        }
    }

    TEST_CASE("perturbing position j leaves earlier logits bitwise unchanged") {
        for (std::size_t layers : {1, 2, 3}) {
            auto m = Model<double>::init(tiny_config(layers));
            std::vector<int> tokens{1, 4, 7, 2, 9, 5, 0, 3, 8, 6, 10, 1};
            const auto base = logits_of(m, tokens, 2, 6);
            for (std::size_t j = 0; j < 6; ++j) {
                auto changed = tokens;
                changed[6 + j] = (changed[6 + j] + 5) % 11;
                const auto out = logits_of(m, changed, 2, 6);
                CHECK(std::memcmp(out.data(), base.data(), 6 * 11 * sizeof(double)) == 0);  // other sequence
                CHECK(std::memcmp(out.data() + 66, base.data() + 66, j * 11 * sizeof(double)) == 0);
                CHECK(std::memcmp(out.data() + 66 + j * 11, base.data() + 66 + j * 11, 11 * sizeof(double)) != 0);
            }
        }
    }

    TEST_CASE("errors") {
        auto m = Model<double>::init(tiny_config());
        Graph<double> g;
        const auto bound = m.bind(g);
        CHECK_THROWS_AS(m.forward(g, bound, std::vector<int>{1, 11}, 1, 2), IndexError);
        CHECK_THROWS_AS(m.forward(g, bound, std::vector<int>(7, 0), 1, 7), DimensionError);
        CHECK_THROWS_AS(m.forward(g, bound, std::vector<int>(5, 0), 2, 3), DimensionError);
        Graph<double> other;
        CHECK_THROWS_AS(m.forward(other, {}, std::vector<int>{1}, 1, 1), ContractError);
    }

    TEST_CASE("deterministic") {
        auto m = Model<double>::init(tiny_config());
        const std::vector<int> tokens{1, 2, 3, 4, 5, 6};
        const auto a = logits_of(m, tokens, 1, 6), b = logits_of(m, tokens, 1, 6);
        CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
    }

    TEST_CASE("full-model gradient matches finite differences") {
        for (bool tied : {false, true}) {
            CAPTURE(tied);
            auto m = Model<double>::init(tiny_config(2, 8, 11, tied));
            const std::vector<int> tokens{1, 4, 7, 2, 9, 5, 0, 3, 8, 6, 10, 1};
            const std::vector<int> targets{4, 7, 2, 9, 5, 0, 3, 8, 6, 10, 1, 2};
            auto loss = [&](Graph<double>& g, const std::vector<Var>& bound) {
                const Var h = m.hidden_states(g, bound, tokens, 2, 6);
                return head::build_head_loss(g, m.output_table_var(bound), h, targets,
                                             head::HeadStrategy{head::HeadKind::z_loss, 1e-2, 30.0})
                    .loss;
            };
            m.zero_grad();
            {
                Graph<double> g;
                const auto bound = m.bind(g);
                g.backward(loss(g, bound));
            }
            double worst = 0.0;
            for (auto& p : m.parameters()) {
                std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
                std::vector<double> x(p.tensor.values().begin(), p.tensor.values().end());
                auto f = [&] {
                    std::copy(x.begin(), x.end(), p.tensor.values().begin());
                    Graph<double> g(false);
                    const auto bound = m.bind(g);
                    return g.value(loss(g, bound))[0];
                };
                const auto numeric = oracle::central_difference(f, x, 1e-6);
                std::copy(x.begin(), x.end(), p.tensor.values().begin());
                const double err = oracle::gradient_error(analytic, numeric);
                CAPTURE(p.name);
                CHECK(err <= 1e-4);
                worst = std::max(worst, err);
            }
            MESSAGE("worst gradient error " << worst);
        }
    }
}

TEST_SUITE("checkpoint") {
    const std::filesystem::path tmp = std::filesystem::path(LOGITLAB_TEST_TMP) / "model";

    TEST_CASE("round trip restores values and config") {
        for (bool tied : {false, true}) {
            auto m = Model<float>::init(tiny_config(2, 8, 11, tied));
            const auto dir = tmp / (tied ? "tied" : "untied");
            std::filesystem::remove_all(dir);
            model::save_checkpoint(dir, m, 17, nlohmann::json{{"note", "x"}});
            const auto ck = model::load_checkpoint(dir);
            CHECK(ck.step == 17);
            CHECK(ck.config == m.config());
            CHECK(ck.manifest["config"]["note"] == "x");
            REQUIRE(ck.tensors.size() == m.parameters().size());
            for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
                CHECK(ck.tensors[i].name == m.parameters()[i].name);
                const auto& t = m.parameters()[i].tensor;
                CHECK(std::memcmp(ck.tensors[i].tensor.data(), t.data(), t.size() * sizeof(float)) == 0);
            }
            CHECK(std::memcmp(ck.output_table().data(), m.output_table().data(),
                              m.output_table().size() * sizeof(float)) == 0);

            auto fresh_config = m.config();
            fresh_config.seed = 99;
            auto fresh = Model<double>::init(fresh_config);
            fresh.load_values(ck.tensors);
            for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
                const auto& t = m.parameters()[i].tensor;
                for (std::size_t k = 0; k < t.size(); ++k) {
                    CHECK(fresh.parameters()[i].tensor[k] == static_cast<double>(t[k]));
                }
            }
        }
    }

    TEST_CASE("missing and corrupt checkpoints") {
        CHECK_THROWS_AS(model::load_checkpoint(tmp / "nowhere"), IoError);
        auto m = Model<float>::init(tiny_config());
        const auto dir = tmp / "corrupt";
        std::filesystem::remove_all(dir);
        model::save_checkpoint(dir, m, 1, nlohmann::json::object());
        std::filesystem::resize_file(dir / model::kPayloadFile, 10);
        CHECK_THROWS_AS(model::load_checkpoint(dir), IoError);
    }

    TEST_CASE("load_values rejects mismatched shapes and missing names") {
        auto m = Model<double>::init(tiny_config());
        auto params = Model<float>::init(tiny_config(2, 8, 13)).parameters();
        CHECK_THROWS_AS(m.load_values(params), DimensionError);
        params.pop_back();
        auto same = Model<float>::init(tiny_config()).parameters();
        same.erase(same.begin());
        CHECK_THROWS_AS(m.load_values(same), DataError);
    }
}

TEST_SUITE("training dynamics") {
    // The cross-entropy gradient of an untied output table has zero column
    // mean and does not depend on mu, so with no weight decay AdamW moves the
    // baseline and the centered table identically apart from the mean row.
    TEST_CASE("untied baseline and mu_center follow the same loss trajectory") {
        std::mt19937_64 rng(21);
        std::vector<int> tokens(2 * 6), targets(2 * 6);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            tokens[i] = static_cast<int>(oracle::uniform_index(rng, 0, 10));
            targets[i] = static_cast<int>(oracle::uniform_index(rng, 0, 10));
        }
        optim::OptimConfig oc;
        oc.peak_lr = 0.05;
        auto trajectory = [&](bool center) {
            auto m = Model<double>::init(tiny_config());
            if (center) {
                head::mu_center_in_place(m.output_table());
            }
            std::vector<Tensor<double>*> params;
            for (auto& p : m.parameters()) {
                params.push_back(&p.tensor);
            }
            optim::OptimState<double> state;
            std::vector<double> losses;
            for (int step = 0; step < 30; ++step) {
                m.zero_grad();
                Graph<double> g;
                const auto bound = m.bind(g);
                const Var h = m.hidden_states(g, bound, tokens, 2, 6);
                const Var loss = head::build_head_loss(g, m.output_table_var(bound), h, targets, head::HeadStrategy{}).loss;
                losses.push_back(g.value(loss)[0]);
                g.backward(loss);
                optim::clip_global_norm<double>(params, oc.clip_norm);
                optim::adamw_step<double>(params, state, oc.peak_lr, oc);
                if (center) {
                    head::mu_center_in_place(m.output_table());
                }
            }
            const auto mu = head::mean_embedding(m.output_table());
            return std::pair{losses, std::sqrt(oracle::dot(mu, mu))};
        };
        const auto [base, base_mu] = trajectory(false);
        const auto [cent, cent_mu] = trajectory(true);
        CHECK(base.back() < base.front() - 0.5);
        for (std::size_t i = 0; i < base.size(); ++i) {
            CHECK(cent[i] == doctest::Approx(base[i]).epsilon(1e-9));
        }
        CHECK(base_mu > 0.1);
        CHECK(cent_mu < 1e-12);
    }
}
