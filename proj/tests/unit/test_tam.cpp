#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "tamms/core/errors.hpp"
#include "tamms/tam/tam.hpp"
#include "test_util.hpp"

using namespace tamms;
using namespace tamms::tam;

namespace {

std::string read_fixture(const std::string& name) {
    std::ifstream in(std::string(TAMMS_FIXTURE_DIR) + "/prompts/" + name, std::ios::binary);
    if (!in) throw std::runtime_error("missing fixture " + name);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ParamStore pte_store(std::size_t d_tok, std::size_t hidden, std::uint64_t seed) {
    ParamStore store;
    Rng rng(seed);
    register_pte_params(store, "pte", {d_tok, hidden}, rng);
    return store;
}

Tensor embed(ParamStore& store, double days) {
    return test::eval([&](Tape& t) { return pte_embed(t, days, bind_pte_params(t, store, "pte")); });
}

}  // namespace

TEST(Phi, ZeroGap) { EXPECT_EQ(phi_featurize(0.0), Tensor::vector({0, 0, 1, 0, 1, 0})); }

TEST(Phi, FullYearPeriod) {
    Tensor p = phi_featurize(365.25);
    EXPECT_NEAR(p[1], 0.0, 1e-9);
    EXPECT_NEAR(p[2], 1.0, 1e-9);
}

TEST(Phi, HundredDaysClosedForm) {
    Tensor p = phi_featurize(100.0);
    const double pi = 3.14159265358979323846;
    EXPECT_DOUBLE_EQ(p[0], std::log(101.0));
    EXPECT_NEAR(p[1], std::sin(200.0 * pi / 365.25), 1e-15);
    EXPECT_NEAR(p[2], std::cos(200.0 * pi / 365.25), 1e-15);
    EXPECT_NEAR(p[3], std::sin(200.0 * pi / 30.44), 1e-15);
    EXPECT_NEAR(p[4], std::cos(200.0 * pi / 30.44), 1e-15);
    EXPECT_DOUBLE_EQ(p[5], 100.0 / 3650.0);
    EXPECT_EQ(phi_featurize(10000.0)[5], 1.0);
}

TEST(Phi, RejectsNegativeAndNonFinite) {
    EXPECT_THROW(phi_featurize(-1.0), DomainError);
    EXPECT_THROW(phi_featurize(std::nan("")), DomainError);
    EXPECT_THROW(phi_featurize(INFINITY), DomainError);
}

TEST(Pte, ZeroMlpReturnsBaseToken) {
    ParamStore store = pte_store(8, 5, 1);
    for (const char* n : {"pte.mlp.w1", "pte.mlp.b1", "pte.mlp.w2", "pte.mlp.b2"}) store.mutable_value(n).fill(0.0);
    for (double days : {0.0, 1.0, 400.0, 3000.0}) EXPECT_EQ(embed(store, days), store.value("pte.base_token"));
}

TEST(Pte, EqualGapsEqualTokens) {
    ParamStore store = pte_store(8, 5, 2);
    EXPECT_EQ(embed(store, 123.0), embed(store, 123.0));
}

TEST(Pte, IdentityMlpReproducesPhi) {
    ParamStore store = pte_store(6, 6, 3);
    store.mutable_value("pte.base_token").fill(0.0);
    store.mutable_value("pte.mlp.b1").fill(0.0);
    store.mutable_value("pte.mlp.b2").fill(0.0);
    Tensor eye(Shape{6, 6});
    for (std::size_t i = 0; i < 6; ++i) eye.at({i, i}) = 1.0;
    store.mutable_value("pte.mlp.w1") = eye;
    store.mutable_value("pte.mlp.w2") = eye;
    EXPECT_EQ(embed(store, 0.0), Tensor::vector({0, 0, 1, 0, 1, 0}));
}

TEST(Pte, InjectiveOnGrid) {
    ParamStore store = pte_store(16, 16, 4);
    std::vector<Tensor> outs;
    for (int i = 0; i < 100; ++i) outs.push_back(embed(store, 11.0 * i + 0.5 * i * i));
    for (std::size_t i = 0; i < outs.size(); ++i)
        for (std::size_t j = i + 1; j < outs.size(); ++j) {
            EXPECT_GT(test::max_abs_diff(outs[i], outs[j]), 1e-9) << i << " vs " << j;
        }
}

TEST(Pte, ParametersInSemanticTemporalPartition) {
    ParamStore store;
    Rng rng(0);
    TamConfig cfg;
    register_tam_params(store, cfg, rng);
    for (const auto& [name, e] : store) {
        if (name == "tam.visual.weight") {
            EXPECT_EQ(e.partition, Partition::kFrozen);
        } else {
            EXPECT_EQ(e.partition, Partition::kSemanticTemporal) << name;
        }
    }
}

TEST(Interleave, DegenerateSingleVisual) {
    ParamStore store = pte_store(4, 4, 5);
    Tape t(Tape::Mode::kInference);
    Var v = t.constant(Tensor::vector({1, 2, 3, 4}));
    TokenSequence seq = interleave_tokens(t, {v}, {}, bind_pte_params(t, store, "pte"));
    ASSERT_EQ(seq.size(), 1u);
    EXPECT_EQ(seq.kinds[0], TokenKind::kVisual);
    EXPECT_EQ(seq.items[0].id, v.id);
}

TEST(Interleave, TemporalItemsMatchIndependentEmbedding) {
    ParamStore store = pte_store(4, 3, 6);
    Rng rng(1);
    Tape t(Tape::Mode::kInference);
    std::vector<Var> vis;
    for (int i = 0; i < 3; ++i) vis.push_back(t.constant(rng.normal_tensor({4})));
    TokenSequence seq = interleave_tokens(t, vis, {365.0, 730.0}, bind_pte_params(t, store, "pte"));
    ASSERT_EQ(seq.size(), 5u);
    EXPECT_TRUE(is_alternating(seq));
    EXPECT_EQ(t.value(seq.items[1]), embed(store, 365.0));
    EXPECT_EQ(t.value(seq.items[3]), embed(store, 730.0));
    EXPECT_EQ(seq.items[2].id, vis[1].id);
}

TEST(Interleave, AlternationPropertyOverRandomLengths) {
    ParamStore store = pte_store(3, 3, 7);
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.index(10);
        Tape t(Tape::Mode::kInference);
        std::vector<Var> vis;
        std::vector<double> gaps;
        for (std::size_t i = 0; i < n; ++i) vis.push_back(t.constant(rng.normal_tensor({3})));
        for (std::size_t i = 1; i < n; ++i) gaps.push_back(rng.uniform(0.0, 2000.0));
        TokenSequence seq = interleave_tokens(t, vis, gaps, bind_pte_params(t, store, "pte"));
        EXPECT_EQ(seq.size(), 2 * n - 1);
        EXPECT_TRUE(is_alternating(seq));
    }
}

TEST(Interleave, LengthMismatchIsArityError) {
    ParamStore store = pte_store(3, 3, 9);
    Tape t(Tape::Mode::kInference);
    Var v = t.constant(Tensor({3}));
    auto pte = bind_pte_params(t, store, "pte");
    EXPECT_THROW(interleave_tokens(t, {v, v}, {}, pte), ArityError);
    EXPECT_THROW(interleave_tokens(t, {v}, {1.0}, pte), ArityError);
    EXPECT_THROW(interleave_tokens(t, {}, {}, pte), ArityError);
}

TEST(CtpPrompt, GoldenFiles) {
    EXPECT_EQ(build_ctp_prompt("airport", 3), read_fixture("ctp_airport_n3.txt"));
    EXPECT_EQ(build_ctp_prompt("x", 2), read_fixture("ctp_x_n2.txt"));
    EXPECT_EQ(build_ctp_prompt("airport", 5), read_fixture("ctp_airport_n5.txt"));
}

TEST(CtpPrompt, MatchesShippedTemplateWithScenePlaceholder) {
    std::string tmpl = read_fixture("p_ours.txt");
    EXPECT_EQ(build_ctp_prompt("[Scene Description]", 2).substr(14), tmpl.substr(std::string("<image>...<image>").size()));
}

TEST(CtpPrompt, RejectsBadArguments) {
    EXPECT_THROW(build_ctp_prompt("", 3), DomainError);
    EXPECT_THROW(build_ctp_prompt("airport", 1), DomainError);
    EXPECT_THROW(build_ctp_prompt("airport", 0), DomainError);
}

TEST(CtpPrompt, PromptVariantsShipped) {
    EXPECT_EQ(read_fixture("p_short.txt"), "Describe the changes in the satellite images.");
    EXPECT_NE(read_fixture("p_verbose.txt").find("hydrological features"), std::string::npos);
}

namespace {

double combine(double lt, double lp, double wt, double wp) {
    return test::eval([&](Tape& t) {
               return combine_losses(t, t.constant(Tensor::scalar(lt)), t.constant(Tensor::scalar(lp)), wt, wp);
           })
        .item();
}

}  // namespace

TEST(CombineLosses, Examples) {
    EXPECT_EQ(combine(5, 9, 1, 0), 5.0);
    EXPECT_EQ(combine(2, 4, 0.5, 0.5), 3.0);
    EXPECT_EQ(combine(0, 0, 0.3, 7.0), 0.0);
    EXPECT_THROW(combine(1, 1, -0.1, 1), ConfigError);
    EXPECT_THROW(combine(1, 1, 1, -2), ConfigError);
    EXPECT_THROW(combine(NAN, 1, 1, 1), DomainError);
}

TEST(CombineLosses, GradientsAreTheWeights) {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const double wt = rng.uniform(0, 3), wp = rng.uniform(0, 3);
        Tape t;
        Var a = t.variable(Tensor::scalar(rng.normal()));
        Var b = t.variable(Tensor::scalar(rng.normal()));
        t.backward(combine_losses(t, a, b, wt, wp));
        EXPECT_EQ(t.grad(a).item(), wt);
        EXPECT_EQ(t.grad(b).item(), wp);
    }
}

TEST(TemporalSmoothness, MeanSquaredStepBetweenTemporalTokens) {
    Tape t(Tape::Mode::kInference);
    TokenSequence seq;
    auto push = [&](TokenKind k, std::vector<double> v) {
        seq.kinds.push_back(k);
        seq.items.push_back(t.constant(Tensor::vector(std::move(v))));
    };
    push(TokenKind::kVisual, {9, 9});
    push(TokenKind::kTemporal, {0, 0});
    push(TokenKind::kVisual, {9, 9});
    push(TokenKind::kTemporal, {1, 3});
    push(TokenKind::kVisual, {9, 9});
    push(TokenKind::kTemporal, {1, 1});
    push(TokenKind::kVisual, {9, 9});
    // Steps (1,3) and (0,-2): mean squared error 5 and 2, averaged -> 3.5.
    EXPECT_EQ(t.value(temporal_smoothness_loss(t, seq)).item(), 3.5);
    TokenSequence single;
    single.kinds = {TokenKind::kVisual};
    single.items = {seq.items[0]};
    EXPECT_EQ(t.value(temporal_smoothness_loss(t, single)).item(), 0.0);
}

TEST(Summarize, IdenticalItemsPoolToThatItem) {
    ParamStore store;
    Rng rng(4);
    register_summarizer_params(store, "sum", {5, 7}, rng);
    store.mutable_value("sum.query") = rng.normal_tensor({5});
    // Identity-like projection on the first five outputs exposes the pooled value.
    Tensor w(Shape{5, 7});
    for (std::size_t i = 0; i < 5; ++i) w.at({i, i}) = 1.0;
    store.mutable_value("sum.proj.w") = w;
    Tensor item = rng.normal_tensor({5});
    Tape t(Tape::Mode::kInference);
    TokenSequence seq;
    for (int i = 0; i < 4; ++i) {
        seq.kinds.push_back(i % 2 ? TokenKind::kTemporal : TokenKind::kVisual);
        seq.items.push_back(t.constant(item));
    }
    Tensor out = t.value(summarize_sequence(t, seq, bind_summarizer_params(t, store, "sum")));
    ASSERT_EQ(out.shape(), Shape{7});
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(out[i], item[i], 1e-15);
    EXPECT_EQ(out[5], 0.0);
}

TEST(Summarize, ShapeDeterminismAndEmpty) {
    ParamStore store;
    Rng rng(5);
    TamConfig cfg;
    cfg.frame_shape = {4, 4, 3};
    cfg.pte = {6, 5};
    cfg.cond_dim = 9;
    register_tam_params(store, cfg, rng);
    std::vector<Tensor> frames;
    for (int i = 0; i < 3; ++i) frames.push_back(rng.uniform_tensor({4, 4, 3}, 0, 1));
    auto run = [&] {
        Tape t(Tape::Mode::kInference);
        return t.value(encode_sequence(t, store, cfg, frames, {0, 100, 500}).semantic);
    };
    Tensor a = run();
    EXPECT_EQ(a.shape(), Shape{9});
    EXPECT_EQ(a, run());

    // The horizon token changes M_t and depends on the gap to the target.
    auto run_to = [&](double target) {
        Tape t(Tape::Mode::kInference);
        TamOutput o = encode_sequence(t, store, cfg, frames, {0, 100, 500}, target);
        EXPECT_EQ(o.tokens.size(), 5u);
        return t.value(o.semantic);
    };
    EXPECT_GT(test::max_abs_diff(run_to(600), a), 0.0);
    EXPECT_GT(test::max_abs_diff(run_to(600), run_to(1500)), 0.0);
    EXPECT_EQ(run_to(600), run_to(600));
    Tape bad(Tape::Mode::kInference);
    EXPECT_THROW(encode_sequence(bad, store, cfg, frames, {0, 100, 500}, 500.0), DomainError);

    Tape t(Tape::Mode::kInference);
    EXPECT_THROW(summarize_sequence(t, TokenSequence{}, bind_summarizer_params(t, store, "tam.summarizer")),
                 DomainError);
}

TEST(TamGradient, EncodeSequenceMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ParamStore store;
        Rng rng(seed);
        TamConfig cfg;
        cfg.frame_shape = {2 + rng.index(3), 2 + rng.index(3), 1 + rng.index(3)};
        cfg.pte = {2 + rng.index(4), 2 + rng.index(4)};
        cfg.cond_dim = 1 + rng.index(5);
        register_tam_params(store, cfg, rng);
        store.mutable_value("tam.summarizer.query") = rng.normal_tensor({cfg.pte.token_dim});
        const std::size_t n = 2 + rng.index(3);
        std::vector<Tensor> frames;
        std::vector<double> ts;
        for (std::size_t i = 0; i < n; ++i) {
            frames.push_back(rng.uniform_tensor(cfg.frame_shape, 0, 1));
            ts.push_back(i == 0 ? 0.0 : ts.back() + std::floor(rng.uniform(30, 1100)));
        }
        store.set_trainable(Partition::kSemanticTemporal, true);
        auto f = [&](Tape& t, ParamStore& s) {
            TamOutput o = encode_sequence(t, s, cfg, frames, ts, ts.back() + 90.0 * (1 + seed % 4));
            return ops::add(t, test::probe(t, o.semantic, seed), temporal_smoothness_loss(t, o.tokens));
        };
        FiniteDiffReport r = finite_diff_check(f, store, {.samples = 12, .seed = seed});
        EXPECT_LT(r.max_rel_error, 1e-5) << "seed " << seed << " " << r.worst_parameter;
    }
}
