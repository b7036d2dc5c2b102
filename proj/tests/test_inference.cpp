#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mdiff/inference.hpp"
#include "mdiff/noising.hpp"
#include "mdiff/rng.hpp"
#include "mdiff/synthetic.hpp"
#include "mdiff/vocab.hpp"

using namespace mdiff;

namespace {

const Vocab kVocab = build_vocab("abcdefghijklmnopqrstuvwxyz");

ModelConfig small_config(int len) {
    ModelConfig cfg;
    cfg.max_len = len;
    cfg.vocab_size = kVocab.size();
    cfg.dim = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.ffn_dim = 32;
    cfg.feat_len = len;
    return cfg;
}

// the independent left-to-right greedy reference decoder
TokenSeq reference_greedy(const Predictor& predict, int len, int mask_id) {
    TokenSeq committed(size_t(len), mask_id);
    StepPrediction last;
    for (int t = 0; t < len; ++t) {
        last = predict(committed);
        committed[size_t(t)] = last.ids[size_t(t)];
    }
    return last.ids;  // final pass re-read everywhere, as in the K-step loop
}

}  // namespace

TEST_CASE("blocks partitions left to right") {
    CHECK(blocks(6, 3) == std::vector<std::pair<int, int>>{{0, 2}, {2, 4}, {4, 6}});
    CHECK(blocks(5, 1) == std::vector<std::pair<int, int>>{{0, 5}});
    auto b = blocks(25, 3);
    CHECK(b[0].second - b[0].first == 9);
    CHECK(b[1].second - b[1].first == 8);
    CHECK(b[2].second - b[2].first == 8);
    CHECK(b[2].second == 25);
    CHECK_THROWS_AS(blocks(2, 3), std::invalid_argument);
    CHECK_THROWS_AS(blocks(4, 0), std::invalid_argument);
}

TEST_CASE("make_policy pins step counts") {
    CHECK(make_policy(PolicyKind::PD, 99, 12).steps == 1);
    CHECK(make_policy(PolicyKind::AR, 1, 12).steps == 12);
    CHECK(make_policy(PolicyKind::Re, 2, 12).steps == 2);
    CHECK(make_policy(PolicyKind::LC, 3, 12).steps == 3);
    CHECK(make_policy(PolicyKind::BLC, 3, 12).steps == 3);
    CHECK_THROWS_AS(make_policy(PolicyKind::BLC, 13, 12), std::invalid_argument);
    CHECK_THROWS_AS(make_policy(PolicyKind::LC, 0, 12), std::invalid_argument);
}

TEST_CASE("init_state starts fully masked") {
    DenoiseState s = init_state(3, kVocab.mask_id);
    CHECK(s.current == TokenSeq{kVocab.mask_id, kVocab.mask_id, kVocab.mask_id});
    CHECK(decode(s.current, kVocab) == "␣M␣M␣M");
    int frozen = 0;
    for (uint8_t f : s.frozen) frozen += f;
    CHECK(frozen == 0);
}

TEST_CASE("remask applies the policy rules") {
    const int mask = kVocab.mask_id;

    SUBCASE("lc masks strictly below the global mean") {
        DenoiseState s = init_state(4, mask);
        s.preds = {0, 1, 2, 3};
        s.conf = {0.9f, 0.5f, 0.95f, 0.6f};  // mean 0.7375
        auto remasked = remask(s, make_policy(PolicyKind::LC, 3, 4), mask);
        CHECK(remasked == std::vector<uint8_t>{0, 1, 0, 1});
        CHECK(s.current == TokenSeq{0, mask, 2, mask});
    }

    SUBCASE("lc all-equal confidences are a fixed point") {
        DenoiseState s = init_state(4, mask);
        s.preds = {0, 1, 2, 3};
        s.conf = {0.5f, 0.5f, 0.5f, 0.5f};
        auto remasked = remask(s, make_policy(PolicyKind::LC, 3, 4), mask);
        CHECK(remasked == std::vector<uint8_t>{0, 0, 0, 0});
        CHECK(s.current == TokenSeq{0, 1, 2, 3});
        // identical predictions again: the input no longer changes
        auto again = remask(s, make_policy(PolicyKind::LC, 3, 4), mask);
        CHECK(again == std::vector<uint8_t>{0, 0, 0, 0});
        CHECK(s.current == TokenSeq{0, 1, 2, 3});
    }

    SUBCASE("blc touches only the scheduled block") {
        DenoiseState s = init_state(6, mask);
        s.preds = {0, 1, 2, 3, 4, 5};
        s.conf = {0.9f, 0.2f, 0.8f, 0.8f, 0.1f, 0.9f};
        auto remasked = remask(s, make_policy(PolicyKind::BLC, 3, 6), mask);
        CHECK(remasked == std::vector<uint8_t>{0, 1, 0, 0, 0, 0});
        CHECK(s.current == TokenSeq{0, mask, 2, 3, 4, 5});
        CHECK(s.frozen == std::vector<uint8_t>{1, 0, 0, 0, 0, 0});
    }

    SUBCASE("re keeps everything") {
        DenoiseState s = init_state(4, mask);
        s.preds = {0, 1, 2, 3};
        s.conf = {0.1f, 0.1f, 0.1f, 0.1f};
        auto remasked = remask(s, make_policy(PolicyKind::Re, 2, 4), mask);
        CHECK(remasked == std::vector<uint8_t>{0, 0, 0, 0});
        CHECK(s.current == TokenSeq{0, 1, 2, 3});
    }

    SUBCASE("remask past the last step is rejected") {
        DenoiseState s = init_state(4, mask);
        s.step = 3;
        CHECK_THROWS_AS(remask(s, make_policy(PolicyKind::LC, 3, 4), mask), std::logic_error);
    }
}

TEST_CASE("ar run commits one position per step") {
    const int mask = kVocab.mask_id;
    // a stub predictor with fixed output
    Predictor fixed = [](const std::vector<int>& input) {
        StepPrediction p;
        p.ids = {2, 0, 19, 18};  // "cats"
        p.conf.assign(4, 0.9f);
        (void)input;
        return p;
    };
    RunResult r = run(fixed, make_policy(PolicyKind::AR, 0, 4), 4, mask);
    REQUIRE(r.trace.size() == 4);
    // masked-position counts across step inputs: 4, 3, 2, 1
    for (int step = 0; step < 4; ++step) {
        int masked = 0;
        for (int id : r.trace[size_t(step)].input) masked += id == mask;
        CHECK(masked == 4 - step);
    }
    CHECK(decode(r.output, kVocab) == "cats");
    CHECK(r.forward_count == 4);
}

TEST_CASE("run outputs never contain the mask token") {
    ModelConfig cfg = small_config(8);
    Params<float> params = init_params<float>(cfg, 7);  // untrained on purpose
    Rng rng(9);
    for (uint64_t trial = 0; trial < 10; ++trial) {
        Tensor<float> feat({8, 16});
        for (auto& v : feat.v) v = float(rng.normal());
        Workspace<float> ws(cfg);
        Predictor pred = model_predictor(params, feat, ws, kVocab.mask_id);
        for (PolicyKind kind :
             {PolicyKind::PD, PolicyKind::AR, PolicyKind::Re, PolicyKind::LC, PolicyKind::BLC}) {
            RunResult r = run(pred, make_policy(kind, 3, 8), 8, kVocab.mask_id);
            for (int id : r.output) CHECK(id != kVocab.mask_id);
            CHECK(int(r.trace.size()) == make_policy(kind, 3, 8).steps);
        }
    }
}

TEST_CASE("pd is a single forward pass and re unfolds it") {
    ModelConfig cfg = small_config(6);
    Params<float> params = init_params<float>(cfg, 21);
    Rng rng(5);
    Tensor<float> feat({6, 16});
    for (auto& v : feat.v) v = float(rng.normal());
    Workspace<float> ws(cfg);
    Predictor pred = model_predictor(params, feat, ws, kVocab.mask_id);

    RunResult pd = run(pred, make_policy(PolicyKind::PD, 1, 6), 6, kVocab.mask_id);
    CHECK(pd.forward_count == 1);
    StepPrediction direct = pred(TokenSeq(6, kVocab.mask_id));
    CHECK(pd.output == direct.ids);

    // Re with two steps: the PD output re-fed once, unmasked
    RunResult re = run(pred, make_policy(PolicyKind::Re, 2, 6), 6, kVocab.mask_id);
    CHECK(re.forward_count == 2);
    CHECK(re.trace[1].input == pd.output);
    StepPrediction second = pred(pd.output);
    CHECK(re.output == second.ids);
}

TEST_CASE("ar equals the reference greedy decoder") {
    ModelConfig cfg = small_config(8);
    Rng rng(33);
    for (uint64_t m = 0; m < 5; ++m) {
        Params<float> params = init_params<float>(cfg, 100 + m);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor<float> feat({8, 16});
            for (auto& v : feat.v) v = float(rng.normal());
            Workspace<float> ws(cfg);
            Predictor pred = model_predictor(params, feat, ws, kVocab.mask_id);
            RunResult ar = run(pred, make_policy(PolicyKind::AR, 0, 8), 8, kVocab.mask_id);
            CHECK(ar.output == reference_greedy(pred, 8, kVocab.mask_id));
        }
    }
}

TEST_CASE("confidence trap: lc stagnates where blc remasks once") {
    // canned overconfident oracle: one position stays below the mean forever
    const int len = 16, steps = 8;
    const int trap = 5;
    Predictor oracle = [&](const std::vector<int>& input) {
        StepPrediction p;
        p.ids.assign(size_t(len), 2);
        p.conf.assign(size_t(len), 0.9f);
        p.conf[trap] = 0.2f;
        (void)input;
        return p;
    };

    RunResult lc = run(oracle, make_policy(PolicyKind::LC, steps, len), len, kVocab.mask_id);
    int lc_remasks = 0;
    for (int s = 0; s < steps - 1; ++s) {
        CHECK(lc.trace[size_t(s)].remasked[trap] == 1);
        int events = 0;
        for (uint8_t r : lc.trace[size_t(s)].remasked) events += r;
        CHECK(events == 1);  // only the trap position falls below the mean
        lc_remasks += lc.trace[size_t(s)].remasked[trap];
    }
    CHECK(lc_remasks == steps - 1);  // generation stagnation

    RunResult blc = run(oracle, make_policy(PolicyKind::BLC, steps, len), len, kVocab.mask_id);
    int blc_remasks = 0;
    for (const TraceStep& ts : blc.trace) blc_remasks += ts.remasked[trap];
    CHECK(blc_remasks <= 1);
    CHECK(blc_remasks == 1);  // its block's event catches it exactly once
}

TEST_CASE("blc never remasks a position twice") {
    // adversarial predictor: confidences change every call
    const int len = 12;
    uint64_t counter = 0;
    Predictor jitter = [&counter, len](const std::vector<int>& input) {
        Rng rng(counter++);
        StepPrediction p;
        p.ids.assign(size_t(len), 1);
        p.conf.resize(size_t(len));
        for (auto& c : p.conf) c = float(rng.uniform());
        (void)input;
        return p;
    };
    for (int steps : {2, 3, 4, 6}) {
        RunResult r = run(jitter, make_policy(PolicyKind::BLC, steps, len), len, kVocab.mask_id);
        std::vector<int> counts(size_t(len), 0);
        for (const TraceStep& ts : r.trace) {
            for (int i = 0; i < len; ++i) counts[size_t(i)] += ts.remasked[size_t(i)];
        }
        for (int c : counts) CHECK(c <= 1);
    }
}

TEST_CASE("run is deterministic") {
    ModelConfig cfg = small_config(8);
    Params<float> params = init_params<float>(cfg, 55);
    Rng rng(3);
    Tensor<float> feat({8, 16});
    for (auto& v : feat.v) v = float(rng.normal());
    Workspace<float> ws(cfg);
    Predictor pred = model_predictor(params, feat, ws, kVocab.mask_id);
    RunResult a = run(pred, make_policy(PolicyKind::BLC, 4, 8), 8, kVocab.mask_id);
    RunResult b = run(pred, make_policy(PolicyKind::BLC, 4, 8), 8, kVocab.mask_id);
    CHECK(a.output == b.output);
    for (size_t s = 0; s < a.trace.size(); ++s) {
        CHECK(a.trace[s].input == b.trace[s].input);
        CHECK(a.trace[s].preds == b.trace[s].preds);
    }
}

TEST_CASE("trace rendering is one record per step") {
    TraceStep ts;
    ts.step = 1;
    ts.input = {kVocab.mask_id, kVocab.mask_id};
    ts.preds = {2, 0};
    ts.conf = {0.25f, 0.5f};
    ts.remasked = {0, 1};
    const std::string line = format_trace_step(ts, kVocab);
    CHECK(line.find("\"step\":1") != std::string::npos);
    CHECK(line.find("␣M␣M") != std::string::npos);
    CHECK(line.find("\"pred\":\"ca\"") != std::string::npos);
    CHECK(line.find("\"remasked\":[1]") != std::string::npos);
}
