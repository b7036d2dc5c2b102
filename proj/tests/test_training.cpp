#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mdiff/rng.hpp"
#include "mdiff/training.hpp"
#include "mdiff/vocab.hpp"

using namespace mdiff;

namespace {

const Vocab kVocab = build_vocab("abcdefghijklmnopqrstuvwxyz");

Tensor<double> uniform_probs(int len, int vocab) {
    Tensor<double> p({len, vocab});
    std::fill(p.v.begin(), p.v.end(), 1.0 / vocab);
    return p;
}

Tensor<double> onehot_probs(const TokenSeq& y, int vocab) {
    Tensor<double> p({int(y.size()), vocab});
    for (size_t i = 0; i < y.size(); ++i) p.v[i * size_t(vocab) + size_t(y[i])] = 1.0;
    return p;
}

}  // namespace

TEST_CASE("denoising loss closed forms") {
    TokenSeq y = {0, 1, 2, 3};
    MaskPattern pat;
    pat.masked = {1, 0, 1, 0};

    CHECK(denoising_loss(onehot_probs(y, 96), y, pat) == 0.0);

    const double ln96 = std::log(96.0);
    CHECK(std::abs(denoising_loss(uniform_probs(4, 96), y, pat) - ln96) < 1e-6);
    CHECK(ln96 == doctest::Approx(4.5643).epsilon(1e-4));

    // a single masked position at probability one half
    Tensor<double> p = onehot_probs(y, 96);
    MaskPattern one;
    one.masked = {0, 1, 0, 0};
    p.v[1 * 96 + 1] = 0.5;
    CHECK(denoising_loss(p, y, one) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    MaskPattern none;
    none.masked = {0, 0, 0, 0};
    CHECK_THROWS_AS(denoising_loss(p, y, none), std::invalid_argument);
}

TEST_CASE("denoising loss ignores unmasked positions exactly") {
    TokenSeq y = {0, 1, 2, 3};
    MaskPattern pat;
    pat.masked = {1, 0, 1, 0};
    Tensor<double> p = uniform_probs(4, 96);
    const double base = denoising_loss(p, y, pat);
    p.v[1 * 96 + 1] = 1e-9;  // unmasked position, arbitrary perturbation
    p.v[3 * 96 + 0] = 0.7;
    CHECK(denoising_loss(p, y, pat) == base);
}

TEST_CASE("correction loss closed forms and equivariance") {
    TokenSeq y = {0, 1, 2, 3};
    CHECK(correction_loss(onehot_probs(y, 96), y) == 0.0);
    CHECK(std::abs(correction_loss(uniform_probs(4, 96), y) - std::log(96.0)) < 1e-6);

    // half positions at probability 1, half at e^-1
    Tensor<double> p = onehot_probs(y, 96);
    p.v[0 * 96 + 0] = std::exp(-1.0);
    p.v[2 * 96 + 2] = std::exp(-1.0);
    CHECK(correction_loss(p, y) == doctest::Approx(0.5).epsilon(1e-12));

    // permuting positions together with targets leaves the loss unchanged
    Tensor<double> q({4, 96});
    Rng rng(3);
    for (auto& v : q.v) v = 0.01 + rng.uniform();
    TokenSeq yp = {2, 3, 0, 1};
    Tensor<double> qp({4, 96});
    const std::vector<int> perm = {2, 3, 0, 1};
    for (int i = 0; i < 4; ++i) {
        for (int c = 0; c < 96; ++c) {
            qp.v[size_t(i) * 96 + size_t(c)] = q.v[size_t(perm[size_t(i)]) * 96 + size_t(c)];
        }
    }
    CHECK(correction_loss(q, y) ==
          doctest::Approx(correction_loss(qp, TokenSeq{y[2], y[3], y[0], y[1]})).epsilon(1e-12));
}

TEST_CASE("total_loss equals the per-example reference recomputation") {
    ModelConfig cfg;
    cfg.max_len = 4;
    cfg.vocab_size = 6;
    cfg.dim = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.ffn_dim = 16;
    cfg.feat_len = 4;
    Params<double> params = init_params<double>(cfg, 5);
    Rng rng(6);

    std::vector<TrainExample<double>> batch(2);
    batch[0].target = {0, 1, 2, 5};
    batch[0].input = {0, 4, 2, 4};
    batch[0].pattern.masked = {0, 1, 0, 1};
    batch[0].branch = Branch::Denoising;
    batch[0].feat = Tensor<double>({4, 8});
    for (auto& v : batch[0].feat.v) v = rng.normal();
    batch[1].target = {3, 1, 5, 5};
    batch[1].input = {3, 2, 5, 5};
    batch[1].pattern.masked = {0, 0, 0, 0};
    batch[1].branch = Branch::Correction;
    batch[1].feat = Tensor<double>({4, 8});
    for (auto& v : batch[1].feat.v) v = rng.normal();

    Workspace<double> ws(cfg);
    LossParts<double> parts = total_loss(params, batch, ws);

    auto r0 = run_forward(params, batch[0].feat, batch[0].input, 4);
    auto r1 = run_forward(params, batch[1].feat, batch[1].input, 4);
    const double expect_d = denoising_loss(r0.probs, batch[0].target, batch[0].pattern);
    const double expect_c = correction_loss(r1.probs, batch[1].target);
    CHECK(parts.denoising == doctest::Approx(expect_d).epsilon(1e-12));
    CHECK(parts.correction == doctest::Approx(expect_c).epsilon(1e-12));
    CHECK(parts.total() == doctest::Approx(expect_d + expect_c).epsilon(1e-12));
}

TEST_CASE("lr schedule endpoints") {
    TrainConfig cfg;
    cfg.lr = 5e-4;
    cfg.warmup_steps = 100;
    cfg.total_steps = 1000;
    CHECK(lr_schedule(0, cfg) == 0.0);
    CHECK(lr_schedule(100, cfg) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_schedule(50, cfg) == doctest::Approx(2.5e-4).epsilon(1e-12));
    CHECK(std::abs(lr_schedule(999, cfg)) < 5e-4);
    CHECK(std::abs(lr_schedule(1000, cfg)) < 1e-9);
    CHECK(lr_schedule(5000, cfg) == 0.0);
    CHECK_THROWS_AS(lr_schedule(-1, cfg), std::invalid_argument);
}

TEST_CASE("adamw fixed point and decoupled decay") {
    ModelConfig cfg;
    cfg.max_len = 2;
    cfg.vocab_size = 4;
    cfg.dim = 4;
    cfg.n_layers = 1;
    cfg.n_heads = 1;
    cfg.ffn_dim = 8;
    cfg.feat_len = 2;
    Params<float> params = init_params<float>(cfg, 9);
    Params<float> zero_grads = Params<float>::zeros_like(params);
    OptState opt = OptState::init(params);

    Params<float> before = params;
    adamw_step(params, zero_grads, opt, 1e-3, 0.0);
    std::vector<const Tensor<float>*> pa, pb;
    params.for_each([&pa](const std::string&, const Tensor<float>& t) { pa.push_back(&t); });
    before.for_each([&pb](const std::string&, const Tensor<float>& t) { pb.push_back(&t); });
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->v == pb[i]->v);

    // with decay 0.05 and zero gradients every parameter shrinks by (1 - lr * 0.05)
    adamw_step(params, zero_grads, opt, 1e-3, 0.05);
    const float factor = 1.0f - float(1e-3 * 0.05);
    for (size_t i = 0; i < pa.size(); ++i) {
        for (size_t j = 0; j < pa[i]->v.size(); ++j) {
            CHECK(pa[i]->v[j] == doctest::Approx(pb[i]->v[j] * factor).epsilon(1e-6));
        }
    }

    Params<float> bad = Params<float>::zeros_like(params);
    bad.cls_b.v[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(adamw_step(params, bad, opt, 1e-3, 0.0), std::runtime_error);
}

TEST_CASE("correction branch draws replacement counts uniformly") {
    std::vector<std::string> lexicon = {"uniformity"};
    Dataset data = gen_dataset(lexicon, 4, CorruptionConfig{}, 3, 0, kVocab, 10, 16);
    ModelConfig mcfg;
    mcfg.max_len = 10;
    mcfg.vocab_size = kVocab.size();
    mcfg.dim = 16;
    mcfg.n_layers = 1;
    mcfg.n_heads = 2;
    mcfg.ffn_dim = 32;
    mcfg.feat_len = 10;
    Params<float> params = init_params<float>(mcfg, 4);
    Workspace<float> ws(mcfg);

    TrainConfig tcfg;
    tcfg.branch_correction_prob = 1.0;
    tcfg.trn_enabled = true;
    std::vector<int> counts(11, 0);
    const int trials = 100000;
    for (int t = 0; t < trials; ++t) {
        auto ex = assemble_example(data, kVocab, tcfg, params, ws, 77, t, 0, nullptr);
        REQUIRE(ex.has_value());
        CHECK(ex->branch == Branch::Correction);
        int l2 = 0;
        for (size_t i = 0; i < ex->target.size(); ++i) l2 += ex->input[i] != ex->target[i];
        ++counts[size_t(l2)];
    }
    // chi-square over l2 in [0, 10], df = 10, p = 0.001 critical value
    double stat = 0;
    const double expected = double(trials) / 11;
    for (int c : counts) stat += (c - expected) * (c - expected) / expected;
    CHECK(stat < 29.588);
}

TEST_CASE("train loop is reproducible and can memorize a tiny set") {
    const std::vector<std::string> lexicon = {"mask",  "grid", "word", "char", "step",
                                              "block", "conf", "pads", "text", "node"};
    Dataset data = gen_dataset(lexicon, 50, CorruptionConfig{}, 123, 0, kVocab, 8, 64);

    ModelConfig mcfg;
    mcfg.max_len = 8;
    mcfg.vocab_size = kVocab.size();
    mcfg.dim = 64;
    mcfg.n_layers = 1;
    mcfg.n_heads = 2;
    mcfg.ffn_dim = 128;
    mcfg.feat_len = 8;

    TrainConfig tcfg;
    tcfg.lr = 1e-2;
    tcfg.warmup_steps = 10;
    tcfg.total_steps = 200;
    tcfg.batch_size = 50;
    tcfg.ckpt_every = 0;
    tcfg.blc_steps = 2;

    double last_total = 1e9;
    MetricsSink sink = [&last_total](const StepMetrics& m) {
        last_total = m.loss_d + m.loss_c;
    };
    Params<float> trained = train_loop(mcfg, tcfg, data, kVocab, 11, 1, sink);
    CHECK(last_total < 0.1);

    // reproducibility: a short single-threaded rerun is bit-identical
    TrainConfig short_cfg = tcfg;
    short_cfg.total_steps = 20;
    Params<float> a = train_loop(mcfg, short_cfg, data, kVocab, 11, 1);
    Params<float> b = train_loop(mcfg, short_cfg, data, kVocab, 11, 1);
    std::vector<const Tensor<float>*> ta, tb;
    a.for_each([&ta](const std::string&, const Tensor<float>& t) { ta.push_back(&t); });
    b.for_each([&tb](const std::string&, const Tensor<float>& t) { tb.push_back(&t); });
    for (size_t i = 0; i < ta.size(); ++i) CHECK(ta[i]->v == tb[i]->v);

    // a trained model separates two fully masked inputs by their grids
    const Sample* s0 = nullptr;
    const Sample* s1 = nullptr;
    for (const Sample& s : data.samples) {
        if (!s0) {
            s0 = &s;
        } else if (s.text != s0->text) {
            s1 = &s;
            break;
        }
    }
    REQUIRE(s1 != nullptr);
    const std::vector<int> masked(8, kVocab.mask_id);
    auto r0 = run_forward(trained, s0->grid.values, masked, kVocab.mask_id);
    auto r1 = run_forward(trained, s1->grid.values, masked, kVocab.mask_id);
    CHECK(decode(r0.pred.ids, kVocab) == s0->text);
    CHECK(decode(r1.pred.ids, kVocab) == s1->text);
    CHECK(decode(r0.pred.ids, kVocab) != decode(r1.pred.ids, kVocab));
}
