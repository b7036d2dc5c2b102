#include "mdiff/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

namespace mdiff {

template <typename T>
T denoising_loss(const Tensor<T>& probs, const TokenSeq& y, const MaskPattern& pattern) {
    const int l1 = pattern.count();
    if (l1 < 1) throw std::invalid_argument("denoising loss needs at least one masked position");
    const int V = probs.shape[1];
    T acc = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        if (!pattern.masked[i]) continue;
        acc -= std::log(probs.v[i * size_t(V) + size_t(y[i])]);
    }
    return acc / T(l1);
}

template <typename T>
T correction_loss(const Tensor<T>& probs, const TokenSeq& y) {
    const int V = probs.shape[1];
    T acc = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        acc -= std::log(probs.v[i * size_t(V) + size_t(y[i])]);
    }
    return acc / T(y.size());
}

namespace {

void warn_missing_branch(const char* which) {
    static bool warned_d = false, warned_c = false;
    bool& flag = which[0] == 'd' ? warned_d : warned_c;
    if (!flag) {
        std::fprintf(stderr, "warning: batch has no %s-branch examples; term set to 0\n", which);
        flag = true;
    }
}

template <typename T>
void count_branches(const std::vector<TrainExample<T>>& batch, int& n_d, int& n_c) {
    n_d = n_c = 0;
    for (const auto& ex : batch) (ex.branch == Branch::Denoising ? n_d : n_c)++;
    if (n_d == 0) warn_missing_branch("denoising");
    if (n_c == 0) warn_missing_branch("correction");
}

// Per-position NLL weights implementing mean-over-examples of each branch
// term; d_logits = weight * (softmax - onehot).
template <typename T>
LossParts<T> example_loss_and_dlogits(const TrainExample<T>& ex, Workspace<T>& ws, int n_d,
                                      int n_c, Tensor<T>* d_logits, T loss_scale) {
    const int L = int(ex.target.size());
    const int V = ws.cfg.vocab_size;
    LossParts<T> parts;
    T w_base;
    int l1 = 0;
    if (ex.branch == Branch::Denoising) {
        l1 = ex.pattern.count();
        if (l1 < 1) throw std::invalid_argument("denoising example with empty mask pattern");
        w_base = T(1) / (T(l1) * T(n_d));
        parts.denoising = denoising_loss(ws.probs, ex.target, ex.pattern) / T(n_d);
        parts.n_denoising = 1;
    } else {
        w_base = T(1) / (T(L) * T(n_c));
        parts.correction = correction_loss(ws.probs, ex.target) / T(n_c);
        parts.n_correction = 1;
    }
    if (d_logits) {
        d_logits->zero();
        for (int i = 0; i < L; ++i) {
            const bool supervised =
                ex.branch == Branch::Correction || ex.pattern.masked[size_t(i)];
            if (!supervised) continue;
            const T w = w_base * loss_scale;
            const T* pr = ws.probs.data() + size_t(i) * V;
            T* dr = d_logits->data() + size_t(i) * V;
            for (int c = 0; c < V; ++c) dr[c] = w * pr[c];
            dr[ex.target[size_t(i)]] -= w;
        }
    }
    return parts;
}

template <typename T>
void merge(LossParts<T>& into, const LossParts<T>& part) {
    into.denoising += part.denoising;
    into.correction += part.correction;
    into.n_denoising += part.n_denoising;
    into.n_correction += part.n_correction;
}

}  // namespace

template <typename T>
LossParts<T> total_loss(const Params<T>& params, const std::vector<TrainExample<T>>& batch,
                        Workspace<T>& ws) {
    int n_d, n_c;
    count_branches(batch, n_d, n_c);
    LossParts<T> parts;
    for (const auto& ex : batch) {
        forward(params, ex.feat, ex.input, ws);
        merge(parts, example_loss_and_dlogits<T>(ex, ws, std::max(n_d, 1), std::max(n_c, 1),
                                                 nullptr, T(1)));
    }
    return parts;
}

template <typename T>
LossParts<T> loss_and_grad(const Params<T>& params, const std::vector<TrainExample<T>>& batch,
                           Workspace<T>& ws, Params<T>& grads, T loss_scale) {
    int n_d, n_c;
    count_branches(batch, n_d, n_c);
    LossParts<T> parts;
    Tensor<T> d_logits({params.cfg.max_len, params.cfg.vocab_size});
    for (const auto& ex : batch) {
        forward(params, ex.feat, ex.input, ws);
        merge(parts, example_loss_and_dlogits<T>(ex, ws, std::max(n_d, 1), std::max(n_c, 1),
                                                 &d_logits, loss_scale));
        backward(params, ex.feat, ex.input, ws, d_logits, grads);
    }
    return parts;
}

double lr_schedule(int step, const TrainConfig& cfg) {
    if (step < 0) throw std::invalid_argument("negative step");
    if (step >= cfg.total_steps) return 0.0;
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
        return cfg.lr * double(step) / double(cfg.warmup_steps);
    }
    const double progress =
        double(step - cfg.warmup_steps) / double(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

OptState OptState::init(const Params<float>& params) {
    OptState s;
    s.m = Params<float>::zeros_like(params);
    s.v = Params<float>::zeros_like(params);
    s.t = 0;
    return s;
}

void adamw_step(Params<float>& params, const Params<float>& grads, OptState& opt, double lr,
                double weight_decay) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    opt.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(opt.t));
    const double bc2 = 1.0 - std::pow(beta2, double(opt.t));

    std::vector<Tensor<float>*> ps, gs, ms, vs;
    params.for_each([&](const std::string&, Tensor<float>& t) { ps.push_back(&t); });
    const_cast<Params<float>&>(grads).for_each(
        [&](const std::string&, Tensor<float>& t) { gs.push_back(&t); });
    opt.m.for_each([&](const std::string&, Tensor<float>& t) { ms.push_back(&t); });
    opt.v.for_each([&](const std::string&, Tensor<float>& t) { vs.push_back(&t); });

    for (size_t ti = 0; ti < ps.size(); ++ti) {
        float* p = ps[ti]->data();
        const float* g = gs[ti]->data();
        float* m = ms[ti]->data();
        float* v = vs[ti]->data();
        const int64_t n = ps[ti]->numel();
        for (int64_t i = 0; i < n; ++i) {
            if (!std::isfinite(g[i])) {
                throw std::runtime_error("non-finite gradient in optimizer update");
            }
            m[i] = float(beta1 * m[i] + (1.0 - beta1) * g[i]);
            v[i] = float(beta2 * v[i] + (1.0 - beta2) * double(g[i]) * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= float(lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]));
        }
    }
}

std::optional<TrainExample<float>> assemble_example(const Dataset& data, const Vocab& vocab,
                                                    const TrainConfig& cfg,
                                                    const Params<float>& params,
                                                    Workspace<float>& ws, uint64_t seed, int step,
                                                    int slot, bool* skipped) {
    if (skipped) *skipped = false;
    Rng rng = Rng::derive(seed, {hash_str("batch"), uint64_t(step), uint64_t(slot)});
    const Sample& sample =
        data.samples[size_t(rng.uniform_int(0, int(data.samples.size()) - 1))];
    const int len = int(sample.ids.size());

    TrainExample<float> ex;
    ex.target = sample.ids;
    ex.feat = sample.grid.values;

    if (cfg.trn_enabled && rng.uniform() < cfg.branch_correction_prob) {
        NoisedSeq noised = token_replace(sample.ids, rng.uniform_int(0, len), vocab, rng);
        ex.input = std::move(noised.ids);
        ex.pattern.masked.assign(size_t(len), 0);
        ex.branch = Branch::Correction;
        return ex;
    }

    ConfidenceProvider aux = [&]() {
        forward(params, sample.grid.values, full_mask(sample.ids, vocab).ids, ws);
        Prediction p = read_prediction(ws, vocab.mask_id);
        return AuxPrediction{std::move(p.ids), std::move(p.conf)};
    };
    TrainingNoise tn =
        sample_training_noise(sample.ids, vocab, rng, &aux, cfg.blc_steps, cfg.mask_strategies);

    if (tn.strategy == MaskStrategy::Refinement) {
        // supervised over the whole sequence; corrupted only when the
        // token-replacement mechanism is on
        if (cfg.trn_enabled) {
            NoisedSeq noised = token_replace(sample.ids, rng.uniform_int(0, len), vocab, rng);
            ex.input = std::move(noised.ids);
        } else {
            ex.input = sample.ids;
        }
        ex.pattern.masked.assign(size_t(len), 0);
        ex.branch = Branch::Correction;
        return ex;
    }

    if (tn.noised.pattern.count() == 0) {
        // a confidence pattern can come back empty on ties; nothing to supervise
        if (skipped) *skipped = true;
        return std::nullopt;
    }
    ex.input = std::move(tn.noised.ids);
    ex.pattern = std::move(tn.noised.pattern);
    ex.branch = Branch::Denoising;
    return ex;
}

Params<float> train_loop(const ModelConfig& mcfg, const TrainConfig& cfg, const Dataset& data,
                         const Vocab& vocab, uint64_t seed, int threads,
                         const MetricsSink& metrics, const CheckpointSink& checkpoints) {
    mcfg.validate();
    if (cfg.batch_size < 1 || cfg.total_steps < 1) {
        throw std::invalid_argument("batch_size and total_steps must be >= 1");
    }
    Params<float> params = init_params<float>(mcfg, seed);
    OptState opt = OptState::init(params);

    const int W = std::max(1, threads);
    std::vector<Workspace<float>> workspaces;
    std::vector<Params<float>> worker_grads;
    workspaces.reserve(size_t(W));
    worker_grads.reserve(size_t(W));
    for (int w = 0; w < W; ++w) {
        workspaces.emplace_back(mcfg);
        worker_grads.push_back(Params<float>::zeros_like(params));
    }
    Params<float> grads = Params<float>::zeros_like(params);

    std::vector<std::optional<TrainExample<float>>> batch(static_cast<size_t>(cfg.batch_size));
    std::vector<LossParts<float>> worker_parts(static_cast<size_t>(W));

    std::vector<uint8_t> slot_skipped(size_t(cfg.batch_size), 0);

    for (int step = 0; step < cfg.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();

        auto run_sharded = [&](auto&& fn) {
            if (W == 1) {
                fn(0, 0, cfg.batch_size);
                return;
            }
            std::vector<std::thread> pool;
            const int chunk = (cfg.batch_size + W - 1) / W;
            for (int w = 0; w < W; ++w) {
                const int lo = w * chunk, hi = std::min(cfg.batch_size, lo + chunk);
                if (lo >= hi) break;
                pool.emplace_back([&fn, w, lo, hi]() { fn(w, lo, hi); });
            }
            for (auto& t : pool) t.join();
        };

        run_sharded([&](int w, int lo, int hi) {
            for (int slot = lo; slot < hi; ++slot) {
                bool skipped = false;
                batch[size_t(slot)] = assemble_example(data, vocab, cfg, params,
                                                       workspaces[size_t(w)], seed, step, slot,
                                                       &skipped);
                slot_skipped[size_t(slot)] = skipped ? 1 : 0;
            }
        });

        int n_d = 0, n_c = 0, skipped_count = 0;
        for (uint8_t s : slot_skipped) skipped_count += s;
        for (const auto& ex : batch) {
            if (!ex) continue;
            (ex->branch == Branch::Denoising ? n_d : n_c)++;
        }

        run_sharded([&](int w, int lo, int hi) {
            worker_grads[size_t(w)].for_each(
                [](const std::string&, Tensor<float>& t) { t.zero(); });
            worker_parts[size_t(w)] = {};
            Tensor<float> d_logits({mcfg.max_len, mcfg.vocab_size});
            for (int slot = lo; slot < hi; ++slot) {
                if (!batch[size_t(slot)]) continue;
                const TrainExample<float>& ex = *batch[size_t(slot)];
                forward(params, ex.feat, ex.input, workspaces[size_t(w)]);
                merge(worker_parts[size_t(w)],
                      example_loss_and_dlogits<float>(ex, workspaces[size_t(w)],
                                                      std::max(n_d, 1), std::max(n_c, 1),
                                                      &d_logits, 1.0f));
                backward(params, ex.feat, ex.input, workspaces[size_t(w)], d_logits,
                         worker_grads[size_t(w)]);
            }
        });

        grads.for_each([](const std::string&, Tensor<float>& t) { t.zero(); });
        LossParts<float> parts;
        {
            std::vector<Tensor<float>*> acc;
            grads.for_each([&](const std::string&, Tensor<float>& t) { acc.push_back(&t); });
            for (int w = 0; w < W; ++w) {
                size_t ti = 0;
                worker_grads[size_t(w)].for_each([&](const std::string&, Tensor<float>& t) {
                    float* dst = acc[ti++]->data();
                    const float* src = t.data();
                    for (int64_t i = 0; i < t.numel(); ++i) dst[i] += src[i];
                });
                merge(parts, worker_parts[size_t(w)]);
            }
        }

        double gn2 = 0;
        grads.for_each([&gn2](const std::string&, Tensor<float>& t) {
            for (float g : t.v) gn2 += double(g) * g;
        });

        const double lr = lr_schedule(step, cfg);
        adamw_step(params, grads, opt, lr, cfg.weight_decay);

        if (metrics) {
            StepMetrics m;
            m.step = step;
            m.loss_d = double(parts.denoising);
            m.loss_c = double(parts.correction);
            m.lr = lr;
            m.grad_norm = std::sqrt(gn2);
            m.wall_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
            m.n_denoising = n_d;
            m.n_correction = n_c;
            m.skipped = skipped_count;
            metrics(m);
        }
        if (checkpoints && cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0 &&
            step + 1 < cfg.total_steps) {
            checkpoints(step + 1, params);
        }
    }
    if (checkpoints) checkpoints(cfg.total_steps, params);
    return params;
}

template struct TrainExample<float>;
template struct TrainExample<double>;
template float denoising_loss<float>(const Tensor<float>&, const TokenSeq&, const MaskPattern&);
template double denoising_loss<double>(const Tensor<double>&, const TokenSeq&,
                                       const MaskPattern&);
template float correction_loss<float>(const Tensor<float>&, const TokenSeq&);
template double correction_loss<double>(const Tensor<double>&, const TokenSeq&);
template LossParts<float> total_loss<float>(const Params<float>&,
                                            const std::vector<TrainExample<float>>&,
                                            Workspace<float>&);
template LossParts<double> total_loss<double>(const Params<double>&,
                                              const std::vector<TrainExample<double>>&,
                                              Workspace<double>&);
template LossParts<float> loss_and_grad<float>(const Params<float>&,
                                               const std::vector<TrainExample<float>>&,
                                               Workspace<float>&, Params<float>&, float);
template LossParts<double> loss_and_grad<double>(const Params<double>&,
                                                 const std::vector<TrainExample<double>>&,
                                                 Workspace<double>&, Params<double>&, double);

}  // namespace mdiff
