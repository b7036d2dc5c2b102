#include "mdiff/eval.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>
#include <thread>

#include "mdiff/rng.hpp"

namespace mdiff {

double word_accuracy(const std::vector<std::string>& preds,
                     const std::vector<std::string>& refs) {
    if (preds.size() != refs.size()) {
        throw std::invalid_argument("prediction/reference count mismatch: " +
                                    std::to_string(preds.size()) + " vs " +
                                    std::to_string(refs.size()));
    }
    if (preds.empty()) throw std::invalid_argument("empty evaluation set");
    int hits = 0;
    for (size_t i = 0; i < preds.size(); ++i) hits += preds[i] == refs[i];
    return double(hits) / double(preds.size());
}

PolicyEval evaluate_policy(const Params<float>& params, const Dataset& data, const Vocab& vocab,
                           const RemaskPolicy& policy, int threads) {
    const int n = int(data.samples.size());
    if (n == 0) throw std::invalid_argument("empty evaluation set");
    std::vector<uint8_t> hit(size_t(n), 0);
    std::vector<double> wall(size_t(n), 0);
    std::vector<int> fwd(size_t(n), 0);

    const int W = std::max(1, threads);
    auto shard = [&](int lo, int hi) {
        Workspace<float> ws(params.cfg);
        for (int i = lo; i < hi; ++i) {
            const Sample& s = data.samples[size_t(i)];
            int count = 0;
            Predictor pred = model_predictor(params, s.grid.values, ws, vocab.mask_id, &count);
            const auto t0 = std::chrono::steady_clock::now();
            RunResult r = run(pred, policy, params.cfg.max_len, vocab.mask_id);
            wall[size_t(i)] = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            fwd[size_t(i)] = count;
            hit[size_t(i)] = decode(r.output, vocab) == s.text ? 1 : 0;
        }
    };
    if (W == 1) {
        shard(0, n);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (n + W - 1) / W;
        for (int w = 0; w < W; ++w) {
            const int lo = w * chunk, hi = std::min(n, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(shard, lo, hi);
        }
        for (auto& t : pool) t.join();
    }

    PolicyEval ev;
    ev.kind = policy.kind;
    ev.steps = policy.steps;
    ev.n = n;
    int hits = 0, occ_hits = 0;
    double fwd_sum = 0;
    for (int i = 0; i < n; ++i) {
        hits += hit[size_t(i)];
        fwd_sum += fwd[size_t(i)];
        if (data.samples[size_t(i)].occluded_text) {
            ++ev.n_occluded;
            occ_hits += hit[size_t(i)];
        }
    }
    ev.word_acc = double(hits) / n;
    ev.word_acc_occluded = ev.n_occluded > 0 ? double(occ_hits) / ev.n_occluded : 0.0;
    ev.mean_forwards = fwd_sum / n;
    std::sort(wall.begin(), wall.end());
    ev.median_wall_ms = n % 2 == 1 ? wall[size_t(n / 2)]
                                   : 0.5 * (wall[size_t(n / 2 - 1)] + wall[size_t(n / 2)]);
    return ev;
}

ErrorProbeResult injected_error_probe(const Params<float>& params, const Dataset& data,
                                      const Vocab& vocab, int errors_per_word, uint64_t seed) {
    ErrorProbeResult out;
    int corrected = 0;
    Workspace<float> ws(params.cfg);
    const int n_chars = int(vocab.characters.size());
    for (size_t i = 0; i < data.samples.size(); ++i) {
        const Sample& s = data.samples[i];
        const int len = int(s.text.size());
        if (len < errors_per_word) continue;
        Rng rng = Rng::derive(seed, {hash_str("error-probe"), uint64_t(i)});
        TokenSeq corrupted = s.ids;
        std::vector<int> hit_positions = rng.sample_without_replacement(len, errors_per_word);
        for (int pos : hit_positions) {
            int repl = rng.uniform_int(0, n_chars - 2);
            if (repl >= corrupted[size_t(pos)]) ++repl;
            corrupted[size_t(pos)] = repl;
        }
        forward(params, s.grid.values, corrupted, ws);
        Prediction p = read_prediction(ws, vocab.mask_id);
        for (int pos : hit_positions) {
            ++out.n_errors;
            corrected += p.ids[size_t(pos)] == s.ids[size_t(pos)];
        }
    }
    if (out.n_errors == 0) throw std::invalid_argument("probe found no eligible words");
    out.corrected_fraction = double(corrected) / out.n_errors;
    return out;
}

}  // namespace mdiff
