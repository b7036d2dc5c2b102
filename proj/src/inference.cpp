#include "mdiff/inference.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mdiff {

const char* to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::PD: return "pd";
        case PolicyKind::AR: return "ar";
        case PolicyKind::Re: return "re";
        case PolicyKind::LC: return "lc";
        case PolicyKind::BLC: return "blc";
    }
    return "?";
}

PolicyKind policy_from_string(const std::string& s) {
    if (s == "pd") return PolicyKind::PD;
    if (s == "ar") return PolicyKind::AR;
    if (s == "re") return PolicyKind::Re;
    if (s == "lc") return PolicyKind::LC;
    if (s == "blc") return PolicyKind::BLC;
    throw std::invalid_argument("unknown policy: " + s + " (expected pd|ar|re|lc|blc)");
}

RemaskPolicy make_policy(PolicyKind kind, int requested_steps, int max_len) {
    switch (kind) {
        case PolicyKind::PD:
            return {kind, 1};
        case PolicyKind::AR:
            return {kind, max_len};
        case PolicyKind::Re:
        case PolicyKind::LC:
            if (requested_steps < 1) throw std::invalid_argument("steps must be >= 1");
            return {kind, requested_steps};
        case PolicyKind::BLC:
            if (requested_steps < 1) throw std::invalid_argument("steps must be >= 1");
            if (requested_steps > max_len) {
                throw std::invalid_argument("blc needs steps <= sequence length");
            }
            return {kind, requested_steps};
    }
    throw std::invalid_argument("bad policy kind");
}

std::vector<std::pair<int, int>> blocks(int len, int k) {
    if (k < 1) throw std::invalid_argument("block count must be >= 1");
    if (len < k) {
        throw std::invalid_argument("cannot split length " + std::to_string(len) + " into " +
                                    std::to_string(k) + " blocks");
    }
    std::vector<std::pair<int, int>> out;
    out.reserve(size_t(k));
    const int base = len / k, extra = len % k;
    int begin = 0;
    for (int b = 0; b < k; ++b) {
        const int sz = base + (b < extra ? 1 : 0);
        out.emplace_back(begin, begin + sz);
        begin += sz;
    }
    return out;
}

DenoiseState init_state(int len, int mask_id) {
    DenoiseState s;
    s.step = 1;
    s.current.assign(size_t(len), mask_id);
    s.preds.assign(size_t(len), -1);
    s.conf.assign(size_t(len), 0.0f);
    s.frozen.assign(size_t(len), 0);
    s.committed.assign(size_t(len), -1);
    return s;
}

void denoise_step(const Predictor& predict, DenoiseState& state) {
    StepPrediction p = predict(state.current);
    state.preds = std::move(p.ids);
    state.conf = std::move(p.conf);
}

std::vector<uint8_t> remask(DenoiseState& state, const RemaskPolicy& policy, int mask_id) {
    if (state.step >= policy.steps) {
        throw std::logic_error("remask called at step " + std::to_string(state.step) +
                               " of a " + std::to_string(policy.steps) + "-step policy");
    }
    const int len = int(state.current.size());
    std::vector<uint8_t> remasked(size_t(len), 0);

    switch (policy.kind) {
        case PolicyKind::PD:
            throw std::logic_error("PD has no remask events");
        case PolicyKind::AR: {
            // commit one more position left-to-right, keep the tail masked
            const int commit = state.step - 1;
            state.frozen[size_t(commit)] = 1;
            state.committed[size_t(commit)] = state.preds[size_t(commit)];
            for (int i = 0; i < len; ++i) {
                if (state.frozen[size_t(i)]) {
                    state.current[size_t(i)] = state.committed[size_t(i)];
                } else {
                    state.current[size_t(i)] = mask_id;
                    remasked[size_t(i)] = 1;
                }
            }
            break;
        }
        case PolicyKind::Re:
            for (int i = 0; i < len; ++i) state.current[size_t(i)] = state.preds[size_t(i)];
            break;
        case PolicyKind::LC: {
            double mean = std::accumulate(state.conf.begin(), state.conf.end(), 0.0) / len;
            for (int i = 0; i < len; ++i) {
                if (state.conf[size_t(i)] < mean) {
                    state.current[size_t(i)] = mask_id;
                    remasked[size_t(i)] = 1;
                } else {
                    state.current[size_t(i)] = state.preds[size_t(i)];
                }
            }
            break;
        }
        case PolicyKind::BLC: {
            const auto bl = blocks(len, policy.steps);
            const auto [begin, end] = bl[size_t(state.step - 1)];
            double mean = 0;
            for (int i = begin; i < end; ++i) mean += state.conf[size_t(i)];
            mean /= double(end - begin);
            for (int i = 0; i < len; ++i) {
                if (i >= begin && i < end) {
                    if (state.conf[size_t(i)] < mean) {
                        state.current[size_t(i)] = mask_id;
                        remasked[size_t(i)] = 1;
                    } else {
                        state.frozen[size_t(i)] = 1;
                        state.committed[size_t(i)] = state.preds[size_t(i)];
                        state.current[size_t(i)] = state.preds[size_t(i)];
                    }
                } else if (state.frozen[size_t(i)]) {
                    state.current[size_t(i)] = state.committed[size_t(i)];
                } else {
                    state.current[size_t(i)] = state.preds[size_t(i)];
                }
            }
            break;
        }
    }
    ++state.step;
    return remasked;
}

RunResult run(const Predictor& predict, const RemaskPolicy& policy, int len, int mask_id) {
    RunResult result;
    DenoiseState state = init_state(len, mask_id);
    for (int step = 1; step <= policy.steps; ++step) {
        TokenSeq input = state.current;
        denoise_step(predict, state);
        ++result.forward_count;
        TraceStep ts;
        ts.step = step;
        ts.input = std::move(input);
        ts.preds = state.preds;
        ts.conf = state.conf;
        if (step < policy.steps) {
            ts.remasked = remask(state, policy, mask_id);
        } else {
            ts.remasked.assign(size_t(len), 0);
        }
        result.trace.push_back(std::move(ts));
    }
    result.output = result.trace.back().preds;
    return result;
}

Predictor model_predictor(const Params<float>& params, const Tensor<float>& feat,
                          Workspace<float>& ws, int mask_id, int* forward_counter) {
    return [&params, &feat, &ws, mask_id, forward_counter](const std::vector<int>& input_ids) {
        forward(params, feat, input_ids, ws);
        if (forward_counter) ++*forward_counter;
        Prediction p = read_prediction(ws, mask_id);
        return StepPrediction{std::move(p.ids), std::move(p.conf)};
    };
}

std::string format_trace_step(const TraceStep& ts, const Vocab& vocab) {
    std::ostringstream os;
    os << "{\"step\":" << ts.step << ",\"input\":\"" << decode(ts.input, vocab)
       << "\",\"pred\":\"" << decode(ts.preds, vocab) << "\",\"conf\":[";
    for (size_t i = 0; i < ts.conf.size(); ++i) {
        if (i) os << ",";
        os << ts.conf[i];
    }
    os << "],\"remasked\":[";
    bool first = true;
    for (size_t i = 0; i < ts.remasked.size(); ++i) {
        if (ts.remasked[i]) {
            if (!first) os << ",";
            os << i;
            first = false;
        }
    }
    os << "]}";
    return os.str();
}

}  // namespace mdiff
