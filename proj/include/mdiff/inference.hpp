#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mdiff/model.hpp"
#include "mdiff/vocab.hpp"

namespace mdiff {

enum class PolicyKind { PD, AR, Re, LC, BLC };
const char* to_string(PolicyKind k);
PolicyKind policy_from_string(const std::string& s);  // pd/ar/re/lc/blc

struct RemaskPolicy {
    PolicyKind kind;
    int steps;
};

// PD is single-step, AR runs one step per position; Re/LC/BLC take the
// requested step count. Throws on inconsistent requests (e.g. BLC with more
// steps than positions).
RemaskPolicy make_policy(PolicyKind kind, int requested_steps, int max_len);

// K contiguous left-to-right blocks covering [0, len); the first len % K
// blocks are one longer. Returns [begin, end) pairs.
std::vector<std::pair<int, int>> blocks(int len, int k);

// One denoising pass: predictions and confidences for every position.
struct StepPrediction {
    std::vector<int> ids;
    std::vector<float> conf;
};
using Predictor = std::function<StepPrediction(const std::vector<int>& input_ids)>;

struct DenoiseState {
    int step = 1;                  // 1-based
    TokenSeq current;              // decoder input for this step
    std::vector<int> preds;        // last step's argmax, all positions
    std::vector<float> conf;       //
    std::vector<uint8_t> frozen;   // positions pinned in the input for good
    std::vector<int> committed;    // pinned value where frozen
};

DenoiseState init_state(int len, int mask_id);

void denoise_step(const Predictor& predict, DenoiseState& state);

// Applies the policy's remask rule between steps; advances state.step and
// returns the remask flags. Throws if called at or past the final step.
std::vector<uint8_t> remask(DenoiseState& state, const RemaskPolicy& policy, int mask_id);

struct TraceStep {
    int step;
    TokenSeq input;
    std::vector<int> preds;
    std::vector<float> conf;
    std::vector<uint8_t> remasked;  // empty flags after the final step
};

struct RunResult {
    TokenSeq output;  // final step's argmax at every position
    std::vector<TraceStep> trace;
    int forward_count = 0;
};

RunResult run(const Predictor& predict, const RemaskPolicy& policy, int len, int mask_id);

// Predictor backed by the decoder on one feature grid. The workspace must
// outlive the predictor; forward_counter (optional) tallies decoder passes.
Predictor model_predictor(const Params<float>& params, const Tensor<float>& feat,
                          Workspace<float>& ws, int mask_id, int* forward_counter = nullptr);

// Trace rendering used by the CLI `trace` command, one line per step.
std::string format_trace_step(const TraceStep& ts, const Vocab& vocab);

}  // namespace mdiff
