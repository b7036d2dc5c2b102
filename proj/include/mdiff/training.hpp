#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "mdiff/model.hpp"
#include "mdiff/noising.hpp"
#include "mdiff/synthetic.hpp"
#include "mdiff/vocab.hpp"

namespace mdiff {

enum class Branch { Denoising, Correction };

// A fully materialized training example: corrupted input, target sequence
// and the mask pattern that decides which loss term supervises it.
template <typename T>
struct TrainExample {
    TokenSeq target;
    std::vector<int> input;
    MaskPattern pattern;  // all-false for correction examples
    Branch branch = Branch::Denoising;
    Tensor<T> feat;
};

// -(1/l1) * sum over masked positions of log p(target). Throws if the
// pattern masks nothing.
template <typename T>
T denoising_loss(const Tensor<T>& probs, const TokenSeq& y, const MaskPattern& pattern);

// -(1/L) * sum over all positions of log p(target).
template <typename T>
T correction_loss(const Tensor<T>& probs, const TokenSeq& y);

template <typename T>
struct LossParts {
    T denoising = 0;    // mean over denoising-branch examples
    T correction = 0;   // mean over correction-branch examples
    int n_denoising = 0;
    int n_correction = 0;
    T total() const { return denoising + correction; }
};

// Runs the decoder on every example and combines the two loss terms. A
// branch with no examples contributes zero (logged to stderr once per
// process).
template <typename T>
LossParts<T> total_loss(const Params<T>& params, const std::vector<TrainExample<T>>& batch,
                        Workspace<T>& ws);

// Same evaluation plus reverse-mode gradients of loss_scale * total loss,
// accumulated into grads.
template <typename T>
LossParts<T> loss_and_grad(const Params<T>& params, const std::vector<TrainExample<T>>& batch,
                           Workspace<T>& ws, Params<T>& grads, T loss_scale = T(1));

struct TrainConfig {
    double lr = 5e-4;
    double weight_decay = 0.05;
    int warmup_steps = 500;
    int total_steps = 5000;
    int batch_size = 64;
    double branch_correction_prob = 0.5;
    bool trn_enabled = true;
    std::vector<MaskStrategy> mask_strategies = all_mask_strategies();
    int ckpt_every = 1000;
    int blc_steps = 3;  // block count for the BlockLowConf training pattern
};

// Linear warmup to the peak then cosine decay to zero at total_steps.
double lr_schedule(int step, const TrainConfig& cfg);

struct OptState {
    Params<float> m;
    Params<float> v;
    int64_t t = 0;

    static OptState init(const Params<float>& params);
};

// One decoupled-weight-decay adaptive-moment update (beta 0.9/0.999,
// eps 1e-8). Throws on a non-finite gradient.
void adamw_step(Params<float>& params, const Params<float>& grads, OptState& opt, double lr,
                double weight_decay);

struct StepMetrics {
    int step = 0;
    double loss_d = 0, loss_c = 0, lr = 0, grad_norm = 0, wall_ms = 0;
    int n_denoising = 0, n_correction = 0, skipped = 0;
};

using MetricsSink = std::function<void(const StepMetrics&)>;
using CheckpointSink = std::function<void(int step, const Params<float>&)>;

// Batch assembly for one slot of one step; exposed separately so the
// identical stream of examples can be reproduced outside the loop.
std::optional<TrainExample<float>> assemble_example(const Dataset& data, const Vocab& vocab,
                                                    const TrainConfig& cfg,
                                                    const Params<float>& params,
                                                    Workspace<float>& ws, uint64_t seed, int step,
                                                    int slot, bool* skipped);

// Runs the full loop. Bit-reproducible for a fixed (cfg, data, seed, thread
// count); single-threaded when threads == 1.
Params<float> train_loop(const ModelConfig& mcfg, const TrainConfig& cfg, const Dataset& data,
                         const Vocab& vocab, uint64_t seed, int threads,
                         const MetricsSink& metrics = nullptr,
                         const CheckpointSink& checkpoints = nullptr);

extern template struct TrainExample<float>;
extern template struct TrainExample<double>;

}  // namespace mdiff
