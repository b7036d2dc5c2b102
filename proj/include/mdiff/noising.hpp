#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mdiff/rng.hpp"
#include "mdiff/vocab.hpp"

namespace mdiff {

enum class KeptSource { GroundTruth, ModelPrediction };

struct MaskPattern {
    std::vector<uint8_t> masked;
    KeptSource kept_source = KeptSource::GroundTruth;

    int count() const {
        int n = 0;
        for (uint8_t m : masked) n += m != 0;
        return n;
    }
};

enum class MaskStrategy {
    RandomMask,
    FullMask,
    ForwardAR,
    BackwardAR,
    Refinement,
    LowConf,
    BlockLowConf,
};
constexpr int kNumMaskStrategies = 7;
const char* to_string(MaskStrategy s);

struct NoisedSeq {
    TokenSeq ids;
    MaskPattern pattern;
    std::vector<uint8_t> replaced;
};

enum class ArDirection { Forward, Backward };

// Exactly l1 uniformly chosen positions become mask_id. l1 in [1, L].
NoisedSeq random_mask(const TokenSeq& y, int l1, const Vocab& vocab, Rng& rng);

NoisedSeq full_mask(const TokenSeq& y, const Vocab& vocab);

// Forward: keep positions [0, t-1), mask the rest. Backward is the mirror.
// t in [1, L].
NoisedSeq ar_mask(const TokenSeq& y, int t, ArDirection dir, const Vocab& vocab);

// LowConf: mask positions strictly below the global mean confidence.
// BlockLowConf: pick one of the K contiguous blocks uniformly and mask its
// below-block-mean positions. Kept positions are meant to carry model
// predictions.
MaskPattern confidence_pattern(const std::vector<float>& conf, MaskStrategy kind, int k_steps,
                               Rng& rng);

// Exactly l2 uniformly chosen positions are overwritten with a uniformly
// drawn different character; mask_id and pad_id are never written. l2 in
// [0, L].
NoisedSeq token_replace(const TokenSeq& y, int l2, const Vocab& vocab, Rng& rng);

// Confidence source for the LowConf/BlockLowConf training patterns: the
// caller runs the current model on the fully masked sequence and hands back
// predictions and confidences.
struct AuxPrediction {
    std::vector<int> preds;
    std::vector<float> conf;
};
using ConfidenceProvider = std::function<AuxPrediction()>;

struct TrainingNoise {
    NoisedSeq noised;
    MaskStrategy strategy;
};

// Draws a strategy uniformly from `allowed` and applies it:
//   RandomMask with l1 ~ U[1, L], Forward/BackwardAR with t ~ U[1, L],
//   FullMask, Refinement (clean sequence, masked = none, kept ground truth),
//   LowConf/BlockLowConf built from the provider's predictions with kept
//   positions carrying those predictions.
// Throws if LowConf/BlockLowConf is drawn and aux is null.
TrainingNoise sample_training_noise(const TokenSeq& y, const Vocab& vocab, Rng& rng,
                                    const ConfidenceProvider* aux, int blc_steps,
                                    const std::vector<MaskStrategy>& allowed);

const std::vector<MaskStrategy>& all_mask_strategies();

}  // namespace mdiff
