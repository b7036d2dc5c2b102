#pragma once

#include <string>
#include <vector>

#include "mdiff/rng.hpp"
#include "mdiff/tensor.hpp"
#include "mdiff/vocab.hpp"

namespace mdiff {

struct CorruptionConfig {
    double occlusion_rate = 0.0;
    double substitution_rate = 0.0;  // applied only where not occluded
    double noise_sigma = 0.0;
    void validate() const;
};

// Conditioning features standing in for a visual encoder: one row per token
// position. Occluded rows are identically zero.
struct FeatureGrid {
    Tensor<float> values;  // feat_len x dim
    std::vector<uint8_t> occluded;
    std::vector<uint8_t> substituted;
};

// One word per line; rejects symbols outside the vocabulary and words longer
// than max_len (error names the line), deduplicates preserving order.
std::vector<std::string> load_lexicon(const std::string& path, const Vocab& vocab, int max_len);

// Fixed random unit vector per token id (characters and pad; the mask row
// exists but is never rendered). Deterministic per seed.
Tensor<float> make_codebook(const Vocab& vocab, int dim, uint64_t seed);

FeatureGrid render_features(const TokenSeq& y, const CorruptionConfig& cfg, Rng& rng,
                            const Tensor<float>& codebook);

struct Sample {
    std::string text;
    TokenSeq ids;
    FeatureGrid grid;
    bool occluded_text = false;     // some text position (not pad tail) occluded
    bool substituted_text = false;  //
};

struct Dataset {
    std::vector<Sample> samples;
    Tensor<float> codebook;
};

// Pure function of its arguments; the noise stream for sample i also folds
// in the chosen word, so no split ever sees another split's corrupted
// instance of the same word.
Dataset gen_dataset(const std::vector<std::string>& lexicon, int n, const CorruptionConfig& cfg,
                    uint64_t seed, uint64_t split_tag, const Vocab& vocab, int max_len, int dim);

}  // namespace mdiff
