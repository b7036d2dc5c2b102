#pragma once

#include <string>
#include <vector>

#include "mdiff/inference.hpp"
#include "mdiff/model.hpp"
#include "mdiff/synthetic.hpp"
#include "mdiff/vocab.hpp"

namespace mdiff {

// Fraction of exact string matches. Throws on empty or mismatched lists.
double word_accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& refs);

struct PolicyEval {
    PolicyKind kind = PolicyKind::PD;
    int steps = 1;
    double word_acc = 0;
    double word_acc_occluded = 0;  // samples whose text positions got occluded
    int n = 0;
    int n_occluded = 0;
    double median_wall_ms = 0;  // per sample
    double mean_forwards = 0;   // decoder passes per sample
};

PolicyEval evaluate_policy(const Params<float>& params, const Dataset& data, const Vocab& vocab,
                           const RemaskPolicy& policy, int threads = 1);

// Feeds each word's ground-truth tokens with a few characters replaced,
// unmasked, through one decoder pass; reports the fraction of injected
// errors the model maps back to the original character.
struct ErrorProbeResult {
    double corrected_fraction = 0;
    int n_errors = 0;
};

ErrorProbeResult injected_error_probe(const Params<float>& params, const Dataset& data,
                                      const Vocab& vocab, int errors_per_word, uint64_t seed);

}  // namespace mdiff
