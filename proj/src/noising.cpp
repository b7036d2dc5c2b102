#include "mdiff/noising.hpp"

#include <numeric>
#include <stdexcept>

#include "mdiff/inference.hpp"

namespace mdiff {

const char* to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::RandomMask: return "random";
        case MaskStrategy::FullMask: return "full";
        case MaskStrategy::ForwardAR: return "forward_ar";
        case MaskStrategy::BackwardAR: return "backward_ar";
        case MaskStrategy::Refinement: return "refinement";
        case MaskStrategy::LowConf: return "lowconf";
        case MaskStrategy::BlockLowConf: return "blocklowconf";
    }
    return "?";
}

const std::vector<MaskStrategy>& all_mask_strategies() {
    static const std::vector<MaskStrategy> all = {
        MaskStrategy::RandomMask, MaskStrategy::FullMask,   MaskStrategy::ForwardAR,
        MaskStrategy::BackwardAR, MaskStrategy::Refinement, MaskStrategy::LowConf,
        MaskStrategy::BlockLowConf,
    };
    return all;
}

static NoisedSeq from_mask_flags(const TokenSeq& y, std::vector<uint8_t> masked,
                                 const Vocab& vocab) {
    NoisedSeq out;
    out.ids = y;
    for (size_t i = 0; i < y.size(); ++i) {
        if (masked[i]) out.ids[i] = vocab.mask_id;
    }
    out.pattern.masked = std::move(masked);
    out.pattern.kept_source = KeptSource::GroundTruth;
    out.replaced.assign(y.size(), 0);
    return out;
}

NoisedSeq random_mask(const TokenSeq& y, int l1, const Vocab& vocab, Rng& rng) {
    const int len = int(y.size());
    if (l1 < 1 || l1 > len) {
        throw std::invalid_argument("l1 out of range [1, " + std::to_string(len) + "]: " +
                                    std::to_string(l1));
    }
    std::vector<uint8_t> masked(size_t(len), 0);
    for (int i : rng.sample_without_replacement(len, l1)) masked[size_t(i)] = 1;
    return from_mask_flags(y, std::move(masked), vocab);
}

NoisedSeq full_mask(const TokenSeq& y, const Vocab& vocab) {
    return from_mask_flags(y, std::vector<uint8_t>(y.size(), 1), vocab);
}

NoisedSeq ar_mask(const TokenSeq& y, int t, ArDirection dir, const Vocab& vocab) {
    const int len = int(y.size());
    if (t < 1 || t > len) {
        throw std::invalid_argument("ar split index out of range [1, " + std::to_string(len) +
                                    "]: " + std::to_string(t));
    }
    std::vector<uint8_t> masked(size_t(len), 0);
    for (int i = 0; i < len; ++i) {
        const bool keep = dir == ArDirection::Forward ? i < t - 1 : i >= len - (t - 1);
        masked[size_t(i)] = keep ? 0 : 1;
    }
    return from_mask_flags(y, std::move(masked), vocab);
}

MaskPattern confidence_pattern(const std::vector<float>& conf, MaskStrategy kind, int k_steps,
                               Rng& rng) {
    const int len = int(conf.size());
    MaskPattern p;
    p.masked.assign(size_t(len), 0);
    p.kept_source = KeptSource::ModelPrediction;
    if (kind == MaskStrategy::LowConf) {
        double mean = std::accumulate(conf.begin(), conf.end(), 0.0) / len;
        for (int i = 0; i < len; ++i) p.masked[size_t(i)] = conf[size_t(i)] < mean ? 1 : 0;
        return p;
    }
    if (kind == MaskStrategy::BlockLowConf) {
        if (k_steps < 1) throw std::invalid_argument("block count must be >= 1");
        const auto bl = blocks(len, k_steps);
        const auto [begin, end] = bl[size_t(rng.uniform_int(0, k_steps - 1))];
        double mean = 0;
        for (int i = begin; i < end; ++i) mean += conf[size_t(i)];
        mean /= double(end - begin);
        for (int i = begin; i < end; ++i) p.masked[size_t(i)] = conf[size_t(i)] < mean ? 1 : 0;
        return p;
    }
    throw std::invalid_argument("confidence_pattern requires LowConf or BlockLowConf");
}

NoisedSeq token_replace(const TokenSeq& y, int l2, const Vocab& vocab, Rng& rng) {
    const int len = int(y.size());
    if (l2 < 0 || l2 > len) {
        throw std::invalid_argument("l2 out of range [0, " + std::to_string(len) + "]: " +
                                    std::to_string(l2));
    }
    NoisedSeq out;
    out.ids = y;
    out.pattern.masked.assign(size_t(len), 0);
    out.pattern.kept_source = KeptSource::GroundTruth;
    out.replaced.assign(size_t(len), 0);
    const int n_chars = int(vocab.characters.size());
    for (int i : rng.sample_without_replacement(len, l2)) {
        // draw a character distinct from the original; pad and mask are
        // never written
        int repl;
        if (vocab.is_char(y[size_t(i)])) {
            repl = rng.uniform_int(0, n_chars - 2);
            if (repl >= y[size_t(i)]) ++repl;
        } else {
            repl = rng.uniform_int(0, n_chars - 1);
        }
        out.ids[size_t(i)] = repl;
        out.replaced[size_t(i)] = 1;
    }
    return out;
}

TrainingNoise sample_training_noise(const TokenSeq& y, const Vocab& vocab, Rng& rng,
                                    const ConfidenceProvider* aux, int blc_steps,
                                    const std::vector<MaskStrategy>& allowed) {
    if (allowed.empty()) throw std::invalid_argument("empty mask strategy set");
    const int len = int(y.size());
    const MaskStrategy kind = allowed[size_t(rng.uniform_int(0, int(allowed.size()) - 1))];
    TrainingNoise out;
    out.strategy = kind;
    switch (kind) {
        case MaskStrategy::RandomMask:
            out.noised = random_mask(y, rng.uniform_int(1, len), vocab, rng);
            break;
        case MaskStrategy::FullMask:
            out.noised = full_mask(y, vocab);
            break;
        case MaskStrategy::ForwardAR:
            out.noised = ar_mask(y, rng.uniform_int(1, len), ArDirection::Forward, vocab);
            break;
        case MaskStrategy::BackwardAR:
            out.noised = ar_mask(y, rng.uniform_int(1, len), ArDirection::Backward, vocab);
            break;
        case MaskStrategy::Refinement:
            out.noised.ids = y;
            out.noised.pattern.masked.assign(size_t(len), 0);
            out.noised.pattern.kept_source = KeptSource::GroundTruth;
            out.noised.replaced.assign(size_t(len), 0);
            break;
        case MaskStrategy::LowConf:
        case MaskStrategy::BlockLowConf: {
            if (aux == nullptr || !*aux) {
                throw std::invalid_argument(
                    "confidence provider required for LowConf/BlockLowConf training noise");
            }
            const AuxPrediction ap = (*aux)();
            out.noised.pattern = confidence_pattern(ap.conf, kind, blc_steps, rng);
            out.noised.ids.resize(size_t(len));
            for (int i = 0; i < len; ++i) {
                out.noised.ids[size_t(i)] =
                    out.noised.pattern.masked[size_t(i)] ? vocab.mask_id : ap.preds[size_t(i)];
            }
            out.noised.replaced.assign(size_t(len), 0);
            break;
        }
    }
    return out;
}

}  // namespace mdiff
