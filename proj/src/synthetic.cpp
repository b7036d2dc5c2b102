#include "mdiff/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace mdiff {

void CorruptionConfig::validate() const {
    if (occlusion_rate < 0 || occlusion_rate > 1 || substitution_rate < 0 ||
        substitution_rate > 1) {
        throw std::invalid_argument("corruption rates must lie in [0, 1]");
    }
    if (noise_sigma < 0) throw std::invalid_argument("noise_sigma must be >= 0");
}

std::vector<std::string> load_lexicon(const std::string& path, const Vocab& vocab, int max_len) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lexicon: " + path);
    std::vector<std::string> words;
    std::unordered_set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (int(line.size()) > max_len) {
            throw std::runtime_error("lexicon line " + std::to_string(lineno) + ": word \"" +
                                     line + "\" longer than " + std::to_string(max_len));
        }
        for (char c : line) {
            if (vocab.characters.find(c) == std::string::npos) {
                throw std::runtime_error("lexicon line " + std::to_string(lineno) +
                                         ": symbol '" + std::string(1, c) +
                                         "' not in charset");
            }
        }
        if (seen.insert(line).second) words.push_back(line);
    }
    if (words.empty()) throw std::runtime_error("empty lexicon: " + path);
    return words;
}

Tensor<float> make_codebook(const Vocab& vocab, int dim, uint64_t seed) {
    Rng rng = Rng::derive(seed, {hash_str("codebook")});
    Tensor<float> cb({vocab.size(), dim});
    for (int t = 0; t < vocab.size(); ++t) {
        float* row = cb.data() + size_t(t) * dim;
        double norm2 = 0;
        for (int d = 0; d < dim; ++d) {
            row[d] = float(rng.normal());
            norm2 += double(row[d]) * row[d];
        }
        const float inv = float(1.0 / std::sqrt(norm2));
        for (int d = 0; d < dim; ++d) row[d] *= inv;
    }
    return cb;
}

FeatureGrid render_features(const TokenSeq& y, const CorruptionConfig& cfg, Rng& rng,
                            const Tensor<float>& codebook) {
    cfg.validate();
    const int len = int(y.size());
    const int dim = codebook.shape[1];
    const int n_classes = codebook.shape[0];
    FeatureGrid g;
    g.values = Tensor<float>({len, dim});
    g.occluded.assign(size_t(len), 0);
    g.substituted.assign(size_t(len), 0);
    for (int i = 0; i < len; ++i) {
        if (rng.uniform() < cfg.occlusion_rate) {
            g.occluded[size_t(i)] = 1;
            continue;  // row stays zero
        }
        int src = y[size_t(i)];
        if (rng.uniform() < cfg.substitution_rate) {
            // a uniformly drawn character different from the original
            const int n_chars = n_classes - 2;
            if (src >= 0 && src < n_chars) {
                int repl = rng.uniform_int(0, n_chars - 2);
                if (repl >= src) ++repl;
                src = repl;
            } else {
                src = rng.uniform_int(0, n_chars - 1);
            }
            g.substituted[size_t(i)] = 1;
        }
        const float* row = codebook.data() + size_t(src) * dim;
        float* out = g.values.data() + size_t(i) * dim;
        if (cfg.noise_sigma > 0) {
            for (int d = 0; d < dim; ++d) out[d] = row[d] + float(rng.normal(cfg.noise_sigma));
        } else {
            for (int d = 0; d < dim; ++d) out[d] = row[d];
        }
    }
    return g;
}

Dataset gen_dataset(const std::vector<std::string>& lexicon, int n, const CorruptionConfig& cfg,
                    uint64_t seed, uint64_t split_tag, const Vocab& vocab, int max_len, int dim) {
    if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
    if (lexicon.empty()) throw std::invalid_argument("empty lexicon");
    cfg.validate();
    Dataset ds;
    ds.codebook = make_codebook(vocab, dim, seed);
    ds.samples.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        Rng choice = Rng::derive(seed, {split_tag, uint64_t(i), hash_str("word-choice")});
        Sample& s = ds.samples[size_t(i)];
        s.text = lexicon[size_t(choice.uniform_int(0, int(lexicon.size()) - 1))];
        s.ids = encode(s.text, max_len, vocab);
        Rng noise = Rng::derive(seed, {split_tag, uint64_t(i), hash_str(s.text)});
        s.grid = render_features(s.ids, cfg, noise, ds.codebook);
        for (size_t p = 0; p < s.text.size(); ++p) {
            if (s.grid.occluded[p]) s.occluded_text = true;
            if (s.grid.substituted[p]) s.substituted_text = true;
        }
    }
    return ds;
}

}  // namespace mdiff
