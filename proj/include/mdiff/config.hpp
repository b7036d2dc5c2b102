#pragma once

#include <string>

#include "mdiff/inference.hpp"
#include "mdiff/model.hpp"
#include "mdiff/synthetic.hpp"
#include "mdiff/training.hpp"

namespace mdiff {

struct DataConfig {
    std::string charset = "abcdefghijklmnopqrstuvwxyz";
    std::string lexicon_path;
    int n_train = 20000;
    int n_eval = 2000;
    CorruptionConfig corruption;
    uint64_t seed = 1;
};

struct InferConfig {
    PolicyKind policy = PolicyKind::BLC;
    int steps = 3;
};

// Versioned key/value experiment description. Parsing rejects unknown keys
// and sections outright; vocab_size and feat_len are derived, not stored.
struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    InferConfig infer;

    void finalize();  // derives vocab_size/feat_len/blc_steps, then validates
    void validate(bool check_files = true) const;
    uint64_t hash() const;  // over the canonical text
};

constexpr int kConfigVersion = 1;

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);  // canonical form

std::vector<MaskStrategy> parse_mask_strategies(const std::string& spec);
std::string format_mask_strategies(const std::vector<MaskStrategy>& set);

}  // namespace mdiff
