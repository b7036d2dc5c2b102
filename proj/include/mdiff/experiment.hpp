#pragma once

#include <string>
#include <vector>

#include "mdiff/config.hpp"
#include "mdiff/eval.hpp"
#include "mdiff/synthetic.hpp"

namespace mdiff {

struct ExperimentResult {
    uint64_t config_hash = 0;
    ExperimentConfig config;
    std::vector<PolicyEval> policies;  // pd, ar, re, lc, blc
    ErrorProbeResult probe;
    Params<float> params;
};

// gen_dataset -> train_loop -> evaluation under every policy. Writes
// metrics.jsonl, checkpoints and report.json under out_dir (skipped when
// out_dir is empty).
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                int threads, bool verbose = true);

std::string report_to_json(const ExperimentResult& result);

// Dataset cache in the checkpoint container format.
void save_dataset(const std::string& path, const Dataset& data, const std::string& config_text);
Dataset load_dataset(const std::string& path, const Vocab& vocab);

Dataset build_split(const ExperimentConfig& cfg, const Vocab& vocab, bool eval_split);

// {random-only, all-strategies} x {trn off, trn on} grid plus a step-count
// sweep of the confidence policies on the full cell.
struct AblationCell {
    std::string name;
    ExperimentResult result;
};
std::vector<AblationCell> run_ablation(const ExperimentConfig& base, const std::string& out_dir,
                                       int threads, int k_sweep_max = 8);

}  // namespace mdiff
