#include "mdiff/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "mdiff/checkpoint.hpp"

namespace mdiff {

using nlohmann::json;

namespace {

constexpr uint64_t kTrainSplit = 0;
constexpr uint64_t kEvalSplit = 1;

json policy_to_json(const PolicyEval& ev) {
    return json{{"policy", to_string(ev.kind)},
                {"steps", ev.steps},
                {"word_acc", ev.word_acc},
                {"word_acc_occluded", ev.word_acc_occluded},
                {"n", ev.n},
                {"n_occluded", ev.n_occluded},
                {"median_wall_ms", ev.median_wall_ms},
                {"mean_forwards", ev.mean_forwards}};
}

}  // namespace

Dataset build_split(const ExperimentConfig& cfg, const Vocab& vocab, bool eval_split) {
    const auto lexicon = load_lexicon(cfg.data.lexicon_path, vocab, cfg.model.max_len);
    return gen_dataset(lexicon, eval_split ? cfg.data.n_eval : cfg.data.n_train,
                       cfg.data.corruption, cfg.data.seed,
                       eval_split ? kEvalSplit : kTrainSplit, vocab, cfg.model.max_len,
                       cfg.model.dim);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                int threads, bool verbose) {
    cfg.validate(true);
    const Vocab vocab = build_vocab(cfg.data.charset);
    const std::string config_text = serialize_config(cfg);

    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    const Dataset train_data = build_split(cfg, vocab, false);
    const Dataset eval_data = build_split(cfg, vocab, true);

    std::ofstream metrics_file;
    if (!out_dir.empty()) {
        metrics_file.open(out_dir + "/metrics.jsonl", std::ios::trunc);
    }
    MetricsSink metrics = [&](const StepMetrics& m) {
        if (metrics_file.is_open()) {
            metrics_file << json{{"step", m.step},         {"loss_d", m.loss_d},
                                 {"loss_c", m.loss_c},     {"lr", m.lr},
                                 {"grad_norm", m.grad_norm}, {"wall_ms", m.wall_ms}}
                                .dump()
                         << "\n";
        }
        if (verbose && (m.step % 500 == 0 || m.step + 1 == cfg.train.total_steps)) {
            std::cerr << "step " << m.step << " loss_d " << m.loss_d << " loss_c " << m.loss_c
                      << " lr " << m.lr << "\n";
        }
    };
    CheckpointSink ckpts = [&](int step, const Params<float>& p) {
        if (out_dir.empty()) return;
        const std::string path = step == cfg.train.total_steps
                                     ? out_dir + "/ckpt.md4s"
                                     : out_dir + "/ckpt_step" + std::to_string(step) + ".md4s";
        save_checkpoint(path, checkpoint_from_params(p, config_text, step));
    };

    ExperimentResult result;
    result.config = cfg;
    result.config_hash = cfg.hash();
    result.params = train_loop(cfg.model, cfg.train, train_data, vocab, cfg.data.seed, threads,
                               metrics, ckpts);

    const int K = cfg.infer.steps;
    const int re_steps = cfg.infer.policy == PolicyKind::Re ? cfg.infer.steps : 2;
    const std::vector<RemaskPolicy> policies = {
        make_policy(PolicyKind::PD, 1, cfg.model.max_len),
        make_policy(PolicyKind::AR, 0, cfg.model.max_len),
        make_policy(PolicyKind::Re, re_steps, cfg.model.max_len),
        make_policy(PolicyKind::LC, K, cfg.model.max_len),
        make_policy(PolicyKind::BLC, K, cfg.model.max_len),
    };
    for (const RemaskPolicy& p : policies) {
        result.policies.push_back(evaluate_policy(result.params, eval_data, vocab, p, threads));
        if (verbose) {
            const PolicyEval& ev = result.policies.back();
            std::cerr << to_string(ev.kind) << " acc " << ev.word_acc << " occluded "
                      << ev.word_acc_occluded << "\n";
        }
    }
    result.probe = injected_error_probe(result.params, eval_data, vocab, 2, cfg.data.seed);

    if (!out_dir.empty()) {
        std::ofstream report(out_dir + "/report.json", std::ios::trunc);
        report << report_to_json(result) << "\n";
    }
    return result;
}

std::string report_to_json(const ExperimentResult& result) {
    json j;
    j["config_hash"] = result.config_hash;
    j["policies"] = json::array();
    for (const PolicyEval& ev : result.policies) j["policies"].push_back(policy_to_json(ev));
    j["error_probe"] = {{"corrected_fraction", result.probe.corrected_fraction},
                        {"n_errors", result.probe.n_errors}};
    return j.dump(2);
}

void save_dataset(const std::string& path, const Dataset& data, const std::string& config_text) {
    const int n = int(data.samples.size());
    if (n == 0) throw std::invalid_argument("refusing to save an empty dataset");
    const int len = int(data.samples[0].ids.size());
    const int dim = data.codebook.shape[1];

    Checkpoint ckpt;
    ckpt.config_text = config_text;
    ckpt.step = 0;
    Tensor<float> ids({n, len}), occl({n, len}), subst({n, len});
    Tensor<float> grids({n, len, dim});
    for (int i = 0; i < n; ++i) {
        const Sample& s = data.samples[size_t(i)];
        for (int p = 0; p < len; ++p) {
            ids.v[size_t(i) * len + size_t(p)] = float(s.ids[size_t(p)]);
            occl.v[size_t(i) * len + size_t(p)] = float(s.grid.occluded[size_t(p)]);
            subst.v[size_t(i) * len + size_t(p)] = float(s.grid.substituted[size_t(p)]);
        }
        std::copy(s.grid.values.v.begin(), s.grid.values.v.end(),
                  grids.v.begin() + size_t(i) * size_t(len) * size_t(dim));
    }
    ckpt.tensors.emplace_back("ids", std::move(ids));
    ckpt.tensors.emplace_back("grids", std::move(grids));
    ckpt.tensors.emplace_back("occluded", std::move(occl));
    ckpt.tensors.emplace_back("substituted", std::move(subst));
    ckpt.tensors.emplace_back("codebook", data.codebook);
    save_checkpoint(path, ckpt);
}

Dataset load_dataset(const std::string& path, const Vocab& vocab) {
    const Checkpoint ckpt = load_checkpoint(path);
    auto find = [&ckpt, &path](const std::string& name) -> const Tensor<float>& {
        for (const auto& [n, t] : ckpt.tensors) {
            if (n == name) return t;
        }
        throw std::runtime_error("dataset cache " + path + " is missing tensor " + name);
    };
    const Tensor<float>& ids = find("ids");
    const Tensor<float>& grids = find("grids");
    const Tensor<float>& occl = find("occluded");
    const Tensor<float>& subst = find("substituted");

    Dataset data;
    data.codebook = find("codebook");
    const int n = ids.shape[0], len = ids.shape[1], dim = grids.shape[2];
    data.samples.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        Sample& s = data.samples[size_t(i)];
        s.ids.resize(size_t(len));
        s.grid.values = Tensor<float>({len, dim});
        s.grid.occluded.resize(size_t(len));
        s.grid.substituted.resize(size_t(len));
        for (int p = 0; p < len; ++p) {
            s.ids[size_t(p)] = int(ids.v[size_t(i) * len + size_t(p)]);
            s.grid.occluded[size_t(p)] = occl.v[size_t(i) * len + size_t(p)] != 0;
            s.grid.substituted[size_t(p)] = subst.v[size_t(i) * len + size_t(p)] != 0;
        }
        std::copy(grids.v.begin() + size_t(i) * size_t(len) * size_t(dim),
                  grids.v.begin() + size_t(i + 1) * size_t(len) * size_t(dim),
                  s.grid.values.v.begin());
        s.text = decode(s.ids, vocab);
        for (size_t p = 0; p < s.text.size(); ++p) {
            if (s.grid.occluded[p]) s.occluded_text = true;
            if (s.grid.substituted[p]) s.substituted_text = true;
        }
    }
    return data;
}

std::vector<AblationCell> run_ablation(const ExperimentConfig& base, const std::string& out_dir,
                                       int threads, int k_sweep_max) {
    const uint64_t base_hash = base.hash();
    std::vector<AblationCell> cells;
    const std::vector<MaskStrategy> random_only = {MaskStrategy::RandomMask};
    struct CellSpec {
        const char* name;
        bool all_strategies;
        bool trn;
    };
    const CellSpec specs[] = {
        {"random_no_trn", false, false},
        {"random_trn", false, true},
        {"all_no_trn", true, false},
        {"all_trn", true, true},
    };
    for (const CellSpec& spec : specs) {
        ExperimentConfig cfg = base;
        cfg.train.mask_strategies = spec.all_strategies ? all_mask_strategies() : random_only;
        cfg.train.trn_enabled = spec.trn;
        std::cerr << "=== ablation cell " << spec.name << " ===\n";
        AblationCell cell;
        cell.name = spec.name;
        cell.result =
            run_experiment(cfg, out_dir.empty() ? "" : out_dir + "/" + spec.name, threads);
        cell.result.config_hash = base_hash;  // cells report the shared base
        cells.push_back(std::move(cell));
    }

    // step-count sweep of the confidence policies on the full cell
    const ExperimentResult& full = cells.back().result;
    const Vocab vocab = build_vocab(base.data.charset);
    const Dataset eval_data = build_split(full.config, vocab, true);
    json sweep = json::array();
    for (int k = 1; k <= k_sweep_max && k <= base.model.max_len; ++k) {
        PolicyEval lc = evaluate_policy(full.params, eval_data, vocab,
                                        make_policy(PolicyKind::LC, k, base.model.max_len),
                                        threads);
        PolicyEval blc = evaluate_policy(full.params, eval_data, vocab,
                                         make_policy(PolicyKind::BLC, k, base.model.max_len),
                                         threads);
        sweep.push_back(json{{"steps", k},
                             {"lc_acc", lc.word_acc},
                             {"lc_acc_occluded", lc.word_acc_occluded},
                             {"blc_acc", blc.word_acc},
                             {"blc_acc_occluded", blc.word_acc_occluded}});
        std::cout << "steps " << k << " lc " << lc.word_acc << " blc " << blc.word_acc
                  << " blc_occluded " << blc.word_acc_occluded << "\n";
    }

    if (!out_dir.empty()) {
        json j;
        j["base_config_hash"] = base_hash;
        j["cells"] = json::array();
        for (const AblationCell& c : cells) {
            json cj = json::parse(report_to_json(c.result));
            cj["name"] = c.name;
            j["cells"].push_back(cj);
        }
        j["k_sweep"] = sweep;
        std::ofstream out(out_dir + "/ablation.json", std::ios::trunc);
        out << j.dump(2) << "\n";
    }
    return cells;
}

}  // namespace mdiff
