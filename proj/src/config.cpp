#include "mdiff/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mdiff/rng.hpp"

namespace mdiff {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, int lineno) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config line " + std::to_string(lineno) + ": expected bool, got \"" +
                             v + "\"");
}

}  // namespace

std::vector<MaskStrategy> parse_mask_strategies(const std::string& spec) {
    if (spec == "all") return all_mask_strategies();
    std::vector<MaskStrategy> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        bool found = false;
        for (MaskStrategy s : all_mask_strategies()) {
            if (item == to_string(s)) {
                out.push_back(s);
                found = true;
                break;
            }
        }
        if (!found) throw std::runtime_error("unknown mask strategy: " + item);
    }
    if (out.empty()) throw std::runtime_error("empty mask strategy set");
    return out;
}

std::string format_mask_strategies(const std::vector<MaskStrategy>& set) {
    if (set.size() == all_mask_strategies().size()) return "all";
    std::string out;
    for (size_t i = 0; i < set.size(); ++i) {
        if (i) out += ",";
        out += to_string(set[i]);
    }
    return out;
}

void ExperimentConfig::finalize() {
    model.vocab_size = int(data.charset.size()) + 2;
    model.feat_len = model.max_len;
    train.blc_steps = infer.steps;
    validate(false);
}

void ExperimentConfig::validate(bool check_files) const {
    model.validate();
    data.corruption.validate();
    if (data.n_train < 1 || data.n_eval < 1) {
        throw std::invalid_argument("n_train and n_eval must be >= 1");
    }
    if (train.branch_correction_prob < 0 || train.branch_correction_prob > 1) {
        throw std::invalid_argument("branch_correction_prob must lie in [0, 1]");
    }
    // normalizes or throws on an inconsistent policy/step pairing
    make_policy(infer.policy, infer.steps, model.max_len);
    if (check_files && !std::filesystem::exists(data.lexicon_path)) {
        throw std::runtime_error("lexicon file does not exist: " + data.lexicon_path);
    }
}

uint64_t ExperimentConfig::hash() const { return hash_str(serialize_config(*this)); }

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    bool saw_version = false;

    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            if (section != "model" && section != "train" && section != "data" &&
                section != "infer") {
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": unknown section [" + section + "]");
            }
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const std::string qual = section.empty() ? key : section + "." + key;

        try {
            if (qual == "config_version") {
                if (std::stoi(val) != kConfigVersion) {
                    throw std::runtime_error("unsupported config_version " + val);
                }
                saw_version = true;
            } else if (qual == "model.max_len") {
                cfg.model.max_len = std::stoi(val);
            } else if (qual == "model.dim") {
                cfg.model.dim = std::stoi(val);
            } else if (qual == "model.n_layers") {
                cfg.model.n_layers = std::stoi(val);
            } else if (qual == "model.n_heads") {
                cfg.model.n_heads = std::stoi(val);
            } else if (qual == "model.ffn_dim") {
                cfg.model.ffn_dim = std::stoi(val);
            } else if (qual == "train.lr") {
                cfg.train.lr = std::stod(val);
            } else if (qual == "train.weight_decay") {
                cfg.train.weight_decay = std::stod(val);
            } else if (qual == "train.warmup_steps") {
                cfg.train.warmup_steps = std::stoi(val);
            } else if (qual == "train.total_steps") {
                cfg.train.total_steps = std::stoi(val);
            } else if (qual == "train.batch_size") {
                cfg.train.batch_size = std::stoi(val);
            } else if (qual == "train.branch_correction_prob") {
                cfg.train.branch_correction_prob = std::stod(val);
            } else if (qual == "train.trn_enabled") {
                cfg.train.trn_enabled = parse_bool(val, lineno);
            } else if (qual == "train.mask_strategies") {
                cfg.train.mask_strategies = parse_mask_strategies(val);
            } else if (qual == "train.ckpt_every") {
                cfg.train.ckpt_every = std::stoi(val);
            } else if (qual == "data.charset") {
                cfg.data.charset = val;
            } else if (qual == "data.lexicon") {
                cfg.data.lexicon_path = val;
            } else if (qual == "data.n_train") {
                cfg.data.n_train = std::stoi(val);
            } else if (qual == "data.n_eval") {
                cfg.data.n_eval = std::stoi(val);
            } else if (qual == "data.occlusion_rate") {
                cfg.data.corruption.occlusion_rate = std::stod(val);
            } else if (qual == "data.substitution_rate") {
                cfg.data.corruption.substitution_rate = std::stod(val);
            } else if (qual == "data.noise_sigma") {
                cfg.data.corruption.noise_sigma = std::stod(val);
            } else if (qual == "data.seed") {
                cfg.data.seed = std::stoull(val);
            } else if (qual == "infer.policy") {
                cfg.infer.policy = policy_from_string(val);
            } else if (qual == "infer.steps") {
                cfg.infer.steps = std::stoi(val);
            } else {
                throw std::runtime_error("unknown key");
            }
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("config line " + std::to_string(lineno) + " (" + qual +
                                     "): " + e.what());
        } catch (const std::exception& e) {
            throw std::runtime_error("config line " + std::to_string(lineno) + " (" + qual +
                                     "): bad value \"" + val + "\"");
        }
    }
    if (!saw_version) throw std::runtime_error("config is missing config_version");
    cfg.finalize();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "config_version = " << kConfigVersion << "\n\n";
    os << "[model]\n";
    os << "max_len = " << cfg.model.max_len << "\n";
    os << "dim = " << cfg.model.dim << "\n";
    os << "n_layers = " << cfg.model.n_layers << "\n";
    os << "n_heads = " << cfg.model.n_heads << "\n";
    os << "ffn_dim = " << cfg.model.ffn_dim << "\n\n";
    os << "[train]\n";
    os << "lr = " << cfg.train.lr << "\n";
    os << "weight_decay = " << cfg.train.weight_decay << "\n";
    os << "warmup_steps = " << cfg.train.warmup_steps << "\n";
    os << "total_steps = " << cfg.train.total_steps << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "branch_correction_prob = " << cfg.train.branch_correction_prob << "\n";
    os << "trn_enabled = " << (cfg.train.trn_enabled ? "true" : "false") << "\n";
    os << "mask_strategies = " << format_mask_strategies(cfg.train.mask_strategies) << "\n";
    os << "ckpt_every = " << cfg.train.ckpt_every << "\n\n";
    os << "[data]\n";
    os << "charset = " << cfg.data.charset << "\n";
    os << "lexicon = " << cfg.data.lexicon_path << "\n";
    os << "n_train = " << cfg.data.n_train << "\n";
    os << "n_eval = " << cfg.data.n_eval << "\n";
    os << "occlusion_rate = " << cfg.data.corruption.occlusion_rate << "\n";
    os << "substitution_rate = " << cfg.data.corruption.substitution_rate << "\n";
    os << "noise_sigma = " << cfg.data.corruption.noise_sigma << "\n";
    os << "seed = " << cfg.data.seed << "\n\n";
    os << "[infer]\n";
    os << "policy = " << to_string(cfg.infer.policy) << "\n";
    os << "steps = " << cfg.infer.steps << "\n";
    return os.str();
}

}  // namespace mdiff
