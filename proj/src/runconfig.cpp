#include "cpf/runconfig.hpp"

#include <fstream>
#include <sstream>

#include "cpf/errors.hpp"

namespace cpf {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

std::uint64_t to_count(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long r = std::stoll(v, &used);
        if (used != v.size() || r < 0) throw std::invalid_argument(v);
        return static_cast<std::uint64_t>(r);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(static_cast<std::size_t>(to_count(key, tok)));
    }
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
    return out;
}

} // namespace

void RunConfig::set_seed(std::uint64_t seed) {
    train.seed = seed;
    split.seed = seed;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (split.n_folds == 0) throw ConfigError("split.n_folds must be positive");
    if (split.test_fraction <= 0.0 || split.test_fraction >= 1.0)
        throw ConfigError("split.test_fraction must be in (0, 1)");
}

RunConfig RunConfig::from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
    RunConfig cfg;
    // Profile first, then overrides in order.
    for (const auto& [key, value] : pairs) {
        if (key != "profile") continue;
        cfg.profile = value;
        if (value == "desk") cfg.model = ModelConfig::desk();
        else if (value == "paper") cfg.model = ModelConfig::paper();
        else throw ConfigError("unknown profile '" + value + "' (expected desk or paper)");
    }

    for (const auto& [key, value] : pairs) {
        if (key == "profile") continue;
        else if (key == "model.d_model") cfg.model.d_model = to_count(key, value);
        else if (key == "model.n_heads") cfg.model.n_heads = to_count(key, value);
        else if (key == "model.n_layers") cfg.model.n_layers = to_count(key, value);
        else if (key == "model.num_patterns") cfg.model.num_patterns = to_count(key, value);
        else if (key == "model.pool_factor") cfg.model.pool_factor = to_count(key, value);
        else if (key == "model.max_seq_len") cfg.model.max_seq_len = to_count(key, value);
        else if (key == "model.ffn_mult") cfg.model.ffn_mult = to_count(key, value);
        else if (key == "model.dropout") cfg.model.dropout = to_real(key, value);
        else if (key == "model.use_positional") cfg.model.use_positional = to_bool(key, value);
        else if (key == "model.use_temporal") cfg.model.use_temporal = to_bool(key, value);
        else if (key == "model.sample_rate_hz") cfg.model.sample_rate_hz = to_real(key, value);
        else if (key == "model.local_tau_tokens")
            cfg.model.local_tau_tokens = to_real(key, value);
        else if (key == "model.kernel_sizes") cfg.model.kernel_sizes = to_sizes(key, value);
        else if (key == "model.temporal_scales")
            cfg.model.temporal_scales = to_sizes(key, value);
        else if (key == "train.lr") cfg.train.lr = to_real(key, value);
        else if (key == "train.weight_decay") cfg.train.weight_decay = to_real(key, value);
        else if (key == "train.scheduler_factor")
            cfg.train.scheduler_factor = to_real(key, value);
        else if (key == "train.scheduler_patience")
            cfg.train.scheduler_patience = to_count(key, value);
        else if (key == "train.early_stop_patience")
            cfg.train.early_stop_patience = to_count(key, value);
        else if (key == "train.max_epochs") cfg.train.max_epochs = to_count(key, value);
        else if (key == "train.batch_size") cfg.train.batch_size = to_count(key, value);
        else if (key == "train.grad_accum_steps")
            cfg.train.grad_accum_steps = to_count(key, value);
        else if (key == "train.min_delta") cfg.train.min_delta = to_real(key, value);
        else if (key == "loss.alpha") cfg.train.loss.alpha = to_real(key, value);
        else if (key == "loss.gamma") cfg.train.loss.gamma = to_real(key, value);
        else if (key == "loss.cooccur_weight")
            cfg.train.loss.cooccur_weight = to_real(key, value);
        else if (key == "loss.diversity_weight")
            cfg.train.loss.diversity_weight = to_real(key, value);
        else if (key == "loss.uncertainty_weight")
            cfg.train.loss.uncertainty_weight = to_real(key, value);
        else if (key == "split.test_fraction") cfg.split.test_fraction = to_real(key, value);
        else if (key == "split.n_folds")
            cfg.split.n_folds = static_cast<std::size_t>(to_count(key, value));
        else if (key == "data.signals") cfg.signals_dir = value;
        else if (key == "data.labels") cfg.labels_path = value;
        else if (key == "data.labelmap") cfg.labelmap_path = value;
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "seed") cfg.set_seed(to_count(key, value));
        else throw ConfigError("unknown config key '" + key + "'");
    }
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        pairs.emplace_back(key, value);
    }
    return from_pairs(pairs);
}

} // namespace cpf
