#include "cpf/model_config.hpp"

#include <cmath>

#include "cpf/errors.hpp"

namespace cpf {

void ModelConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || n_layers == 0 || num_patterns == 0)
        throw ConfigError("model dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (pool_factor == 0) throw ConfigError("pool_factor must be positive");
    if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
    if (kernel_sizes.empty() || temporal_scales.empty())
        throw ConfigError("kernel_sizes and temporal_scales must be nonempty");
    for (std::size_t k : kernel_sizes)
        if (k % 2 == 0) throw ConfigError("conv kernel sizes must be odd");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

double ModelConfig::local_tau() const {
    if (local_tau_tokens > 0.0) return local_tau_tokens;
    return static_cast<double>(max_seq_len) / 10.0;
}

std::vector<double> ModelConfig::rhythm_periods() const {
    // beat period in tokens at 40 and 180 bpm
    double p_max = token_rate_hz() * 60.0 / 40.0;
    double p_min = token_rate_hz() * 60.0 / 180.0;
    std::vector<double> periods(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        double t = n_heads > 1 ? static_cast<double>(h) / static_cast<double>(n_heads - 1) : 0.5;
        periods[h] = p_min * std::pow(p_max / p_min, t);
    }
    return periods;
}

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.d_model = 32;
    c.n_heads = 4;
    c.n_layers = 2;
    c.max_seq_len = 64;
    return c;
}

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.d_model = 256;
    c.n_heads = 8;
    c.n_layers = 4;
    c.max_seq_len = 256;
    return c;
}

} // namespace cpf
