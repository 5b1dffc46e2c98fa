#pragma once

#include <cstddef>
#include <vector>

namespace cpf {

struct ModelConfig {
    std::size_t d_model = 32;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t num_patterns = 16;       // conv channels per scale
    std::size_t pool_factor = 4;         // token stride in samples
    std::size_t max_seq_len = 64;        // tokens
    std::size_t n_classes = 6;
    std::size_t ffn_mult = 4;
    double dropout = 0.1;
    bool use_positional = true;
    bool use_temporal = true;
    double sample_rate_hz = 100.0;       // post-resample input rate
    double local_tau_tokens = 0.0;       // 0 -> max_seq_len / 10

    std::vector<std::size_t> kernel_sizes = {5, 9, 15, 25, 35};
    std::vector<std::size_t> temporal_scales = {1, 2, 5, 10, 20};

    void validate() const;

    double token_rate_hz() const { return sample_rate_hz / static_cast<double>(pool_factor); }
    double local_tau() const;
    // Fixed per-head rhythm periods (tokens), geometric over 40-180 bpm.
    std::vector<double> rhythm_periods() const;
    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t concat_channels() const { return kernel_sizes.size() * num_patterns; }

    static ModelConfig desk();
    static ModelConfig paper();
};

} // namespace cpf
