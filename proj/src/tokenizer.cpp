#include <algorithm>

#include "cpf/errors.hpp"
#include "cpf/model.hpp"
#include "param_init.hpp"

namespace cpf {

using namespace ad;

TokenizerParams init_tokenizer(const ModelConfig& cfg, Rng& rng) {
    TokenizerParams p;
    for (std::size_t k : cfg.kernel_sizes) {
        p.conv_w.push_back(detail::kaiming({cfg.num_patterns, 12, k}, 12 * k, rng));
        p.conv_b.push_back(detail::fill_init({cfg.num_patterns}, 0.0));
    }
    std::size_t width = cfg.concat_channels();
    p.proj_w = detail::kaiming({width, cfg.d_model}, width, rng);
    p.proj_b = detail::fill_init({cfg.d_model}, 0.0);
    p.pos = detail::normal_init({cfg.max_seq_len, cfg.d_model}, 0.02, rng);
    return p;
}

Var tokenize_pooled_features(const Var& x, const TokenizerParams& p, const ModelConfig& cfg) {
    std::size_t len = x->value.cols();
    std::size_t k_max = *std::max_element(cfg.kernel_sizes.begin(), cfg.kernel_sizes.end());
    if (len < k_max)
        throw InputError("input length " + std::to_string(len) + " shorter than largest kernel " +
                         std::to_string(k_max));
    std::vector<Var> scales;
    scales.reserve(cfg.kernel_sizes.size());
    for (std::size_t s = 0; s < cfg.kernel_sizes.size(); ++s)
        scales.push_back(gelu(conv1d(x, p.conv_w[s], p.conv_b[s])));
    return avgpool1d(concat_rows(scales), cfg.pool_factor);
}

Var tokenize(const Var& x, const TokenizerParams& p, const ModelConfig& cfg) {
    Var pooled = tokenize_pooled_features(x, p, cfg);  // [S*P x T]
    std::size_t t_len = pooled->value.cols();
    if (t_len > cfg.max_seq_len)
        throw ConfigError("sequence of " + std::to_string(t_len) +
                          " tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    Var tokens = linear(transpose(pooled), p.proj_w, p.proj_b);  // [T x d_model]
    if (cfg.use_positional) tokens = add(tokens, slice_rows(p.pos, 0, t_len));
    return tokens;
}

} // namespace cpf
