#include "cpf/errors.hpp"
#include "cpf/model.hpp"
#include "param_init.hpp"

namespace cpf {

using namespace ad;

namespace {
std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }
} // namespace

TemporalParams init_temporal(const ModelConfig& cfg, Rng& rng) {
    TemporalParams p;
    for (std::size_t r : cfg.temporal_scales)
        p.emb.push_back(
            detail::normal_init({cfg.d_model, ceil_div(cfg.max_seq_len, r)}, 0.02, rng));
    std::size_t width = cfg.temporal_scales.size() * cfg.d_model;
    p.proj_w = detail::kaiming({width, cfg.d_model}, width, rng);
    p.proj_b = detail::fill_init({cfg.d_model}, 0.0);
    return p;
}

Var temporal_encode(const Var& tokens, const TemporalParams& p, const ModelConfig& cfg) {
    std::size_t t_len = tokens->value.rows();
    if (t_len > cfg.max_seq_len)
        throw ConfigError("temporal_encode: sequence exceeds max_seq_len");
    std::vector<Var> paths;
    paths.reserve(cfg.temporal_scales.size());
    for (std::size_t s = 0; s < cfg.temporal_scales.size(); ++s) {
        std::size_t src_len = ceil_div(t_len, cfg.temporal_scales[s]);
        Var sliced = src_len == p.emb[s]->value.cols() ? p.emb[s]
                                                       : slice_cols(p.emb[s], 0, src_len);
        paths.push_back(src_len == t_len ? sliced : linear_interpolate_1d(sliced, t_len));
    }
    Var concat = concat_rows(paths);                      // [S*d x T]
    Var enc = linear(transpose(concat), p.proj_w, p.proj_b);  // [T x d]
    return add(tokens, enc);
}

} // namespace cpf
