#include <cmath>

#include "cpf/errors.hpp"
#include "cpf/model.hpp"
#include "param_init.hpp"

namespace cpf {

using namespace ad;

namespace {
constexpr double kTwoPi = 6.28318530717958647692;
constexpr std::size_t kCycleHidden = 32;
constexpr std::size_t kNumPhases = 3;  // P, QRS, T
} // namespace

PhysioAttnParams init_attention(const ModelConfig& cfg, Rng& rng) {
    std::size_t d = cfg.d_model;
    PhysioAttnParams p;
    p.wq = detail::kaiming({d, d}, d, rng);
    p.wk = detail::kaiming({d, d}, d, rng);
    p.wv = detail::kaiming({d, d}, d, rng);
    p.wo = detail::kaiming({d, d}, d, rng);
    p.local_strength = detail::fill_init({1}, 0.1);
    p.rhythm_weight = detail::fill_init({cfg.n_heads}, 0.1);
    p.cyc_w1 = detail::kaiming({kCycleHidden, d, 7}, d * 7, rng);
    p.cyc_b1 = detail::fill_init({kCycleHidden}, 0.0);
    p.cyc_w2 = detail::kaiming({kNumPhases, kCycleHidden, 5}, kCycleHidden * 5, rng);
    p.cyc_b2 = detail::fill_init({kNumPhases}, 0.0);
    p.phase_importance = detail::fill_init({kNumPhases}, 1.0 / 3.0);
    p.cycle_strength = detail::fill_init({1}, 0.1);
    p.beat_kernel = detail::fill_init({5}, 0.2);
    p.beat_strength = detail::fill_init({1}, 0.1);
    return p;
}

EncoderLayerParams init_encoder_layer(const ModelConfig& cfg, Rng& rng) {
    std::size_t d = cfg.d_model, f = cfg.ffn_mult * cfg.d_model;
    EncoderLayerParams p;
    p.attn = init_attention(cfg, rng);
    p.ln1_g = detail::fill_init({d}, 1.0);
    p.ln1_b = detail::fill_init({d}, 0.0);
    p.ln2_g = detail::fill_init({d}, 1.0);
    p.ln2_b = detail::fill_init({d}, 0.0);
    p.ffn_w1 = detail::kaiming({d, f}, d, rng);
    p.ffn_b1 = detail::fill_init({f}, 0.0);
    p.ffn_w2 = detail::kaiming({f, d}, f, rng);
    p.ffn_b2 = detail::fill_init({d}, 0.0);
    return p;
}

AttnResult physio_attention(const Var& x, const PhysioAttnParams& p, const ModelConfig& cfg,
                            bool return_weights) {
    std::size_t t_len = x->value.rows();
    std::size_t dh = cfg.head_dim();
    double tau = cfg.local_tau();
    auto periods = cfg.rhythm_periods();

    Var q = matmul(x, p.wq);
    Var k = matmul(x, p.wk);
    Var v = matmul(x, p.wv);

    // Local-context prior: fixed exponential-decay kernel over |i-j|, scaled
    // by the learnable strength.
    Tensor local_kernel({t_len, t_len});
    for (std::size_t i = 0; i < t_len; ++i)
        for (std::size_t j = 0; j < t_len; ++j)
            local_kernel.at(i, j) =
                std::exp(-std::fabs(static_cast<double>(i) - static_cast<double>(j)) / tau);
    Var local_bias = mul_scalarvar(p.local_strength, constant(std::move(local_kernel)));

    // Cycle-phase prior: conv net over token embeddings predicts phase
    // likelihoods per position; the bias is constant along the query axis.
    Var phases = softmax(conv1d(gelu(conv1d(transpose(x), p.cyc_w1, p.cyc_b1)),
                                p.cyc_w2, p.cyc_b2),
                         0);                                        // [3 x T]
    Var phase_score = matmul(reshape(p.phase_importance, {1, kNumPhases}), phases);  // [1 x T]
    Var cycle_bias = broadcast_row(mul_scalarvar(p.cycle_strength, phase_score), t_len);

    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> head_outputs;
    head_outputs.reserve(cfg.n_heads);
    Tensor weights;
    if (return_weights) weights = Tensor({cfg.n_heads, t_len, t_len});

    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        Var scores = scalar_mul(matmul(qh, transpose(kh)), inv_sqrt_dh);

        Tensor rhythm_kernel({t_len, t_len});
        for (std::size_t i = 0; i < t_len; ++i)
            for (std::size_t j = 0; j < t_len; ++j)
                rhythm_kernel.at(i, j) = std::cos(
                    kTwoPi * (static_cast<double>(i) - static_cast<double>(j)) / periods[h]);
        Var rhythm_bias =
            mul_scalarvar(gather_scalar(p.rhythm_weight, h), constant(std::move(rhythm_kernel)));

        // Beat-consistency prior: smooth the raw scores along the key axis.
        Var beat_bias = mul_scalarvar(p.beat_strength, conv1d_rows(scores, p.beat_kernel));

        Var biased = add(add(add(add(scores, local_bias), rhythm_bias), cycle_bias), beat_bias);
        Var attn = softmax(biased, 1);
        if (return_weights)
            std::copy(attn->value.data.begin(), attn->value.data.end(),
                      weights.data.begin() + h * t_len * t_len);
        head_outputs.push_back(matmul(attn, vh));
    }

    AttnResult result;
    result.out = matmul(concat_cols(head_outputs), p.wo);
    if (return_weights) result.weights = std::move(weights);
    return result;
}

Var encoder_layer(const Var& x, const EncoderLayerParams& p, const ModelConfig& cfg,
                  ForwardCtx& ctx) {
    AttnResult attn = physio_attention(layernorm(x, p.ln1_g, p.ln1_b), p.attn, cfg,
                                       ctx.return_weights);
    if (ctx.return_weights && ctx.attention_sink)
        ctx.attention_sink->push_back(std::move(attn.weights));
    Var a = attn.out;
    if (ctx.training && ctx.rng) a = dropout(a, cfg.dropout, *ctx.rng, true);
    Var x1 = add(x, a);

    Var f = linear(gelu(linear(layernorm(x1, p.ln2_g, p.ln2_b), p.ffn_w1, p.ffn_b1)),
                   p.ffn_w2, p.ffn_b2);
    if (ctx.training && ctx.rng) f = dropout(f, cfg.dropout, *ctx.rng, true);
    return add(x1, f);
}

Var encoder_stack(const Var& x, const std::vector<EncoderLayerParams>& layers,
                  const ModelConfig& cfg, ForwardCtx& ctx) {
    Var h = x;
    for (const auto& layer : layers) h = encoder_layer(h, layer, cfg, ctx);
    return h;
}

} // namespace cpf
