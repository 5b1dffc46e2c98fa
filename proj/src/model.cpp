#include "cpf/model.hpp"

#include "cpf/errors.hpp"

namespace cpf {

using namespace ad;

ModelParams init_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    p.tokenizer = init_tokenizer(cfg, rng);
    p.temporal = init_temporal(cfg, rng);
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
        p.layers.push_back(init_encoder_layer(cfg, rng));
    p.explain = init_explain_head(cfg, rng);
    p.adaptive = init_adaptive_pool(cfg, rng);
    p.fusion = init_fusion(rng);
    return p;
}

std::vector<std::pair<std::string, Var>> ModelParams::named() const {
    std::vector<std::pair<std::string, Var>> out;
    auto put = [&out](const std::string& name, const Var& v) { out.emplace_back(name, v); };

    for (std::size_t s = 0; s < tokenizer.conv_w.size(); ++s) {
        put("tokenizer.conv_w" + std::to_string(s), tokenizer.conv_w[s]);
        put("tokenizer.conv_b" + std::to_string(s), tokenizer.conv_b[s]);
    }
    put("tokenizer.proj_w", tokenizer.proj_w);
    put("tokenizer.proj_b", tokenizer.proj_b);
    put("tokenizer.pos", tokenizer.pos);

    for (std::size_t s = 0; s < temporal.emb.size(); ++s)
        put("temporal.emb" + std::to_string(s), temporal.emb[s]);
    put("temporal.proj_w", temporal.proj_w);
    put("temporal.proj_b", temporal.proj_b);

    for (std::size_t l = 0; l < layers.size(); ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        const auto& lp = layers[l];
        put(pre + "wq", lp.attn.wq);
        put(pre + "wk", lp.attn.wk);
        put(pre + "wv", lp.attn.wv);
        put(pre + "wo", lp.attn.wo);
        put(pre + "local_strength", lp.attn.local_strength);
        put(pre + "rhythm_weight", lp.attn.rhythm_weight);
        put(pre + "cyc_w1", lp.attn.cyc_w1);
        put(pre + "cyc_b1", lp.attn.cyc_b1);
        put(pre + "cyc_w2", lp.attn.cyc_w2);
        put(pre + "cyc_b2", lp.attn.cyc_b2);
        put(pre + "phase_importance", lp.attn.phase_importance);
        put(pre + "cycle_strength", lp.attn.cycle_strength);
        put(pre + "beat_kernel", lp.attn.beat_kernel);
        put(pre + "beat_strength", lp.attn.beat_strength);
        put(pre + "ln1_g", lp.ln1_g);
        put(pre + "ln1_b", lp.ln1_b);
        put(pre + "ln2_g", lp.ln2_g);
        put(pre + "ln2_b", lp.ln2_b);
        put(pre + "ffn_w1", lp.ffn_w1);
        put(pre + "ffn_b1", lp.ffn_b1);
        put(pre + "ffn_w2", lp.ffn_w2);
        put(pre + "ffn_b2", lp.ffn_b2);
    }

    for (std::size_t c = 0; c < explain.att_w1.size(); ++c) {
        std::string pre = "explain.class" + std::to_string(c) + ".";
        put(pre + "att_w1", explain.att_w1[c]);
        put(pre + "att_b1", explain.att_b1[c]);
        put(pre + "att_w2", explain.att_w2[c]);
        put(pre + "att_b2", explain.att_b2[c]);
        put(pre + "pred_w", explain.pred_w[c]);
        put(pre + "pred_b", explain.pred_b[c]);
    }

    put("adaptive.rel_w", adaptive.rel_w);
    put("adaptive.rel_b", adaptive.rel_b);
    put("adaptive.cls_w1", adaptive.cls_w1);
    put("adaptive.cls_b1", adaptive.cls_b1);
    put("adaptive.cls_w2", adaptive.cls_w2);
    put("adaptive.cls_b2", adaptive.cls_b2);
    put("adaptive.unc_w1", adaptive.unc_w1);
    put("adaptive.unc_b1", adaptive.unc_b1);
    put("adaptive.unc_w2", adaptive.unc_w2);
    put("adaptive.unc_b2", adaptive.unc_b2);

    put("fusion.alpha", fusion.alpha);
    return out;
}

std::vector<Var> ModelParams::all() const {
    std::vector<Var> out;
    for (auto& [name, v] : named()) out.push_back(v);
    return out;
}

ModelOutput model_forward(const Tensor& signal, const ModelParams& p, const ModelConfig& cfg,
                          const ForwardOptions& opt) {
    if (signal.ndim() != 2 || signal.shape[0] != 12)
        throw DimensionError("model input must be [12 x L], got " + signal.shape_str());
    if (opt.training && !opt.rng)
        throw ContractError("training forward requires an Rng for dropout");

    ModelOutput out;
    ForwardCtx ctx;
    ctx.training = opt.training;
    ctx.return_weights = opt.return_weights;
    ctx.rng = opt.rng;
    ctx.attention_sink = &out.attention;

    Var x = constant(signal);
    Var tokens = tokenize(x, p.tokenizer, cfg);
    if (cfg.use_temporal) tokens = temporal_encode(tokens, p.temporal, cfg);
    Var h = encoder_stack(tokens, p.layers, cfg, ctx);

    ExplainResult ex = explain_head(h, p.explain, cfg);
    AdaptiveResult ad_ = adaptive_head(h, p.adaptive, cfg);

    out.logits_explain = ex.logits;
    out.maps = ex.maps;
    out.logits_adaptive = ad_.logits;
    out.relevance = ad_.relevance;
    out.uncertainty = ad_.uncertainty;
    out.logits = fuse(ex.logits, ad_.logits, p.fusion);
    return out;
}

} // namespace cpf
