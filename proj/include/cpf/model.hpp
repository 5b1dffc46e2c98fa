#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cpf/autodiff.hpp"
#include "cpf/model_config.hpp"
#include "cpf/rng.hpp"
#include "cpf/tensor.hpp"

namespace cpf {

using ad::Var;

// Shared state threaded through a forward pass.
struct ForwardCtx {
    bool training = false;
    bool return_weights = false;
    Rng* rng = nullptr;
    std::vector<Tensor>* attention_sink = nullptr;  // per layer [H x T x T]
};

// ---- tokenizer --------------------------------------------------------------

struct TokenizerParams {
    std::vector<Var> conv_w;   // per scale [P x 12 x K]
    std::vector<Var> conv_b;   // per scale [P]
    Var proj_w;                // [S*P x d_model]
    Var proj_b;                // [d_model]
    Var pos;                   // [max_seq_len x d_model]
};

TokenizerParams init_tokenizer(const ModelConfig& cfg, Rng& rng);
// [12 x L] -> [T x d_model], T = ceil(L / pool_factor)
Var tokenize(const Var& x, const TokenizerParams& p, const ModelConfig& cfg);
// Pooled, pre-projection multi-scale features [S*P x T]; exposed for the
// translation-covariance property.
Var tokenize_pooled_features(const Var& x, const TokenizerParams& p, const ModelConfig& cfg);

// ---- temporal encoding -------------------------------------------------------

struct TemporalParams {
    std::vector<Var> emb;      // per scale r: [d_model x ceil(max_seq_len / r)]
    Var proj_w;                // [S*d_model x d_model]
    Var proj_b;                // [d_model]
};

TemporalParams init_temporal(const ModelConfig& cfg, Rng& rng);
Var temporal_encode(const Var& tokens, const TemporalParams& p, const ModelConfig& cfg);

// ---- physiologically guided attention ----------------------------------------

struct PhysioAttnParams {
    Var wq, wk, wv, wo;        // [d_model x d_model]
    Var local_strength;        // [1]
    Var rhythm_weight;         // [H]
    Var cyc_w1, cyc_b1;        // conv d_model -> 32, K=7
    Var cyc_w2, cyc_b2;        // conv 32 -> 3 phases, K=5
    Var phase_importance;      // [3]
    Var cycle_strength;        // [1]
    Var beat_kernel;           // [5]
    Var beat_strength;         // [1]
};

struct EncoderLayerParams {
    PhysioAttnParams attn;
    Var ln1_g, ln1_b, ln2_g, ln2_b;
    Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

PhysioAttnParams init_attention(const ModelConfig& cfg, Rng& rng);
EncoderLayerParams init_encoder_layer(const ModelConfig& cfg, Rng& rng);

struct AttnResult {
    Var out;                   // [T x d_model]
    Tensor weights;            // [H x T x T] when requested
};

AttnResult physio_attention(const Var& x, const PhysioAttnParams& p, const ModelConfig& cfg,
                            bool return_weights = false);
Var encoder_layer(const Var& x, const EncoderLayerParams& p, const ModelConfig& cfg,
                  ForwardCtx& ctx);
Var encoder_stack(const Var& x, const std::vector<EncoderLayerParams>& layers,
                  const ModelConfig& cfg, ForwardCtx& ctx);

// ---- diagnostic heads ---------------------------------------------------------

struct ExplainHeadParams {
    // per class: scorer d_model -> 64 -> 1 (tanh hidden), predictor d_model -> 1
    std::vector<Var> att_w1, att_b1, att_w2, att_b2;
    std::vector<Var> pred_w, pred_b;
};

struct AdaptivePoolParams {
    Var rel_w, rel_b;          // d_model -> 1
    Var cls_w1, cls_b1, cls_w2, cls_b2;  // d_model -> 128 -> 6
    Var unc_w1, unc_b1, unc_w2, unc_b2;  // d_model -> 64 -> 6, sigmoid
};

struct FusionParams {
    Var alpha;                 // [2], softmaxed into convex weights
};

ExplainHeadParams init_explain_head(const ModelConfig& cfg, Rng& rng);
AdaptivePoolParams init_adaptive_pool(const ModelConfig& cfg, Rng& rng);
FusionParams init_fusion(Rng& rng);

struct ExplainResult {
    Var logits;                // [1 x C]
    Var maps;                  // [C x T], rows are distributions
};
ExplainResult explain_head(const Var& h, const ExplainHeadParams& p, const ModelConfig& cfg);

struct AdaptiveResult {
    Var logits;                // [1 x C]
    Var relevance;             // [T x 1], in (0,1)
    Var uncertainty;           // [1 x C], in (0,1)
};
AdaptiveResult adaptive_head(const Var& h, const AdaptivePoolParams& p, const ModelConfig& cfg);

Var fuse(const Var& logits_explain, const Var& logits_adaptive, const FusionParams& f);

// ---- full model ---------------------------------------------------------------

struct ModelParams {
    TokenizerParams tokenizer;
    TemporalParams temporal;
    std::vector<EncoderLayerParams> layers;
    ExplainHeadParams explain;
    AdaptivePoolParams adaptive;
    FusionParams fusion;

    std::vector<std::pair<std::string, Var>> named() const;
    std::vector<Var> all() const;
};

ModelParams init_model(const ModelConfig& cfg, Rng& rng);

struct ModelOutput {
    Var logits;                // fused, [1 x C]
    Var logits_explain;
    Var logits_adaptive;
    Var maps;                  // [C x T]
    Var relevance;             // [T x 1]
    Var uncertainty;           // [1 x C]
    std::vector<Tensor> attention;  // per layer [H x T x T], when requested
};

struct ForwardOptions {
    bool training = false;
    bool return_weights = false;
    Rng* rng = nullptr;
};

ModelOutput model_forward(const Tensor& signal, const ModelParams& p, const ModelConfig& cfg,
                          const ForwardOptions& opt = {});

} // namespace cpf
