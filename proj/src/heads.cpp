#include "cpf/errors.hpp"
#include "cpf/model.hpp"
#include "param_init.hpp"

namespace cpf {

using namespace ad;

namespace {
constexpr std::size_t kScorerHidden = 64;
constexpr std::size_t kClassifierHidden = 128;
constexpr std::size_t kUncertaintyHidden = 64;
} // namespace

ExplainHeadParams init_explain_head(const ModelConfig& cfg, Rng& rng) {
    ExplainHeadParams p;
    std::size_t d = cfg.d_model;
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        p.att_w1.push_back(detail::kaiming({d, kScorerHidden}, d, rng));
        p.att_b1.push_back(detail::fill_init({kScorerHidden}, 0.0));
        p.att_w2.push_back(detail::kaiming({kScorerHidden, 1}, kScorerHidden, rng));
        p.att_b2.push_back(detail::fill_init({1}, 0.0));
        p.pred_w.push_back(detail::kaiming({d, 1}, d, rng));
        p.pred_b.push_back(detail::fill_init({1}, 0.0));
    }
    return p;
}

AdaptivePoolParams init_adaptive_pool(const ModelConfig& cfg, Rng& rng) {
    AdaptivePoolParams p;
    std::size_t d = cfg.d_model, c = cfg.n_classes;
    p.rel_w = detail::kaiming({d, 1}, d, rng);
    p.rel_b = detail::fill_init({1}, 0.0);
    p.cls_w1 = detail::kaiming({d, kClassifierHidden}, d, rng);
    p.cls_b1 = detail::fill_init({kClassifierHidden}, 0.0);
    p.cls_w2 = detail::kaiming({kClassifierHidden, c}, kClassifierHidden, rng);
    p.cls_b2 = detail::fill_init({c}, 0.0);
    p.unc_w1 = detail::kaiming({d, kUncertaintyHidden}, d, rng);
    p.unc_b1 = detail::fill_init({kUncertaintyHidden}, 0.0);
    p.unc_w2 = detail::kaiming({kUncertaintyHidden, c}, kUncertaintyHidden, rng);
    p.unc_b2 = detail::fill_init({c}, 0.0);
    return p;
}

FusionParams init_fusion(Rng&) {
    FusionParams p;
    p.alpha = detail::fill_init({2}, 0.0);  // starts as an even blend
    return p;
}

ExplainResult explain_head(const Var& h, const ExplainHeadParams& p, const ModelConfig& cfg) {
    std::vector<Var> maps, logits;
    maps.reserve(cfg.n_classes);
    logits.reserve(cfg.n_classes);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        Var scores = linear(tanh_op(linear(h, p.att_w1[c], p.att_b1[c])),
                            p.att_w2[c], p.att_b2[c]);           // [T x 1]
        Var map = softmax(transpose(scores), 1);                 // [1 x T]
        Var context = matmul(map, h);                            // [1 x d]
        logits.push_back(linear(context, p.pred_w[c], p.pred_b[c]));  // [1 x 1]
        maps.push_back(map);
    }
    ExplainResult r;
    r.logits = concat_cols(logits);  // [1 x C]
    r.maps = concat_rows(maps);      // [C x T]
    return r;
}

AdaptiveResult adaptive_head(const Var& h, const AdaptivePoolParams& p, const ModelConfig& cfg) {
    (void)cfg;
    Var relevance = sigmoid(linear(h, p.rel_w, p.rel_b));        // [T x 1]
    Var total = scalar_add(sum(relevance), 1e-8);
    Var pooled = div_scalarvar(matmul(transpose(relevance), h), total);  // [1 x d]
    AdaptiveResult r;
    r.relevance = relevance;
    r.logits = linear(gelu(linear(pooled, p.cls_w1, p.cls_b1)), p.cls_w2, p.cls_b2);
    r.uncertainty = sigmoid(linear(gelu(linear(pooled, p.unc_w1, p.unc_b1)),
                                   p.unc_w2, p.unc_b2));
    return r;
}

Var fuse(const Var& logits_explain, const Var& logits_adaptive, const FusionParams& f) {
    Var w = softmax(f.alpha, 0);  // convex pair
    return add(mul_scalarvar(gather_scalar(w, 0), logits_explain),
               mul_scalarvar(gather_scalar(w, 1), logits_adaptive));
}

} // namespace cpf
