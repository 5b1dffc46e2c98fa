#include "cpf/loss.hpp"

#include <cmath>

#include "cpf/errors.hpp"

namespace cpf {

using namespace ad;

LossConfig::LossConfig() : cooccur_matrix(default_cooccur()) {}

Tensor LossConfig::default_cooccur() {
    Tensor m({kNumClasses, kNumClasses});
    m.at(0, 1) = 1.0;
    m.at(1, 0) = 1.0;
    return m;
}

void LossConfig::validate() const {
    if (gamma < 0.0) throw ConfigError("focal gamma must be >= 0");
    if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("focal alpha must be in (0, 1)");
    for (double w : class_weights)
        if (w <= 0.0) throw ConfigError("class weights must be positive");
    if (cooccur_weight < 0.0 || diversity_weight < 0.0 || uncertainty_weight < 0.0)
        throw ConfigError("loss term weights must be >= 0");
    if (cooccur_matrix.ndim() != 2 || cooccur_matrix.shape[0] != kNumClasses ||
        cooccur_matrix.shape[1] != kNumClasses)
        throw ConfigError("co-occurrence matrix must be [C x C]");
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (cooccur_matrix.at(c, c) != 0.0)
            throw ConfigError("co-occurrence matrix must have zero diagonal");
        for (std::size_t d = 0; d < kNumClasses; ++d)
            if (cooccur_matrix.at(c, d) != cooccur_matrix.at(d, c))
                throw ConfigError("co-occurrence matrix must be symmetric");
    }
}

Var focal_loss(const Var& logits, const Tensor& targets, const LossConfig& cfg) {
    cfg.validate();
    if (!logits->value.same_shape(targets))
        throw DimensionError("focal_loss: logits " + logits->value.shape_str() +
                             " vs targets " + targets.shape_str());
    if (logits->value.cols() != kNumClasses)
        throw DimensionError("focal_loss: expected " + std::to_string(kNumClasses) + " classes");
    for (double y : targets.data)
        if (y != 0.0 && y != 1.0) throw InputError("focal_loss: targets must be binary");

    std::size_t batch = targets.rows();
    Tensor weights({batch, kNumClasses});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < kNumClasses; ++c)
            weights.at(b, c) = cfg.class_weights[c];

    Var y = constant(targets);
    Var ones = constant(Tensor(targets.shape, 1.0));
    Var p = clamp(sigmoid(logits), 1e-7, 1.0 - 1e-7);
    Var one_minus_p = sub(ones, p);
    Var pos = mul(mul(y, pow_const(one_minus_p, cfg.gamma)), log_op(p));
    Var negt = mul(mul(sub(ones, y), pow_const(p, cfg.gamma)), log_op(one_minus_p));
    Var inner = add(scalar_mul(pos, cfg.alpha), scalar_mul(negt, 1.0 - cfg.alpha));
    Var loss = scalar_mul(mean(mul(inner, constant(std::move(weights)))), -1.0);

    if (cfg.cooccur_weight > 0.0) {
        // mean over batch of p^T M p; M has zero diagonal so this is the
        // co-activation sum over distinct pairs (counted both ways).
        Var quad = sum(mul(matmul(p, constant(cfg.cooccur_matrix)), p));
        loss = add(loss, scalar_mul(quad, cfg.cooccur_weight / static_cast<double>(batch)));
    }
    return loss;
}

std::array<double, kNumClasses> class_weights_from_prevalence(
    const std::array<double, kNumClasses>& prevalence) {
    std::array<double, kNumClasses> w{};
    double mean_inv = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (prevalence[c] <= 0.0 || prevalence[c] > 1.0)
            throw ConfigError("class " + std::to_string(c) +
                              " has prevalence outside (0, 1]: absent from training data?");
        w[c] = 1.0 / prevalence[c];
        mean_inv += w[c];
    }
    mean_inv /= static_cast<double>(kNumClasses);
    for (auto& v : w) v /= mean_inv;
    return w;
}

Var attention_diversity_loss(const std::vector<Var>& maps) {
    if (maps.empty()) throw InputError("attention_diversity_loss: no maps");
    Var acc;
    std::size_t n_terms = 0;
    for (const auto& map : maps) {
        std::size_t n_classes = map->value.rows();
        std::vector<Var> rows, norms;
        for (std::size_t c = 0; c < n_classes; ++c) {
            rows.push_back(slice_rows(map, c, c + 1));
            norms.push_back(pow_const(sum(mul(rows[c], rows[c])), 0.5));
        }
        for (std::size_t c = 0; c < n_classes; ++c)
            for (std::size_t d = c + 1; d < n_classes; ++d) {
                Var cosine = div_scalarvar(sum(mul(rows[c], rows[d])), mul(norms[c], norms[d]));
                acc = acc ? add(acc, cosine) : cosine;
                ++n_terms;
            }
    }
    return scalar_mul(acc, 1.0 / static_cast<double>(n_terms));
}

Var total_loss(const std::vector<ModelOutput>& outputs, const Tensor& targets,
               const LossConfig& cfg) {
    if (outputs.empty()) throw InputError("total_loss: empty batch");
    std::vector<Var> logits, maps;
    logits.reserve(outputs.size());
    maps.reserve(outputs.size());
    for (const auto& o : outputs) {
        logits.push_back(o.logits);
        maps.push_back(o.maps);
    }
    Var loss = focal_loss(concat_rows(logits), targets, cfg);
    if (cfg.diversity_weight > 0.0)
        loss = add(loss, scalar_mul(attention_diversity_loss(maps), cfg.diversity_weight));
    if (cfg.uncertainty_weight > 0.0) {
        // Pull uncertainty toward the detached residual |y - p|.
        Var acc;
        for (std::size_t b = 0; b < outputs.size(); ++b) {
            Tensor residual({1, kNumClasses});
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                double p = 1.0 / (1.0 + std::exp(-outputs[b].logits->value[c]));
                residual[c] = std::fabs(targets.at(b, c) - p);
            }
            Var d = sub(outputs[b].uncertainty, constant(std::move(residual)));
            Var term = mean(mul(d, d));
            acc = acc ? add(acc, term) : term;
        }
        loss = add(loss, scalar_mul(acc, cfg.uncertainty_weight /
                                             static_cast<double>(outputs.size())));
    }
    return loss;
}

} // namespace cpf
