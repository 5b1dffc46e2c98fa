#pragma once

#include <array>

#include "cpf/autodiff.hpp"
#include "cpf/data.hpp"
#include "cpf/model.hpp"
#include "cpf/tensor.hpp"

namespace cpf {

struct LossConfig {
    double alpha = 0.5;
    double gamma = 2.0;
    std::array<double, kNumClasses> class_weights = {1, 1, 1, 1, 1, 1};
    double cooccur_weight = 0.0;
    Tensor cooccur_matrix;               // [C x C] symmetric, zero diagonal
    double diversity_weight = 0.01;
    // Optional calibration term pulling uncertainty toward |y - p| (p detached).
    double uncertainty_weight = 0.0;

    LossConfig();
    void validate() const;
    // Flags the clinically incompatible SinusBrady <-> SinusRhythmTachy pair.
    static Tensor default_cooccur();
};

// Multi-label focal BCE with per-class weights and optional co-occurrence
// penalty. logits [B x C], targets binary [B x C]; mean over batch and class.
Var focal_loss(const Var& logits, const Tensor& targets, const LossConfig& cfg);

// Inverse prevalence normalized to mean 1.
std::array<double, kNumClasses> class_weights_from_prevalence(
    const std::array<double, kNumClasses>& prevalence);

// Mean pairwise cosine similarity between class maps, averaged over records.
// Each map is [C x T].
Var attention_diversity_loss(const std::vector<Var>& maps);

// focal(fused logits) + diversity_weight * diversity(explanation maps).
Var total_loss(const std::vector<ModelOutput>& outputs, const Tensor& targets,
               const LossConfig& cfg);

} // namespace cpf
