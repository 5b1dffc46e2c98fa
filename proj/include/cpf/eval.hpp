#pragma once

#include <array>
#include <string>
#include <vector>

#include "cpf/data.hpp"
#include "cpf/model.hpp"
#include "cpf/tensor.hpp"

namespace cpf {

struct MetricsReport {
    double hamming_accuracy = 0.0;
    std::array<double, kNumClasses> precision{};
    std::array<double, kNumClasses> recall{};
    std::array<double, kNumClasses> f1{};
    std::array<double, kNumClasses> auc{};
    std::array<bool, kNumClasses> auc_defined{};   // false when column is single-class
    std::array<bool, kNumClasses> present{};       // class has >= 1 positive target
    std::array<double, kNumClasses> thresholds{};
    // Unweighted means over classes with positives (macro_auc over defined AUCs).
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double macro_auc = 0.0;
    Tensor prediction_rate;                        // [C x C], P(pred_j=1 | true_i=1)
    std::size_t n_samples = 0;

    std::string to_json() const;
};

// Binarizes probs per class at its threshold and scores against binary
// targets. probs, targets: [N x C].
MetricsReport compute_metrics(const Tensor& probs, const Tensor& targets,
                              const std::array<double, kNumClasses>& thresholds);

// Fused sigmoid probabilities for each record, inference mode. Records must be
// preprocessed ([12 x L] at cfg.sample_rate_hz). Parallel over records.
Tensor predict_probs(const std::vector<EcgRecord>& records, const ModelParams& params,
                     const ModelConfig& cfg);

// ---- lead ablation ----------------------------------------------------------

struct AblationSubset {
    std::string name;
    LeadMask mask;
};

// 12 singles + limb + precordial + {I,II,V1,V5} + full = 16 subsets.
std::vector<AblationSubset> default_ablation_subsets();

struct AblationRow {
    std::string name;
    std::string leads;                             // '+'-joined lead names
    MetricsReport report;
};

std::vector<AblationRow> ablate_leads(const std::vector<EcgRecord>& records,
                                      const ModelParams& params, const ModelConfig& cfg,
                                      const std::array<double, kNumClasses>& thresholds,
                                      const std::vector<AblationSubset>& subsets);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

// ---- explanation export -------------------------------------------------------

struct ExplainOptions {
    bool svg = false;
};

// Per record writes <out_dir>/<id>/{maps,relevance,uncertainty,probs,
// avg_attention}.csv and optionally overlay.svg. Columns in maps.csv carry the
// token start time in seconds (token k -> k * pool_factor / sample_rate).
void export_explanations(const std::string& out_dir, const std::vector<EcgRecord>& records,
                         const ModelParams& params, const ModelConfig& cfg,
                         const ExplainOptions& opt = {});

// Mean over layers, heads and queries of attention received per key token.
std::vector<double> average_attention(const std::vector<Tensor>& per_layer);

} // namespace cpf
