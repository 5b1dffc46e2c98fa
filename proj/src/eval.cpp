#include "cpf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cpf/errors.hpp"
#include "cpf/parallel.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace cpf {

namespace {

// Mann-Whitney AUC with tie-averaged ranks. Returns false when the column has
// no positives or no negatives.
bool rank_auc(const std::vector<double>& scores, const std::vector<bool>& pos, double& out) {
    std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (bool b : pos) n_pos += b ? 1 : 0;
    std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return false;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k)
            if (pos[order[k]]) rank_sum_pos += avg_rank;
        i = j;
    }
    out = (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
          (static_cast<double>(n_pos) * static_cast<double>(n_neg));
    return true;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

} // namespace

MetricsReport compute_metrics(const Tensor& probs, const Tensor& targets,
                              const std::array<double, kNumClasses>& thresholds) {
    if (probs.ndim() != 2 || !probs.same_shape(targets) || probs.cols() != kNumClasses)
        throw InputError("compute_metrics: probs " + probs.shape_str() + " vs targets " +
                         targets.shape_str());
    std::size_t n = probs.rows();
    if (n == 0) throw InputError("compute_metrics: empty input");

    MetricsReport r;
    r.n_samples = n;
    r.thresholds = thresholds;

    std::vector<std::vector<bool>> pred(kNumClasses, std::vector<bool>(n));
    std::vector<std::vector<bool>> truth(kNumClasses, std::vector<bool>(n));
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            bool p = probs.at(i, c) >= thresholds[c];
            bool t = targets.at(i, c) != 0.0;
            pred[c][i] = p;
            truth[c][i] = t;
            mismatches += (p != t) ? 1 : 0;
        }
    r.hamming_accuracy =
        1.0 - static_cast<double>(mismatches) / static_cast<double>(n * kNumClasses);

    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::size_t tp = 0, fp = 0, fn_ = 0, n_pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            n_pos += truth[c][i] ? 1 : 0;
            if (pred[c][i] && truth[c][i]) ++tp;
            else if (pred[c][i]) ++fp;
            else if (truth[c][i]) ++fn_;
        }
        r.present[c] = n_pos > 0;
        r.precision[c] = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        r.recall[c] = (tp + fn_) ? static_cast<double>(tp) / static_cast<double>(tp + fn_) : 0.0;
        double pr = r.precision[c] + r.recall[c];
        r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;

        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = probs.at(i, c);
        r.auc_defined[c] = rank_auc(col, truth[c], r.auc[c]);
        if (!r.auc_defined[c]) r.auc[c] = 0.0;
    }

    std::size_t n_present = 0, n_auc = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (r.present[c]) {
            r.macro_precision += r.precision[c];
            r.macro_recall += r.recall[c];
            r.macro_f1 += r.f1[c];
            ++n_present;
        }
        if (r.auc_defined[c]) {
            r.macro_auc += r.auc[c];
            ++n_auc;
        }
    }
    if (n_present) {
        r.macro_precision /= static_cast<double>(n_present);
        r.macro_recall /= static_cast<double>(n_present);
        r.macro_f1 /= static_cast<double>(n_present);
    }
    if (n_auc) r.macro_auc /= static_cast<double>(n_auc);

    r.prediction_rate = Tensor({kNumClasses, kNumClasses});
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        std::size_t n_true = 0;
        for (std::size_t s = 0; s < n; ++s) n_true += truth[i][s] ? 1 : 0;
        for (std::size_t j = 0; j < kNumClasses; ++j) {
            if (n_true == 0) continue;
            std::size_t both = 0;
            for (std::size_t s = 0; s < n; ++s)
                if (truth[i][s] && pred[j][s]) ++both;
            r.prediction_rate.at(i, j) = static_cast<double>(both) / static_cast<double>(n_true);
        }
    }
    return r;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["n_samples"] = n_samples;
    j["hamming_accuracy"] = hamming_accuracy;
    j["macro_precision"] = macro_precision;
    j["macro_recall"] = macro_recall;
    j["macro_f1"] = macro_f1;
    j["macro_auc"] = macro_auc;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        nlohmann::json jc;
        jc["name"] = kClassNames[c];
        jc["precision"] = precision[c];
        jc["recall"] = recall[c];
        jc["f1"] = f1[c];
        jc["threshold"] = thresholds[c];
        jc["present"] = present[c];
        if (auc_defined[c]) jc["auc"] = auc[c];
        else jc["auc"] = nullptr;
        j["classes"].push_back(jc);
    }
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t k = 0; k < kNumClasses; ++k) row.push_back(prediction_rate.at(i, k));
        j["prediction_rate_matrix"].push_back(row);
    }
    return j.dump(2);
}

Tensor predict_probs(const std::vector<EcgRecord>& records, const ModelParams& params,
                     const ModelConfig& cfg) {
    if (records.empty()) throw InputError("predict_probs: no records");
    Tensor probs({records.size(), kNumClasses});
    parallel_for(records.size(), [&](std::size_t i) {
        ModelOutput out = model_forward(records[i].signal, params, cfg);
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            double z = out.logits->value[c];
            probs.at(i, c) = 1.0 / (1.0 + std::exp(-z));
        }
    });
    probs.check_finite("predicted probabilities");
    return probs;
}

std::vector<AblationSubset> default_ablation_subsets() {
    std::vector<AblationSubset> subsets;
    for (int l = 0; l < 12; ++l) subsets.push_back({kLeadNames[l], LeadMask::of({l})});
    subsets.push_back({"limb", LeadMask::of({0, 1, 2, 3, 4, 5})});
    subsets.push_back({"precordial", LeadMask::of({6, 7, 8, 9, 10, 11})});
    subsets.push_back({"reduced", LeadMask::of({0, 1, 6, 10})});  // I, II, V1, V5
    subsets.push_back({"full", LeadMask()});
    return subsets;
}

std::vector<AblationRow> ablate_leads(const std::vector<EcgRecord>& records,
                                      const ModelParams& params, const ModelConfig& cfg,
                                      const std::array<double, kNumClasses>& thresholds,
                                      const std::vector<AblationSubset>& subsets) {
    if (records.empty()) throw InputError("ablate_leads: no records");
    Tensor targets({records.size(), kNumClasses});
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t c = 0; c < kNumClasses; ++c)
            targets.at(i, c) = records[i].labels[c] ? 1.0 : 0.0;

    std::vector<AblationRow> rows;
    rows.reserve(subsets.size());
    for (const auto& subset : subsets) {
        subset.mask.validate();
        std::vector<EcgRecord> masked = records;
        for (auto& rec : masked) rec.signal = apply_lead_mask(rec.signal, subset.mask);
        AblationRow row;
        row.name = subset.name;
        for (int l = 0; l < 12; ++l)
            if (subset.mask.included[l]) {
                if (!row.leads.empty()) row.leads += '+';
                row.leads += kLeadNames[l];
            }
        row.report = compute_metrics(predict_probs(masked, params, cfg), targets, thresholds);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << "subset,leads,macro_f1,macro_auc,macro_precision,macro_recall,hamming_accuracy\n";
    for (const auto& r : rows)
        out << r.name << ',' << r.leads << ',' << fmt(r.report.macro_f1) << ','
            << fmt(r.report.macro_auc) << ',' << fmt(r.report.macro_precision) << ','
            << fmt(r.report.macro_recall) << ',' << fmt(r.report.hamming_accuracy) << '\n';
}

std::vector<double> average_attention(const std::vector<Tensor>& per_layer) {
    if (per_layer.empty()) throw InputError("average_attention: no attention tensors");
    std::size_t t_len = per_layer[0].shape[2];
    std::vector<double> avg(t_len, 0.0);
    std::size_t n_maps = 0;
    for (const auto& a : per_layer) {
        if (a.ndim() != 3 || a.shape[2] != t_len)
            throw DimensionError("average_attention: inconsistent attention shape");
        std::size_t heads = a.shape[0], queries = a.shape[1];
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t q = 0; q < queries; ++q)
                for (std::size_t k = 0; k < t_len; ++k)
                    avg[k] += a[h * queries * t_len + q * t_len + k];
        n_maps += heads * queries;
    }
    for (auto& v : avg) v /= static_cast<double>(n_maps);
    return avg;
}

namespace {

void write_overlay_svg(const std::string& path, const EcgRecord& rec, const Tensor& maps,
                       const ModelConfig& cfg) {
    std::size_t t_tokens = maps.cols();
    std::size_t len = rec.signal.cols();
    double px_per_token = 12.0;
    double width = static_cast<double>(t_tokens) * px_per_token;
    double trace_h = 120.0, strip_h = 14.0;
    double height = trace_h + strip_h * static_cast<double>(kNumClasses) + 20.0;

    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n";

    // Lead II trace, scaled into the top band.
    double lo = rec.signal.at(1, 0), hi = lo;
    for (std::size_t i = 0; i < len; ++i) {
        lo = std::min(lo, rec.signal.at(1, i));
        hi = std::max(hi, rec.signal.at(1, i));
    }
    double span = std::max(hi - lo, 1e-9);
    out << "<polyline fill='none' stroke='black' stroke-width='1' points='";
    for (std::size_t i = 0; i < len; ++i) {
        double x = width * static_cast<double>(i) / static_cast<double>(len);
        double y = trace_h - (rec.signal.at(1, i) - lo) / span * (trace_h - 10.0) - 5.0;
        out << x << ',' << y << ' ';
    }
    out << "'/>\n";

    for (std::size_t c = 0; c < kNumClasses; ++c) {
        double row_max = 0.0;
        for (std::size_t k = 0; k < t_tokens; ++k) row_max = std::max(row_max, maps.at(c, k));
        double y0 = trace_h + strip_h * static_cast<double>(c);
        for (std::size_t k = 0; k < t_tokens; ++k) {
            double heat = row_max > 0.0 ? maps.at(c, k) / row_max : 0.0;
            int red = static_cast<int>(255.0 * heat);
            out << "<rect x='" << static_cast<double>(k) * px_per_token << "' y='" << y0
                << "' width='" << px_per_token << "' height='" << strip_h - 2.0
                << "' fill='rgb(" << red << ",0," << 255 - red << ")'/>\n";
        }
        out << "<text x='2' y='" << y0 + strip_h - 4.0 << "' font-size='8' fill='white'>"
            << kClassNames[c] << "</text>\n";
    }
    out << "</svg>\n";
    (void)cfg;
}

} // namespace

void export_explanations(const std::string& out_dir, const std::vector<EcgRecord>& records,
                         const ModelParams& params, const ModelConfig& cfg,
                         const ExplainOptions& opt) {
    fs::create_directories(out_dir);
    double token_s = static_cast<double>(cfg.pool_factor) / cfg.sample_rate_hz;

    for (const auto& rec : records) {
        ForwardOptions fwd;
        fwd.return_weights = true;
        ModelOutput out = model_forward(rec.signal, params, cfg, fwd);
        const Tensor& maps = out.maps->value;
        std::size_t t_tokens = maps.cols();

        for (std::size_t c = 0; c < kNumClasses; ++c) {
            double row_sum = 0.0;
            for (std::size_t k = 0; k < t_tokens; ++k) row_sum += maps.at(c, k);
            if (std::fabs(row_sum - 1.0) > 1e-9)
                throw ContractError("explanation map row " + std::to_string(c) +
                                    " is not a distribution (sum " + std::to_string(row_sum) +
                                    ")");
        }

        fs::path dir = fs::path(out_dir) / rec.id;
        fs::create_directories(dir);

        {
            std::ofstream f(dir / "maps.csv");
            f << "class";
            for (std::size_t k = 0; k < t_tokens; ++k)
                f << ",t" << fmt(static_cast<double>(k) * token_s);
            f << '\n';
            f.precision(12);
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                f << kClassNames[c];
                for (std::size_t k = 0; k < t_tokens; ++k) f << ',' << maps.at(c, k);
                f << '\n';
            }
        }
        {
            std::ofstream f(dir / "relevance.csv");
            f << "token,start_s,relevance\n";
            f.precision(12);
            for (std::size_t k = 0; k < t_tokens; ++k)
                f << k << ',' << static_cast<double>(k) * token_s << ','
                  << out.relevance->value[k] << '\n';
        }
        {
            std::ofstream f(dir / "uncertainty.csv");
            f << "class,uncertainty\n";
            f.precision(12);
            for (std::size_t c = 0; c < kNumClasses; ++c)
                f << kClassNames[c] << ',' << out.uncertainty->value[c] << '\n';
        }
        {
            std::ofstream f(dir / "probs.csv");
            f << "class,prob\n";
            f.precision(12);
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                double z = out.logits->value[c];
                f << kClassNames[c] << ',' << 1.0 / (1.0 + std::exp(-z)) << '\n';
            }
        }
        {
            auto avg = average_attention(out.attention);
            std::ofstream f(dir / "avg_attention.csv");
            f << "token,start_s,attention\n";
            f.precision(12);
            for (std::size_t k = 0; k < avg.size(); ++k)
                f << k << ',' << static_cast<double>(k) * token_s << ',' << avg[k] << '\n';
        }
        if (opt.svg) write_overlay_svg((dir / "overlay.svg").string(), rec, maps, cfg);
    }
}

} // namespace cpf
