#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpf/data.hpp"
#include "cpf/errors.hpp"
#include "cpf/eval.hpp"
#include "cpf/parallel.hpp"
#include "cpf/preprocess.hpp"
#include "cpf/runconfig.hpp"
#include "cpf/selftest.hpp"
#include "cpf/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumeric = 4;

cpf::LabelMap load_label_map(const std::string& path) {
    return path.empty() ? cpf::LabelMap::builtin() : cpf::LabelMap::load(path);
}

// Loads a dataset and runs every accepted record through the preprocessing
// pipeline at the model's input rate.
std::vector<cpf::EcgRecord> load_preprocessed(const std::string& signals_dir,
                                              const std::string& labels_path,
                                              const std::string& labelmap_path,
                                              double target_hz) {
    cpf::LabelMap lm = load_label_map(labelmap_path);
    cpf::LoadReport report = cpf::load_dataset(signals_dir, labels_path, lm);
    for (const auto& [id, reason] : report.rejected)
        std::cerr << "warning: skipped record " << id << ": " << reason << "\n";
    if (report.records.empty()) throw cpf::InputError("no usable records in " + signals_dir);
    cpf::parallel_for(report.records.size(), [&](std::size_t i) {
        cpf::EcgRecord& rec = report.records[i];
        rec.signal = cpf::preprocess_pipeline(rec.signal, rec.sample_rate_hz, target_hz,
                                              rec.lead_mask);
        rec.sample_rate_hz = target_hz;
    });
    return report.records;
}

int cmd_synth(const std::string& out_dir, std::size_t count, double duration, double noise,
              std::uint64_t seed) {
    auto specs = cpf::synth_corpus_specs(count, duration, noise, seed);
    cpf::write_synth_corpus(out_dir, specs);
    std::cout << "wrote " << specs.size() << " records to " << out_dir << "\n";
    return 0;
}

int cmd_preprocess(const std::string& signals_dir, const std::string& labels_path,
                   const std::string& labelmap_path, const std::string& out_dir,
                   double target_hz) {
    auto records = load_preprocessed(signals_dir, labels_path, labelmap_path, target_hz);
    fs::create_directories(fs::path(out_dir) / "signals");
    for (const auto& rec : records)
        cpf::write_signal_csv((fs::path(out_dir) / "signals" / (rec.id + ".csv")).string(),
                              rec.signal);
    if (!labels_path.empty()) fs::copy_file(labels_path, fs::path(out_dir) / "labels.csv",
                                            fs::copy_options::overwrite_existing);
    load_label_map(labelmap_path).save((fs::path(out_dir) / "labelmap.csv").string());
    std::cout << "preprocessed " << records.size() << " records into " << out_dir << "\n";
    return 0;
}

int cmd_train(const cpf::RunConfig& cfg) {
    cfg.validate();
    if (cfg.signals_dir.empty() || cfg.labels_path.empty())
        throw cpf::ConfigError("train requires data.signals and data.labels in the config");
    auto records = load_preprocessed(cfg.signals_dir, cfg.labels_path, cfg.labelmap_path,
                                     cfg.model.sample_rate_hz);
    cpf::Splits splits = cpf::make_splits(records, cfg.split);

    fs::create_directories(cfg.out_dir);
    cpf::CvResult cv = cpf::cross_validate(records, splits, cfg.model, cfg.train);

    nlohmann::json summary;
    summary["n_records"] = records.size();
    summary["n_folds"] = cv.folds.size();
    summary["mean_val_f1"] = cv.mean_val_f1;
    summary["std_val_f1"] = cv.std_val_f1;
    summary["best_fold"] = cv.best_fold;

    bool aborted = false;
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
        const cpf::FoldResult& fold = cv.folds[f];
        cpf::write_epoch_log_csv(
            (fs::path(cfg.out_dir) / ("fold" + std::to_string(f) + "_log.csv")).string(),
            fold.log);
        summary["folds"].push_back({{"fold", f},
                                    {"best_epoch", fold.best.epoch},
                                    {"best_val_f1", fold.best.best_val_f1},
                                    {"aborted", fold.aborted}});
        if (fold.aborted) {
            aborted = true;
            std::cerr << "fold " << f << " aborted: " << fold.diagnostic << "\n";
        }
    }

    const cpf::FoldResult& best = cv.folds[cv.best_fold];
    cpf::save_checkpoint((fs::path(cfg.out_dir) / "checkpoint").string(), best.best);

    // Held-out test metrics with the fitted thresholds.
    if (!splits.test.empty() && !best.aborted) {
        std::vector<cpf::EcgRecord> test_set;
        for (std::size_t idx : splits.test) test_set.push_back(records[idx]);
        cpf::Tensor probs = cpf::predict_probs(test_set, best.best.params, cfg.model);
        cpf::MetricsReport m =
            cpf::compute_metrics(probs, cpf::targets_of(test_set), best.best.thresholds);
        std::ofstream mf(fs::path(cfg.out_dir) / "test_metrics.json");
        mf << m.to_json() << "\n";
        summary["test_macro_f1"] = m.macro_f1;
        std::cout << "test macro F1 " << m.macro_f1 << "\n";
    }

    std::ofstream sf(fs::path(cfg.out_dir) / "cv_summary.json");
    sf << summary.dump(2) << "\n";
    std::cout << "cv mean val F1 " << cv.mean_val_f1 << " +/- " << cv.std_val_f1
              << "; checkpoint in " << cfg.out_dir << "/checkpoint\n";
    if (aborted) throw cpf::NumericError("training aborted on non-finite loss");
    return 0;
}

int cmd_evaluate(const std::string& ckpt_dir, const std::string& signals_dir,
                 const std::string& labels_path, const std::string& labelmap_path,
                 const std::string& out_path) {
    cpf::Checkpoint ckpt = cpf::load_checkpoint(ckpt_dir);
    auto records = load_preprocessed(signals_dir, labels_path, labelmap_path,
                                     ckpt.model_cfg.sample_rate_hz);
    cpf::Tensor probs = cpf::predict_probs(records, ckpt.params, ckpt.model_cfg);
    cpf::MetricsReport m =
        cpf::compute_metrics(probs, cpf::targets_of(records), ckpt.thresholds);
    std::ofstream out(out_path);
    if (!out) throw cpf::InputError("cannot write " + out_path);
    out << m.to_json() << "\n";
    std::cout << "macro F1 " << m.macro_f1 << ", hamming " << m.hamming_accuracy
              << "; report in " << out_path << "\n";
    return 0;
}

int cmd_ablate(const std::string& ckpt_dir, const std::string& signals_dir,
               const std::string& labels_path, const std::string& labelmap_path,
               const std::string& out_path) {
    cpf::Checkpoint ckpt = cpf::load_checkpoint(ckpt_dir);
    auto records = load_preprocessed(signals_dir, labels_path, labelmap_path,
                                     ckpt.model_cfg.sample_rate_hz);
    auto rows = cpf::ablate_leads(records, ckpt.params, ckpt.model_cfg, ckpt.thresholds,
                                  cpf::default_ablation_subsets());
    cpf::write_ablation_csv(out_path, rows);
    std::cout << "wrote " << rows.size() << " ablation rows to " << out_path << "\n";
    return 0;
}

int cmd_explain(const std::string& ckpt_dir, const std::string& signals_dir,
                const std::string& labels_path, const std::string& labelmap_path,
                const std::string& out_dir, bool svg, std::size_t limit) {
    cpf::Checkpoint ckpt = cpf::load_checkpoint(ckpt_dir);
    auto records = load_preprocessed(signals_dir, labels_path, labelmap_path,
                                     ckpt.model_cfg.sample_rate_hz);
    if (limit > 0 && records.size() > limit) records.resize(limit);
    cpf::ExplainOptions opt;
    opt.svg = svg;
    cpf::export_explanations(out_dir, records, ckpt.params, ckpt.model_cfg, opt);
    std::cout << "wrote explanation bundles for " << records.size() << " records to "
              << out_dir << "\n";
    return 0;
}

int cmd_gradcheck() {
    cpf::ad::GradCheckReport r = cpf::model_grad_check();
    std::cout << "checked " << r.n_checked << " parameter coordinates\n"
              << "max relative error " << r.max_rel_err << " (tol " << r.tol << ") at "
              << r.worst_param << "\n";
    if (!r.pass) {
        std::cerr << "gradient check FAILED\n";
        return kExitNumeric;
    }
    std::cout << "gradient check passed\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CardioPatternFormer: multi-label ECG classification toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic ECG corpus");
    std::string synth_out = "data";
    std::size_t synth_count = 400;
    double synth_duration = 10.0, synth_noise = 0.02;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "Output directory");
    synth->add_option("--count", synth_count, "Number of records");
    synth->add_option("--duration", synth_duration, "Record length in seconds");
    synth->add_option("--noise", synth_noise, "Additive noise std in mV");
    synth->add_option("--seed", synth_seed, "Generator seed");

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "Filter, resample and normalize raw CSVs");
    std::string prep_signals, prep_labels, prep_labelmap, prep_out = "processed";
    double prep_rate = 100.0;
    prep->add_option("--signals", prep_signals, "Directory of raw <id>.csv files")->required();
    prep->add_option("--labels", prep_labels, "labels.csv path")->required();
    prep->add_option("--labelmap", prep_labelmap, "labelmap.csv path (default: builtin)");
    prep->add_option("--out", prep_out, "Output directory");
    prep->add_option("--rate", prep_rate, "Target sample rate in Hz");

    // train
    auto* train = app.add_subcommand("train", "Cross-validated training per config file");
    std::string train_config, train_out, train_profile;
    std::uint64_t train_seed = 0;
    train->add_option("--config", train_config, "key=value run config")->required();
    train->add_option("--out", train_out, "Override output directory");
    train->add_option("--profile", train_profile, "Override model profile (desk|paper)");
    auto* seed_opt = train->add_option("--seed", train_seed, "Override seed");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a labeled dataset");
    std::string eval_ckpt, eval_signals, eval_labels, eval_labelmap,
        eval_out = "metrics.json";
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required();
    eval->add_option("--signals", eval_signals, "Directory of raw <id>.csv files")->required();
    eval->add_option("--labels", eval_labels, "labels.csv path")->required();
    eval->add_option("--labelmap", eval_labelmap, "labelmap.csv path (default: builtin)");
    eval->add_option("--out", eval_out, "Metrics JSON output path");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Lead-subset ablation study");
    std::string abl_ckpt, abl_signals, abl_labels, abl_labelmap, abl_out = "ablation.csv";
    ablate->add_option("--checkpoint", abl_ckpt, "Checkpoint directory")->required();
    ablate->add_option("--signals", abl_signals, "Directory of raw <id>.csv files")->required();
    ablate->add_option("--labels", abl_labels, "labels.csv path")->required();
    ablate->add_option("--labelmap", abl_labelmap, "labelmap.csv path (default: builtin)");
    ablate->add_option("--out", abl_out, "Ablation CSV output path");

    // explain
    auto* expl = app.add_subcommand("explain", "Export per-record explanation bundles");
    std::string exp_ckpt, exp_signals, exp_labels, exp_labelmap, exp_out = "expl";
    bool exp_svg = false;
    std::size_t exp_limit = 0;
    expl->add_option("--checkpoint", exp_ckpt, "Checkpoint directory")->required();
    expl->add_option("--signals", exp_signals, "Directory of raw <id>.csv files")->required();
    expl->add_option("--labels", exp_labels, "labels.csv path")->required();
    expl->add_option("--labelmap", exp_labelmap, "labelmap.csv path (default: builtin)");
    expl->add_option("--out", exp_out, "Output directory");
    expl->add_option("--limit", exp_limit, "Explain at most N records (0 = all)");
    expl->add_flag("--svg", exp_svg, "Also render overlay.svg per record");

    // gradcheck / selftest
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    auto* self = app.add_subcommand("selftest", "Full invariant battery");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_out, synth_count, synth_duration,
                                              synth_noise, synth_seed);
        if (prep->parsed())
            return cmd_preprocess(prep_signals, prep_labels, prep_labelmap, prep_out, prep_rate);
        if (train->parsed()) {
            cpf::RunConfig cfg = cpf::RunConfig::load(train_config);
            if (!train_profile.empty()) {
                if (train_profile == "desk") cfg.model = cpf::ModelConfig::desk();
                else if (train_profile == "paper") cfg.model = cpf::ModelConfig::paper();
                else throw cpf::ConfigError("unknown profile '" + train_profile + "'");
                cfg.profile = train_profile;
            }
            if (seed_opt->count() > 0) cfg.set_seed(train_seed);
            if (!train_out.empty()) cfg.out_dir = train_out;
            return cmd_train(cfg);
        }
        if (eval->parsed())
            return cmd_evaluate(eval_ckpt, eval_signals, eval_labels, eval_labelmap, eval_out);
        if (ablate->parsed())
            return cmd_ablate(abl_ckpt, abl_signals, abl_labels, abl_labelmap, abl_out);
        if (expl->parsed())
            return cmd_explain(exp_ckpt, exp_signals, exp_labels, exp_labelmap, exp_out,
                               exp_svg, exp_limit);
        if (grad->parsed()) return cmd_gradcheck();
        if (self->parsed()) return cpf::run_selftest(std::cout) == 0 ? 0 : 1;
    } catch (const cpf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const cpf::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
