#include "cpf/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "cpf/errors.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace cpf {

using namespace ad;

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (scheduler_factor <= 0.0 || scheduler_factor >= 1.0)
        throw ConfigError("scheduler_factor must be in (0, 1)");
    if (scheduler_patience == 0 || early_stop_patience == 0)
        throw ConfigError("patience values must be positive");
    if (max_epochs == 0 || batch_size == 0 || grad_accum_steps == 0)
        throw ConfigError("epoch/batch/accumulation counts must be positive");
    if (min_delta < 0.0) throw ConfigError("min_delta must be >= 0");
    loss.validate();
}

// ---- optimizer ---------------------------------------------------------------

namespace {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;
} // namespace

AdamWState AdamWState::init_for(const std::vector<Var>& params) {
    AdamWState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
        st.m.push_back(Tensor::zeros_like(p->value));
        st.v.push_back(Tensor::zeros_like(p->value));
    }
    return st;
}

void adamw_step(const std::vector<Var>& params, AdamWState& state, double lr,
                double weight_decay) {
    if (params.size() != state.m.size())
        throw ContractError("adamw_step: state size mismatch");
    ++state.t;
    double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Node& p = *params[i];
        if (!p.requires_grad) throw ContractError("adamw_step: non-trainable param in list");
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t k = 0; k < p.value.numel(); ++k) {
            double g = p.grad[k];
            m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g;
            v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g * g;
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            // Decay is decoupled from the adaptive update.
            p.value[k] -= lr * weight_decay * p.value[k];
            p.value[k] -= lr * mhat / (std::sqrt(vhat) + kEps);
        }
    }
}

// ---- scheduler -----------------------------------------------------------------

PlateauScheduler::PlateauScheduler(double factor, std::size_t patience, double min_delta)
    : factor_(factor), patience_(patience), min_delta_(min_delta),
      best_(-std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::observe(double metric) {
    if (metric > best_ + min_delta_) {
        best_ = metric;
        bad_epochs_ = 0;
        return false;
    }
    if (++bad_epochs_ >= patience_) {
        multiplier_ *= factor_;
        bad_epochs_ = 0;
        return true;
    }
    return false;
}

// ---- thresholds -----------------------------------------------------------------

std::array<double, kNumClasses> select_thresholds(const Tensor& probs, const Tensor& targets,
                                                  std::vector<std::string>* warnings) {
    if (probs.ndim() != 2 || !probs.same_shape(targets) || probs.cols() != kNumClasses)
        throw InputError("select_thresholds: shape mismatch");
    std::size_t n = probs.rows();
    if (n == 0) throw InputError("select_thresholds: empty input");

    std::array<double, kNumClasses> out{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::size_t n_pos = 0;
        for (std::size_t i = 0; i < n; ++i) n_pos += targets.at(i, c) != 0.0 ? 1 : 0;
        if (n_pos == 0) {
            out[c] = 0.5;
            if (warnings)
                warnings->push_back(std::string("class ") + kClassNames[c] +
                                    " has no positives; threshold defaulted to 0.5");
            continue;
        }
        double best_f1 = -1.0, best_t = 0.5;
        for (std::size_t step = 0;; ++step) {
            double t = 0.01 + 0.005 * static_cast<double>(step);
            if (t > 0.99 + 1e-12) break;
            std::size_t tp = 0, fp = 0, fn_ = 0;
            for (std::size_t i = 0; i < n; ++i) {
                bool pred = probs.at(i, c) >= t;
                bool truth = targets.at(i, c) != 0.0;
                if (pred && truth) ++tp;
                else if (pred) ++fp;
                else if (truth) ++fn_;
            }
            double denom = static_cast<double>(2 * tp + fp + fn_);
            double f1 = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
            bool better = f1 > best_f1 + 1e-12;
            bool tied = std::fabs(f1 - best_f1) <= 1e-12;
            if (better ||
                (tied && (std::fabs(t - 0.5) < std::fabs(best_t - 0.5) - 1e-12 ||
                          (std::fabs(std::fabs(t - 0.5) - std::fabs(best_t - 0.5)) <= 1e-12 &&
                           t < best_t)))) {
                best_f1 = f1;
                best_t = t;
            }
        }
        out[c] = best_t;
    }
    return out;
}

// ---- checkpointing ----------------------------------------------------------------

namespace {

void write_bin(const fs::path& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path.string());
    // Raw f64; this codebase targets little-endian hosts.
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_bin(const fs::path& path, const std::vector<std::size_t>& shape) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot read " + path.string());
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (static_cast<std::size_t>(f.gcount()) != t.data.size() * sizeof(double))
        throw InputError("truncated tensor file " + path.string());
    return t;
}

nlohmann::json model_cfg_json(const ModelConfig& c) {
    return {{"d_model", c.d_model},
            {"n_heads", c.n_heads},
            {"n_layers", c.n_layers},
            {"num_patterns", c.num_patterns},
            {"pool_factor", c.pool_factor},
            {"max_seq_len", c.max_seq_len},
            {"n_classes", c.n_classes},
            {"ffn_mult", c.ffn_mult},
            {"dropout", c.dropout},
            {"use_positional", c.use_positional},
            {"use_temporal", c.use_temporal},
            {"sample_rate_hz", c.sample_rate_hz},
            {"local_tau_tokens", c.local_tau_tokens},
            {"kernel_sizes", c.kernel_sizes},
            {"temporal_scales", c.temporal_scales}};
}

ModelConfig model_cfg_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.n_layers = j.at("n_layers");
    c.num_patterns = j.at("num_patterns");
    c.pool_factor = j.at("pool_factor");
    c.max_seq_len = j.at("max_seq_len");
    c.n_classes = j.at("n_classes");
    c.ffn_mult = j.at("ffn_mult");
    c.dropout = j.at("dropout");
    c.use_positional = j.at("use_positional");
    c.use_temporal = j.at("use_temporal");
    c.sample_rate_hz = j.at("sample_rate_hz");
    c.local_tau_tokens = j.at("local_tau_tokens");
    c.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
    c.temporal_scales = j.at("temporal_scales").get<std::vector<std::size_t>>();
    return c;
}

nlohmann::json train_cfg_json(const TrainConfig& c) {
    nlohmann::json j{{"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"scheduler_factor", c.scheduler_factor},
                     {"scheduler_patience", c.scheduler_patience},
                     {"early_stop_patience", c.early_stop_patience},
                     {"max_epochs", c.max_epochs},
                     {"batch_size", c.batch_size},
                     {"grad_accum_steps", c.grad_accum_steps},
                     {"min_delta", c.min_delta},
                     {"seed", c.seed}};
    j["loss"] = {{"alpha", c.loss.alpha},
                 {"gamma", c.loss.gamma},
                 {"class_weights", c.loss.class_weights},
                 {"cooccur_weight", c.loss.cooccur_weight},
                 {"cooccur_matrix", c.loss.cooccur_matrix.data},
                 {"diversity_weight", c.loss.diversity_weight},
                 {"uncertainty_weight", c.loss.uncertainty_weight}};
    return j;
}

TrainConfig train_cfg_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.at("lr");
    c.weight_decay = j.at("weight_decay");
    c.scheduler_factor = j.at("scheduler_factor");
    c.scheduler_patience = j.at("scheduler_patience");
    c.early_stop_patience = j.at("early_stop_patience");
    c.max_epochs = j.at("max_epochs");
    c.batch_size = j.at("batch_size");
    c.grad_accum_steps = j.at("grad_accum_steps");
    c.min_delta = j.at("min_delta");
    c.seed = j.at("seed");
    const auto& l = j.at("loss");
    c.loss.alpha = l.at("alpha");
    c.loss.gamma = l.at("gamma");
    auto cw = l.at("class_weights").get<std::vector<double>>();
    std::copy(cw.begin(), cw.end(), c.loss.class_weights.begin());
    c.loss.cooccur_weight = l.at("cooccur_weight");
    c.loss.cooccur_matrix =
        Tensor::from({kNumClasses, kNumClasses}, l.at("cooccur_matrix").get<std::vector<double>>());
    c.loss.diversity_weight = l.at("diversity_weight");
    c.loss.uncertainty_weight = l.at("uncertainty_weight");
    return c;
}

} // namespace

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
    fs::path target(dir);
    fs::path staging = target;
    staging += ".staging";
    fs::remove_all(staging);
    fs::create_directories(staging / "params");

    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["epoch"] = ckpt.epoch;
    manifest["best_val_f1"] = ckpt.best_val_f1;
    manifest["thresholds"] = ckpt.thresholds;
    manifest["model"] = model_cfg_json(ckpt.model_cfg);
    manifest["train"] = train_cfg_json(ckpt.train_cfg);

    auto named = ckpt.params.named();
    manifest["params"] = nlohmann::json::array();
    for (const auto& [name, var] : named) {
        write_bin(staging / "params" / (name + ".bin"), var->value);
        manifest["params"].push_back({{"name", name}, {"shape", var->value.shape}});
    }

    manifest["optimizer"] = {{"present", ckpt.has_opt_state}, {"t", ckpt.opt_state.t}};
    if (ckpt.has_opt_state) {
        if (ckpt.opt_state.m.size() != named.size())
            throw ContractError("checkpoint optimizer state does not match params");
        for (std::size_t i = 0; i < named.size(); ++i) {
            write_bin(staging / "params" / (named[i].first + ".m.bin"), ckpt.opt_state.m[i]);
            write_bin(staging / "params" / (named[i].first + ".v.bin"), ckpt.opt_state.v[i]);
        }
    }

    std::ofstream mf(staging / "manifest.json");
    if (!mf) throw InputError("cannot write checkpoint manifest");
    mf << manifest.dump(2) << '\n';
    mf.close();

    fs::remove_all(target);
    fs::rename(staging, target);
}

Checkpoint load_checkpoint(const std::string& dir) {
    fs::path base(dir);
    std::ifstream mf(base / "manifest.json");
    if (!mf) throw InputError("missing checkpoint manifest in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed checkpoint manifest: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        if (manifest.at("format_version").get<int>() != 1)
            throw InputError("unsupported checkpoint format version");
        ckpt.epoch = manifest.at("epoch");
        ckpt.best_val_f1 = manifest.at("best_val_f1");
        auto th = manifest.at("thresholds").get<std::vector<double>>();
        std::copy(th.begin(), th.end(), ckpt.thresholds.begin());
        ckpt.model_cfg = model_cfg_from_json(manifest.at("model"));
        ckpt.train_cfg = train_cfg_from_json(manifest.at("train"));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed checkpoint manifest: ") + e.what());
    }

    Rng rng(0);  // values are overwritten below; init only builds the structure
    ckpt.params = init_model(ckpt.model_cfg, rng);
    auto named = ckpt.params.named();
    const auto& plist = manifest.at("params");
    if (plist.size() != named.size())
        throw InputError("checkpoint parameter list does not match the model structure");
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& entry = plist[i];
        if (entry.at("name").get<std::string>() != named[i].first)
            throw InputError("checkpoint parameter order mismatch at " + named[i].first);
        auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != named[i].second->value.shape)
            throw InputError("checkpoint shape mismatch for " + named[i].first);
        named[i].second->value = read_bin(base / "params" / (named[i].first + ".bin"), shape);
    }

    ckpt.has_opt_state = manifest.at("optimizer").at("present");
    if (ckpt.has_opt_state) {
        ckpt.opt_state.t = manifest.at("optimizer").at("t");
        for (const auto& [name, var] : named) {
            ckpt.opt_state.m.push_back(read_bin(base / "params" / (name + ".m.bin"),
                                                var->value.shape));
            ckpt.opt_state.v.push_back(read_bin(base / "params" / (name + ".v.bin"),
                                                var->value.shape));
        }
    }
    return ckpt;
}

// ---- training loop -------------------------------------------------------------------

Tensor targets_of(const std::vector<EcgRecord>& records) {
    Tensor t({records.size(), kNumClasses});
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t c = 0; c < kNumClasses; ++c)
            t.at(i, c) = records[i].labels[c] ? 1.0 : 0.0;
    return t;
}

namespace {

std::vector<Tensor> snapshot(const std::vector<Var>& params) {
    std::vector<Tensor> vals;
    vals.reserve(params.size());
    for (const auto& p : params) vals.push_back(p->value);
    return vals;
}

void restore(const std::vector<Var>& params, const std::vector<Tensor>& vals) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = vals[i];
}

} // namespace

FoldResult train_fold(const std::vector<EcgRecord>& train_set,
                      const std::vector<EcgRecord>& val_set, const ModelConfig& model_cfg,
                      const TrainConfig& train_cfg) {
    train_cfg.validate();
    model_cfg.validate();
    if (train_set.empty() || val_set.empty())
        throw InputError("train_fold: empty train or val split");

    Rng rng(train_cfg.seed);
    ModelParams params = init_model(model_cfg, rng);
    auto leaves = params.all();
    AdamWState opt = AdamWState::init_for(leaves);
    PlateauScheduler sched(train_cfg.scheduler_factor, train_cfg.scheduler_patience,
                           train_cfg.min_delta);

    Tensor val_targets = targets_of(val_set);
    std::array<double, kNumClasses> half;
    half.fill(0.5);

    FoldResult result;
    double best_f1 = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::vector<Tensor> best_values = snapshot(leaves);
    std::size_t epochs_since_best = 0;
    double inv_accum = 1.0 / static_cast<double>(train_cfg.grad_accum_steps);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    zero_grad(leaves);
    for (std::size_t epoch = 1; epoch <= train_cfg.max_epochs && !result.aborted; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        std::size_t pending = 0;  // micro-batches accumulated since the last step

        for (std::size_t start = 0; start < order.size();
             start += train_cfg.batch_size) {
            std::size_t stop = std::min(start + train_cfg.batch_size, order.size());
            std::size_t bsz = stop - start;

            Tensor batch_targets({bsz, kNumClasses});
            std::vector<ModelOutput> outputs;
            outputs.reserve(bsz);
            ForwardOptions fwd;
            fwd.training = true;
            fwd.rng = &rng;
            for (std::size_t b = 0; b < bsz; ++b) {
                const EcgRecord& rec = train_set[order[start + b]];
                outputs.push_back(model_forward(rec.signal, params, model_cfg, fwd));
                for (std::size_t c = 0; c < kNumClasses; ++c)
                    batch_targets.at(b, c) = rec.labels[c] ? 1.0 : 0.0;
            }

            Var loss = total_loss(outputs, batch_targets, train_cfg.loss);
            double loss_val = loss->value[0];
            if (!std::isfinite(loss_val)) {
                restore(leaves, best_values);
                result.aborted = true;
                result.diagnostic = "non-finite loss at epoch " + std::to_string(epoch) +
                                    "; restored weights from epoch " +
                                    std::to_string(best_epoch);
                break;
            }
            epoch_loss += loss_val * static_cast<double>(bsz);
            seen += bsz;

            backward(scalar_mul(loss, inv_accum));
            if (++pending == train_cfg.grad_accum_steps) {
                adamw_step(leaves, opt, train_cfg.lr * sched.multiplier(),
                           train_cfg.weight_decay);
                zero_grad(leaves);
                pending = 0;
            }
        }
        if (result.aborted) break;
        if (pending > 0) {
            adamw_step(leaves, opt, train_cfg.lr * sched.multiplier(), train_cfg.weight_decay);
            zero_grad(leaves);
        }

        Tensor val_probs = predict_probs(val_set, params, model_cfg);
        MetricsReport val = compute_metrics(val_probs, val_targets, half);

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = epoch_loss / static_cast<double>(seen);
        entry.val_f1 = val.macro_f1;
        entry.lr = train_cfg.lr * sched.multiplier();
        result.log.push_back(entry);

        if (val.macro_f1 > best_f1 + train_cfg.min_delta) {
            best_f1 = val.macro_f1;
            best_epoch = epoch;
            best_values = snapshot(leaves);
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
        }
        sched.observe(val.macro_f1);
        if (epochs_since_best >= train_cfg.early_stop_patience) break;
    }

    restore(leaves, best_values);
    result.best.model_cfg = model_cfg;
    result.best.train_cfg = train_cfg;
    result.best.params = params;
    result.best.opt_state = opt;
    result.best.has_opt_state = true;
    result.best.epoch = best_epoch;
    result.best.best_val_f1 = std::isfinite(best_f1) ? best_f1 : 0.0;
    if (!result.aborted) {
        Tensor val_probs = predict_probs(val_set, params, model_cfg);
        result.best.thresholds = select_thresholds(val_probs, val_targets);
    }
    return result;
}

void write_epoch_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write " + path);
    f << "epoch,train_loss,val_f1,lr\n";
    f.precision(12);
    for (const auto& e : log)
        f << e.epoch << ',' << e.train_loss << ',' << e.val_f1 << ',' << e.lr << '\n';
}

CvResult cross_validate(const std::vector<EcgRecord>& records, const Splits& splits,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
    if (splits.folds.empty()) throw ConfigError("cross_validate: no folds");
    CvResult cv;
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t f = 0; f < splits.folds.size(); ++f) {
        std::vector<EcgRecord> tr, va;
        for (std::size_t idx : splits.folds[f].train) tr.push_back(records[idx]);
        for (std::size_t idx : splits.folds[f].val) va.push_back(records[idx]);
        TrainConfig fold_cfg = train_cfg;
        fold_cfg.seed = train_cfg.seed + f;
        cv.folds.push_back(train_fold(tr, va, model_cfg, fold_cfg));
        double f1 = cv.folds.back().best.best_val_f1;
        sum += f1;
        sumsq += f1 * f1;
        if (f1 > cv.folds[cv.best_fold].best.best_val_f1) cv.best_fold = f;
    }
    double n = static_cast<double>(cv.folds.size());
    cv.mean_val_f1 = sum / n;
    cv.std_val_f1 = std::sqrt(std::max(0.0, sumsq / n - cv.mean_val_f1 * cv.mean_val_f1));
    return cv;
}

} // namespace cpf
