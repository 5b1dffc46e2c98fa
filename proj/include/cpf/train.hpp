#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cpf/data.hpp"
#include "cpf/eval.hpp"
#include "cpf/loss.hpp"
#include "cpf/model.hpp"
#include "cpf/tensor.hpp"

namespace cpf {

struct TrainConfig {
    double lr = 5e-5;
    double weight_decay = 0.01;
    double scheduler_factor = 0.2;
    std::size_t scheduler_patience = 3;
    std::size_t early_stop_patience = 5;
    std::size_t max_epochs = 30;
    std::size_t batch_size = 16;
    std::size_t grad_accum_steps = 2;
    double min_delta = 1e-5;
    std::uint64_t seed = 0;
    LossConfig loss;

    void validate() const;
};

// ---- optimizer ---------------------------------------------------------------

struct AdamWState {
    std::vector<Tensor> m, v;   // aligned with the param list
    std::size_t t = 0;          // step count

    static AdamWState init_for(const std::vector<ad::Var>& params);
};

// One decoupled-weight-decay Adam step using the grads currently stored on the
// params. beta1=0.9, beta2=0.999, eps=1e-8.
void adamw_step(const std::vector<ad::Var>& params, AdamWState& state, double lr,
                double weight_decay);

// ---- LR scheduling / stopping ---------------------------------------------------

// Reduce-on-plateau: after `patience` epochs without improvement over the best
// seen metric (by more than min_delta), multiply lr by factor and reset.
class PlateauScheduler {
public:
    PlateauScheduler(double factor, std::size_t patience, double min_delta);
    // Returns true when this observation triggers a reduction.
    bool observe(double metric);
    double multiplier() const { return multiplier_; }

private:
    double factor_;
    std::size_t patience_;
    double min_delta_;
    double best_;
    std::size_t bad_epochs_ = 0;
    double multiplier_ = 1.0;
};

// ---- thresholds ----------------------------------------------------------------

// Per-class F1-maximizing threshold over the grid {0.01, 0.015, ..., 0.99}.
// Ties break toward the value nearest 0.5, then the smaller one. Classes with
// no positives get 0.5 and a warning.
std::array<double, kNumClasses> select_thresholds(const Tensor& probs, const Tensor& targets,
                                                  std::vector<std::string>* warnings = nullptr);

// ---- checkpointing ---------------------------------------------------------------

// Layout: <dir>/manifest.json + <dir>/params/<name>.bin (raw little-endian f64)
// plus optimizer moments as <name>.m.bin/.v.bin. Writes are atomic: the whole
// checkpoint is staged in a temp directory and renamed into place.
struct Checkpoint {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    ModelParams params;
    AdamWState opt_state;
    bool has_opt_state = false;
    std::size_t epoch = 0;
    double best_val_f1 = 0.0;
    std::array<double, kNumClasses> thresholds = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
};

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

// ---- training loop -----------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_f1 = 0.0;
    double lr = 0.0;
};

struct FoldResult {
    Checkpoint best;               // weights from the best-val-F1 epoch
    std::vector<EpochLog> log;
    bool aborted = false;          // NaN loss: best holds the last good weights
    std::string diagnostic;
};

Tensor targets_of(const std::vector<EcgRecord>& records);

FoldResult train_fold(const std::vector<EcgRecord>& train_set,
                      const std::vector<EcgRecord>& val_set, const ModelConfig& model_cfg,
                      const TrainConfig& train_cfg);

void write_epoch_log_csv(const std::string& path, const std::vector<EpochLog>& log);

// ---- cross-validation ---------------------------------------------------------------

struct CvResult {
    std::vector<FoldResult> folds;
    std::size_t best_fold = 0;     // by val macro F1
    double mean_val_f1 = 0.0;
    double std_val_f1 = 0.0;
};

CvResult cross_validate(const std::vector<EcgRecord>& records, const Splits& splits,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg);

} // namespace cpf
