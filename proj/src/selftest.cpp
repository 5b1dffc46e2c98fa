#include "cpf/selftest.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <vector>

#include "cpf/data.hpp"
#include "cpf/errors.hpp"
#include "cpf/eval.hpp"
#include "cpf/loss.hpp"
#include "cpf/model.hpp"
#include "cpf/preprocess.hpp"
#include "cpf/train.hpp"

namespace fs = std::filesystem;

namespace cpf {

using namespace ad;

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.num_patterns = 2;
    cfg.pool_factor = 4;
    cfg.max_seq_len = 12;
    cfg.ffn_mult = 2;
    cfg.dropout = 0.0;
    cfg.kernel_sizes = {5, 9};
    cfg.temporal_scales = {1, 2};
    cfg.sample_rate_hz = 100.0;
    return cfg;
}

GradCheckReport model_grad_check(std::size_t batch, std::uint64_t seed) {
    ModelConfig cfg = micro_config();
    Rng rng(seed);
    ModelParams params = init_model(cfg, rng);

    std::size_t len = cfg.max_seq_len * cfg.pool_factor;
    std::vector<Tensor> signals;
    Tensor targets({batch, kNumClasses});
    for (std::size_t b = 0; b < batch; ++b) {
        Tensor s({12, len});
        for (auto& v : s.data) v = rng.normal();
        signals.push_back(std::move(s));
        for (std::size_t c = 0; c < kNumClasses; ++c)
            targets.at(b, c) = ((b + c) % 2 == 0) ? 1.0 : 0.0;
    }

    LossConfig loss_cfg;  // gamma=2, diversity on: exercises every head path
    auto named = params.named();
    std::vector<Var> leaves;
    std::vector<std::string> names;
    for (auto& [name, var] : named) {
        leaves.push_back(var);
        names.push_back(name);
    }

    auto build = [&](const std::vector<Var>&) -> Var {
        std::vector<ModelOutput> outputs;
        for (const auto& s : signals) outputs.push_back(model_forward(s, params, cfg));
        return total_loss(outputs, targets, loss_cfg);
    };
    return grad_check(build, leaves, 1e-5, 1e-4, names);
}

namespace {

// Plain-loop multi-head attention used as the zero-bias reference.
Tensor reference_mha(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                     const Tensor& wo, std::size_t n_heads) {
    std::size_t t_len = x.rows(), d = x.cols(), dh = d / n_heads;
    auto matmul_t = [](const Tensor& a, const Tensor& b) {
        Tensor c({a.rows(), b.cols()});
        for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t k = 0; k < a.cols(); ++k)
                for (std::size_t j = 0; j < b.cols(); ++j)
                    c.at(i, j) += a.at(i, k) * b.at(k, j);
        return c;
    };
    Tensor q = matmul_t(x, wq), k = matmul_t(x, wk), v = matmul_t(x, wv);
    Tensor concat({t_len, d});
    for (std::size_t h = 0; h < n_heads; ++h) {
        for (std::size_t i = 0; i < t_len; ++i) {
            std::vector<double> scores(t_len);
            double mx = -1e300;
            for (std::size_t j = 0; j < t_len; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e)
                    s += q.at(i, h * dh + e) * k.at(j, h * dh + e);
                scores[j] = s / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, scores[j]);
            }
            double z = 0.0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                z += s;
            }
            for (std::size_t e = 0; e < dh; ++e) {
                double acc = 0.0;
                for (std::size_t j = 0; j < t_len; ++j)
                    acc += scores[j] / z * v.at(j, h * dh + e);
                concat.at(i, h * dh + e) = acc;
            }
        }
    }
    return matmul_t(concat, wo);
}

struct Battery {
    std::ostream& out;
    int failures = 0;

    void run(const std::string& name, const std::function<void()>& fn) {
        auto t0 = std::chrono::steady_clock::now();
        try {
            fn();
            auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
            out << "[ok]   " << name << " (" << ms << " ms)\n";
        } catch (const std::exception& e) {
            ++failures;
            out << "[FAIL] " << name << ": " << e.what() << "\n";
        }
    }
};

void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

double sigmoid_d(double z) { return 1.0 / (1.0 + std::exp(-z)); }

} // namespace

int run_selftest(std::ostream& out) {
    Battery b{out};

    b.run("bandpass gain profile", [] {
        FilterSpec spec;
        SosFilter f = design_butterworth_bandpass(spec);
        double g10 = f.gain_at(10.0, spec.sample_rate_hz);
        double g60 = f.gain_at(60.0, spec.sample_rate_hz);
        double gdc = f.gain_at(0.01, spec.sample_rate_hz);
        double gdrift = f.gain_at(0.2, spec.sample_rate_hz);
        require(std::fabs(g10 - 1.0) < 0.05, "passband gain off at 10 Hz: " + std::to_string(g10));
        require(g60 < 0.3, "60 Hz leakage: " + std::to_string(g60));
        require(gdc < 0.1 && gdrift < 0.1, "baseline drift not attenuated > 20 dB");
    });

    b.run("filtfilt on constant input", [] {
        SosFilter f = design_butterworth_bandpass(FilterSpec{});
        Tensor x({1, 1000}, 1.0);
        Tensor y = filtfilt(f, x);
        for (double v : y.data)
            require(std::fabs(v) < 1e-3, "constant input not removed: " + std::to_string(v));
    });

    b.run("10 Hz sine fidelity through filter+resample", [] {
        FilterSpec spec;
        std::size_t len = 5000;
        Tensor x({1, len});
        for (std::size_t i = 0; i < len; ++i)
            x[i] = std::sin(2.0 * 3.14159265358979323846 * 10.0 * static_cast<double>(i) / 500.0);
        Tensor y = resample(filtfilt(design_butterworth_bandpass(spec), x), 500.0, 100.0);
        require(y.cols() == len / 5, "resampled length is not floor(L/5)");
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < y.cols(); ++i) {
            double ph = 2.0 * 3.14159265358979323846 * 10.0 * static_cast<double>(i) / 100.0;
            sa += y.at(0, i) * std::sin(ph);
            sb += y.at(0, i) * std::cos(ph);
        }
        sa = 2.0 * sa / static_cast<double>(y.cols());
        sb = 2.0 * sb / static_cast<double>(y.cols());
        double amp = std::hypot(sa, sb);
        double phase = std::atan2(sb, sa);
        require(std::fabs(amp - 1.0) <= 0.05, "amplitude error > 5%: " + std::to_string(amp));
        require(std::fabs(phase) < 0.02, "phase lag detected: " + std::to_string(phase));
    });

    b.run("focal loss reduces to half BCE at gamma=0", [] {
        Rng rng(7);
        Tensor logits_t({4, kNumClasses});
        Tensor targets({4, kNumClasses});
        for (auto& v : logits_t.data) v = rng.normal();
        for (auto& v : targets.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        LossConfig cfg;
        cfg.gamma = 0.0;
        cfg.diversity_weight = 0.0;
        Var loss = focal_loss(ad::param(logits_t), targets, cfg);
        double bce = 0.0;
        for (std::size_t i = 0; i < logits_t.numel(); ++i) {
            double p = sigmoid_d(logits_t[i]);
            bce -= targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p);
        }
        bce /= static_cast<double>(logits_t.numel());
        require(std::fabs(loss->value[0] - 0.5 * bce) < 1e-12, "focal != BCE/2");
    });

    b.run("focal loss hand value at p=0.5", [] {
        Tensor logits_t({1, kNumClasses});
        Tensor targets({1, kNumClasses}, 1.0);
        LossConfig cfg;
        Var loss = focal_loss(ad::param(logits_t), targets, cfg);
        double expect = 0.5 * 0.25 * std::log(2.0);  // 0.086643
        require(std::fabs(loss->value[0] - expect) < 1e-6, "hand-computed focal value missed");
    });

    b.run("diversity loss bounds", [] {
        std::size_t t_len = 8;
        Tensor ortho({kNumClasses, t_len});
        for (std::size_t c = 0; c < kNumClasses; ++c) ortho.at(c, c) = 1.0;
        Var d0 = attention_diversity_loss({ad::constant(ortho)});
        require(std::fabs(d0->value[0]) < 1e-12, "orthogonal maps should score 0");
        Tensor same({kNumClasses, t_len});
        for (std::size_t c = 0; c < kNumClasses; ++c)
            for (std::size_t k = 0; k < t_len; ++k) same.at(c, k) = 1.0 / t_len;
        Var d1 = attention_diversity_loss({ad::constant(same)});
        require(std::fabs(d1->value[0] - 1.0) < 1e-12, "identical maps should score 1");
    });

    b.run("metrics vs brute-force oracle", [] {
        Rng rng(11);
        std::size_t n = 40;
        Tensor probs({n, kNumClasses}), targets({n, kNumClasses});
        for (auto& v : probs.data) v = rng.uniform();
        for (auto& v : targets.data) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
        std::array<double, kNumClasses> th;
        th.fill(0.5);
        MetricsReport r = compute_metrics(probs, targets, th);

        std::size_t mismatch = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < kNumClasses; ++c)
                mismatch += ((probs.at(i, c) >= 0.5) != (targets.at(i, c) != 0.0)) ? 1 : 0;
        double ham = 1.0 - static_cast<double>(mismatch) / static_cast<double>(n * kNumClasses);
        require(std::fabs(r.hamming_accuracy - ham) < 1e-12, "hamming mismatch");

        for (std::size_t c = 0; c < kNumClasses; ++c) {
            double tp = 0, fp = 0, fn_ = 0;
            for (std::size_t i = 0; i < n; ++i) {
                bool p = probs.at(i, c) >= 0.5, t = targets.at(i, c) != 0.0;
                tp += (p && t);
                fp += (p && !t);
                fn_ += (!p && t);
            }
            double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
            double rec = tp + fn_ > 0 ? tp / (tp + fn_) : 0.0;
            double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
            require(std::fabs(r.precision[c] - prec) < 1e-12, "precision mismatch");
            require(std::fabs(r.recall[c] - rec) < 1e-12, "recall mismatch");
            require(std::fabs(r.f1[c] - f1) < 1e-12, "f1 mismatch");
            // AUC oracle: pairwise comparisons with 0.5 credit for ties.
            double wins = 0.0, pairs = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    if (targets.at(i, c) != 1.0 || targets.at(j, c) != 0.0) continue;
                    pairs += 1.0;
                    if (probs.at(i, c) > probs.at(j, c)) wins += 1.0;
                    else if (probs.at(i, c) == probs.at(j, c)) wins += 0.5;
                }
            if (pairs > 0)
                require(r.auc_defined[c] && std::fabs(r.auc[c] - wins / pairs) < 1e-12,
                        "auc mismatch");
        }
    });

    b.run("zero-strength attention equals vanilla MHA", [] {
        ModelConfig cfg = micro_config();
        Rng rng(3);
        PhysioAttnParams p = init_attention(cfg, rng);
        p.local_strength->value[0] = 0.0;
        for (auto& v : p.rhythm_weight->value.data) v = 0.0;
        p.cycle_strength->value[0] = 0.0;
        p.beat_strength->value[0] = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            Tensor x({cfg.max_seq_len, cfg.d_model});
            for (auto& v : x.data) v = rng.normal();
            AttnResult got = physio_attention(ad::constant(x), p, cfg);
            Tensor want = reference_mha(x, p.wq->value, p.wk->value, p.wv->value, p.wo->value,
                                        cfg.n_heads);
            for (std::size_t i = 0; i < want.numel(); ++i)
                require(std::fabs(got.out->value[i] - want[i]) < 1e-10,
                        "zero-bias attention deviates from reference");
        }
    });

    b.run("forward structural invariants", [] {
        ModelConfig cfg = micro_config();
        Rng rng(5);
        ModelParams params = init_model(cfg, rng);
        Tensor sig({12, cfg.max_seq_len * cfg.pool_factor});
        for (auto& v : sig.data) v = rng.normal();
        ModelOutput o = model_forward(sig, params, cfg);
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < o.maps->value.cols(); ++k) s += o.maps->value.at(c, k);
            require(std::fabs(s - 1.0) < 1e-9, "map row does not sum to 1");
            double lo = std::min(o.logits_explain->value[c], o.logits_adaptive->value[c]);
            double hi = std::max(o.logits_explain->value[c], o.logits_adaptive->value[c]);
            require(o.logits->value[c] >= lo - 1e-12 && o.logits->value[c] <= hi + 1e-12,
                    "fused logit escapes the head interval");
        }
        for (double v : o.relevance->value.data)
            require(v > 0.0 && v < 1.0, "relevance outside (0,1)");
        for (double v : o.uncertainty->value.data)
            require(v > 0.0 && v < 1.0, "uncertainty outside (0,1)");
    });

    b.run("checkpoint round-trip is bitwise", [] {
        ModelConfig cfg = micro_config();
        Rng rng(9);
        Checkpoint ck;
        ck.model_cfg = cfg;
        ck.params = init_model(cfg, rng);
        ck.opt_state = AdamWState::init_for(ck.params.all());
        ck.has_opt_state = true;
        Tensor sig({12, cfg.max_seq_len * cfg.pool_factor});
        for (auto& v : sig.data) v = rng.normal();
        Tensor before = model_forward(sig, ck.params, cfg).logits->value;

        fs::path dir = fs::temp_directory_path() / "cpf_selftest_ckpt";
        save_checkpoint(dir.string(), ck);
        Checkpoint loaded = load_checkpoint(dir.string());
        fs::remove_all(dir);
        Tensor after = model_forward(sig, loaded.params, loaded.model_cfg).logits->value;
        for (std::size_t i = 0; i < before.numel(); ++i)
            require(before[i] == after[i], "round-trip logits differ");
    });

    b.run("plateau scheduler counter semantics", [] {
        PlateauScheduler s1(0.2, 3, 1e-5);
        for (double f : {0.1, 0.2, 0.3, 0.4, 0.5}) s1.observe(f);
        require(s1.multiplier() == 1.0, "improving history must not reduce lr");
        PlateauScheduler s2(0.2, 3, 1e-5);
        bool fired3 = false;
        s2.observe(0.5);
        fired3 |= s2.observe(0.5);
        fired3 |= s2.observe(0.5);
        require(!fired3, "reduction fired too early");
        require(s2.observe(0.5), "reduction should fire after epoch 4");
        require(std::fabs(s2.multiplier() - 0.2) < 1e-15, "wrong multiplier");
    });

    b.run("adamw zero-gradient behavior", [] {
        Var w = ad::param(Tensor::from({2}, {1.0, -2.0}));
        std::vector<Var> ps{w};
        zero_grad(ps);
        AdamWState st = AdamWState::init_for(ps);
        adamw_step(ps, st, 1e-3, 0.0);
        require(w->value[0] == 1.0 && w->value[1] == -2.0, "wd=0 zero-grad step moved params");
        adamw_step(ps, st, 0.1, 0.5);
        require(std::fabs(w->value[0] - 1.0 * (1.0 - 0.05)) < 1e-15 &&
                    std::fabs(w->value[1] - -2.0 * (1.0 - 0.05)) < 1e-15,
                "decoupled decay is not a pure shrink");
    });

    b.run("gradient accumulation equals one large batch", [] {
        Rng rng(13);
        Tensor w0({4, 3});
        for (auto& v : w0.data) v = rng.normal();
        Tensor x1({16, 4}), x2({16, 4}), y1({16, 3}), y2({16, 3});
        for (auto& v : x1.data) v = rng.normal();
        for (auto& v : x2.data) v = rng.normal();
        for (auto& v : y1.data) v = rng.normal();
        for (auto& v : y2.data) v = rng.normal();

        auto mse = [](const Var& w, const Tensor& x, const Tensor& y) {
            Var d = sub(matmul(ad::constant(x), w), ad::constant(y));
            return mean(mul(d, d));
        };

        Var wa = ad::param(w0);
        std::vector<Var> pa{wa};
        zero_grad(pa);
        AdamWState sa = AdamWState::init_for(pa);
        backward(scalar_mul(mse(wa, x1, y1), 0.5));
        backward(scalar_mul(mse(wa, x2, y2), 0.5));
        adamw_step(pa, sa, 1e-3, 0.01);

        Tensor xc({32, 4}), yc({32, 3});
        std::copy(x1.data.begin(), x1.data.end(), xc.data.begin());
        std::copy(x2.data.begin(), x2.data.end(), xc.data.begin() + x1.numel());
        std::copy(y1.data.begin(), y1.data.end(), yc.data.begin());
        std::copy(y2.data.begin(), y2.data.end(), yc.data.begin() + y1.numel());
        Var wb = ad::param(w0);
        std::vector<Var> pb{wb};
        zero_grad(pb);
        AdamWState sb = AdamWState::init_for(pb);
        backward(mse(wb, xc, yc));
        adamw_step(pb, sb, 1e-3, 0.01);

        for (std::size_t i = 0; i < w0.numel(); ++i)
            require(std::fabs(wa->value[i] - wb->value[i]) < 1e-10,
                    "accumulated step differs from large-batch step");
    });

    b.run("model gradient check (micro config)", [&out] {
        GradCheckReport r = model_grad_check();
        out << "       checked " << r.n_checked << " coords, max rel err " << r.max_rel_err
            << " (worst: " << r.worst_param << ")\n";
        require(r.pass, "finite-difference check failed at " + r.worst_param +
                            " with rel err " + std::to_string(r.max_rel_err));
    });

    out << (b.failures == 0 ? "selftest: all checks passed\n"
                            : "selftest: " + std::to_string(b.failures) + " check(s) FAILED\n");
    return b.failures;
}

} // namespace cpf
