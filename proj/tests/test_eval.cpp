#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cpf/errors.hpp"
#include "cpf/eval.hpp"
#include "cpf/train.hpp"
#include "cpf/selftest.hpp"
#include "doctest.h"

using namespace cpf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("cpfeval_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::array<double, kNumClasses> halves() {
    std::array<double, kNumClasses> t;
    t.fill(0.5);
    return t;
}

// Brute-force per-class scores straight from the definitions.
struct Brute {
    double precision, recall, f1, auc;
    bool auc_defined;
};

Brute brute_class(const Tensor& probs, const Tensor& targets, std::size_t c, double thr) {
    std::size_t n = probs.rows();
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
        bool pred = probs.at(i, c) >= thr;
        bool truth = targets.at(i, c) > 0.5;
        if (pred && truth) ++tp;
        else if (pred) ++fp;
        else if (truth) ++fn;
    }
    Brute b{};
    b.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    b.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    b.f1 = b.precision + b.recall > 0
               ? 2 * b.precision * b.recall / (b.precision + b.recall)
               : 0.0;
    // AUC as the pairwise comparison probability with ties at 1/2.
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (targets.at(i, c) < 0.5) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (targets.at(j, c) > 0.5) continue;
            pairs += 1.0;
            if (probs.at(i, c) > probs.at(j, c)) wins += 1.0;
            else if (probs.at(i, c) == probs.at(j, c)) wins += 0.5;
        }
    }
    b.auc_defined = pairs > 0.0;
    b.auc = b.auc_defined ? wins / pairs : 0.0;
    return b;
}

} // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("perfect predictions") {
    Rng rng(1);
    Tensor targets({20, kNumClasses}), probs({20, kNumClasses});
    for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            bool pos = (i + c) % 3 == 0;
            targets.at(i, c) = pos ? 1.0 : 0.0;
            probs.at(i, c) = pos ? 0.9 : 0.1;
        }
    MetricsReport r = compute_metrics(probs, targets, halves());
    CHECK(r.hamming_accuracy == 1.0);
    CHECK(r.macro_f1 == 1.0);
    CHECK(r.macro_precision == 1.0);
    CHECK(r.macro_recall == 1.0);
    CHECK(r.macro_auc == 1.0);
    for (std::size_t c = 0; c < kNumClasses; ++c)
        CHECK(r.prediction_rate.at(c, c) == 1.0);
    CHECK(r.n_samples == 20);
}

TEST_CASE("all-negative predictions score zero without dividing by zero") {
    Tensor targets({5, kNumClasses}), probs({5, kNumClasses});
    for (std::size_t i = 0; i < 5; ++i) targets.at(i, 0) = 1.0;
    for (auto& v : probs.data) v = 0.1;
    MetricsReport r = compute_metrics(probs, targets, halves());
    CHECK(r.precision[0] == 0.0);
    CHECK(r.recall[0] == 0.0);
    CHECK(r.f1[0] == 0.0);
    CHECK(r.macro_f1 == 0.0);  // only class 0 is present
    CHECK(r.present[0]);
    for (std::size_t c = 1; c < kNumClasses; ++c) CHECK_FALSE(r.present[c]);
    // Hamming: class 0 wrong on every record, others right.
    CHECK(r.hamming_accuracy == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("metrics match the brute-force oracle on random instances") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 5 + rng.below(60);
        Tensor probs({n, kNumClasses}), targets({n, kNumClasses});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                targets.at(i, c) = rng.uniform() < 0.35 ? 1.0 : 0.0;
                // Quantized probs to force ties through the AUC rank path.
                probs.at(i, c) = std::round(rng.uniform() * 10.0) / 10.0;
            }
        std::array<double, kNumClasses> thr;
        for (auto& t : thr) t = 0.2 + 0.6 * rng.uniform();

        MetricsReport r = compute_metrics(probs, targets, thr);
        double mp = 0, mr = 0, mf = 0, ma = 0;
        std::size_t np = 0, na = 0;
        double ham = 0.0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            Brute b = brute_class(probs, targets, c, thr[c]);
            bool present = false;
            for (std::size_t i = 0; i < n; ++i) present |= targets.at(i, c) > 0.5;
            CHECK(r.present[c] == present);
            CHECK(std::fabs(r.precision[c] - b.precision) < 1e-12);
            CHECK(std::fabs(r.recall[c] - b.recall) < 1e-12);
            CHECK(std::fabs(r.f1[c] - b.f1) < 1e-12);
            CHECK(r.auc_defined[c] == b.auc_defined);
            if (b.auc_defined) CHECK(std::fabs(r.auc[c] - b.auc) < 1e-12);
            if (present) {
                mp += b.precision;
                mr += b.recall;
                mf += b.f1;
                ++np;
            }
            if (b.auc_defined) {
                ma += b.auc;
                ++na;
            }
            for (std::size_t i = 0; i < n; ++i)
                ham += ((probs.at(i, c) >= thr[c]) == (targets.at(i, c) > 0.5)) ? 1.0 : 0.0;
        }
        if (np > 0) {
            CHECK(std::fabs(r.macro_precision - mp / np) < 1e-12);
            CHECK(std::fabs(r.macro_recall - mr / np) < 1e-12);
            CHECK(std::fabs(r.macro_f1 - mf / np) < 1e-12);
        }
        if (na > 0) CHECK(std::fabs(r.macro_auc - ma / na) < 1e-12);
        CHECK(std::fabs(r.hamming_accuracy - ham / (n * kNumClasses)) < 1e-12);
    }
}

TEST_CASE("AUC is invariant under monotone transforms") {
    Rng rng(3);
    std::size_t n = 40;
    Tensor probs({n, kNumClasses}), targets({n, kNumClasses});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            targets.at(i, c) = rng.uniform() < 0.5 ? 1.0 : 0.0;
            probs.at(i, c) = 0.05 + 0.9 * rng.uniform();
        }
    Tensor warped = probs;
    for (auto& v : warped.data) v = 1.0 / (1.0 + std::exp(-(3.0 * v - 1.0)));  // monotone
    MetricsReport a = compute_metrics(probs, targets, halves());
    MetricsReport b = compute_metrics(warped, targets, halves());
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        REQUIRE(a.auc_defined[c]);
        CHECK(std::fabs(a.auc[c] - b.auc[c]) < 1e-12);
    }
}

TEST_CASE("prediction rate oracle") {
    Tensor targets({4, kNumClasses}), probs({4, kNumClasses});
    // Records 0,1 true for class 0; predictions fire class 1 on record 0 only.
    targets.at(0, 0) = targets.at(1, 0) = 1.0;
    probs.at(0, 1) = 0.9;
    MetricsReport r = compute_metrics(probs, targets, halves());
    CHECK(r.prediction_rate.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.prediction_rate.at(0, 0) == 0.0);
}

TEST_CASE("metrics input validation") {
    Tensor probs({3, kNumClasses}), targets({4, kNumClasses});
    CHECK_THROWS_AS(compute_metrics(probs, targets, halves()), InputError);
}

TEST_CASE("to_json emits parseable structure") {
    Rng rng(5);
    Tensor probs({6, kNumClasses}), targets({6, kNumClasses});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            targets.at(i, c) = rng.uniform() < 0.5 ? 1.0 : 0.0;
            probs.at(i, c) = rng.uniform();
        }
    MetricsReport r = compute_metrics(probs, targets, halves());
    std::string js = r.to_json();
    CHECK(js.find("macro_f1") != std::string::npos);
    CHECK(js.find("prediction_rate") != std::string::npos);
}

TEST_CASE("default ablation subsets") {
    auto subsets = default_ablation_subsets();
    REQUIRE(subsets.size() == 16);
    CHECK(subsets.back().name == "full");
    std::size_t singles = 0;
    for (const auto& s : subsets) {
        std::size_t count = 0;
        for (std::size_t l = 0; l < 12; ++l)
            if (s.mask.included[l]) ++count;
        if (count == 1) ++singles;
        if (s.name == "limb") CHECK(count == 6);
        if (s.name == "precordial") CHECK(count == 6);
        if (s.name == "reduced") {
            CHECK(count == 4);
            CHECK(s.mask.included[0]);
            CHECK(s.mask.included[1]);
            CHECK(s.mask.included[6]);
            CHECK(s.mask.included[10]);
        }
        if (s.name == "full") CHECK(count == 12);
    }
    CHECK(singles == 12);
}

TEST_CASE("ablation: full mask is bit-identical to direct evaluation") {
    ModelConfig cfg = micro_config();
    Rng rng(9);
    ModelParams params = init_model(cfg, rng);
    std::vector<EcgRecord> recs;
    for (int i = 0; i < 6; ++i) {
        EcgRecord r;
        r.id = "a" + std::to_string(i);
        r.signal = Tensor({12, cfg.max_seq_len * cfg.pool_factor});
        for (auto& v : r.signal.data) v = rng.normal();
        r.labels[i % 2 == 0 ? 0 : 3] = true;
        recs.push_back(std::move(r));
    }

    auto rows = ablate_leads(recs, params, cfg, halves(), default_ablation_subsets());
    REQUIRE(rows.size() == 16);

    Tensor direct = predict_probs(recs, params, cfg);
    MetricsReport base = compute_metrics(direct, targets_of(recs), halves());
    const MetricsReport& full = rows.back().report;
    CHECK(full.macro_f1 == base.macro_f1);
    CHECK(full.hamming_accuracy == base.hamming_accuracy);
    CHECK(full.macro_auc == base.macro_auc);

    TempDir tmp;
    std::string csv = (tmp.path / "ablation.csv").string();
    write_ablation_csv(csv, rows);
    std::ifstream f(csv);
    std::string line;
    std::getline(f, line);
    CHECK(line ==
          "subset,leads,macro_f1,macro_auc,macro_precision,macro_recall,hamming_accuracy");
    std::size_t n = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++n;
    CHECK(n == 16);
}

TEST_CASE("average attention is the key marginal") {
    // Two layers, 1 head, T=3; hand-build the weights.
    Tensor l1({1, 3, 3}), l2({1, 3, 3});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            l1[i * 3 + j] = (j == 0) ? 1.0 : 0.0;           // all mass on key 0
            l2[i * 3 + j] = 1.0 / 3.0;                      // uniform
        }
    auto avg = average_attention({l1, l2});
    REQUIRE(avg.size() == 3);
    CHECK(avg[0] == doctest::Approx((1.0 + 1.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(avg[1] == doctest::Approx((0.0 + 1.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(avg[0] + avg[1] + avg[2] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("explanation bundle") {
    ModelConfig cfg = micro_config();
    Rng rng(11);
    ModelParams params = init_model(cfg, rng);
    std::vector<EcgRecord> recs;
    EcgRecord r;
    r.id = "rec0";
    r.signal = Tensor({12, cfg.max_seq_len * cfg.pool_factor});
    for (auto& v : r.signal.data) v = rng.normal();
    r.labels[0] = true;
    r.sample_rate_hz = cfg.sample_rate_hz;
    recs.push_back(std::move(r));

    TempDir tmp;
    ExplainOptions opt;
    opt.svg = true;
    export_explanations(tmp.path.string(), recs, params, cfg, opt);

    fs::path base = tmp.path / "rec0";
    for (const char* name :
         {"maps.csv", "relevance.csv", "uncertainty.csv", "probs.csv", "avg_attention.csv"})
        CHECK(fs::exists(base / name));
    CHECK(fs::exists(base / "overlay.svg"));

    // maps.csv: 6 class rows, each summing to 1.
    std::ifstream f(base / "maps.csv");
    std::string line;
    std::getline(f, line);  // header with token times
    std::size_t rows = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        ++rows;
        double s = 0.0;
        std::size_t pos = line.find(',');  // skip class name column
        std::string rest = line.substr(pos + 1);
        std::stringstream ss(rest);
        std::string cell;
        while (std::getline(ss, cell, ',')) s += std::stod(cell);
        CHECK(std::fabs(s - 1.0) < 1e-6);  // CSV precision, not model precision
    }
    CHECK(rows == kNumClasses);
}

TEST_SUITE_END();
