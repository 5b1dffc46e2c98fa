#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpf/preprocess.hpp"
#include "cpf/rng.hpp"
#include "cpf/tensor.hpp"

namespace cpf {

inline constexpr std::size_t kNumClasses = 6;

extern const std::array<const char*, kNumClasses> kClassNames;

struct EcgRecord {
    std::string id;
    Tensor signal;                       // [12 x L]
    std::array<bool, kNumClasses> labels{};
    LeadMask lead_mask;
    double sample_rate_hz = 500.0;

    std::vector<double> label_vec() const;
};

struct RawSignal {
    Tensor leads;                        // [12 x L_raw], millivolts
    double sample_rate_hz = 500.0;

    void validate() const;
};

// SCP diagnostic code -> category index (0..5). Unknown codes fail loudly.
class LabelMap {
public:
    void add(const std::string& code, std::size_t category);
    bool contains(const std::string& code) const;
    std::size_t category(const std::string& code) const;
    std::size_t size() const { return map_.size(); }

    static LabelMap load(const std::string& path);
    void save(const std::string& path) const;
    // Codes for the common Chapman-Shaoxing SCP acronyms plus the synthetic
    // generator's codes.
    static LabelMap builtin();

private:
    std::map<std::string, std::size_t> map_;
};

struct LoadReport {
    std::vector<EcgRecord> records;      // signals still raw (pre-preprocess)
    std::vector<std::pair<std::string, std::string>> rejected;  // id, reason
};

// signals: <id>.csv per record (12 named columns, rows = samples, mV);
// labels: labels.csv with columns id,codes (';'-separated SCP codes).
LoadReport load_dataset(const std::string& signals_dir, const std::string& labels_path,
                        const LabelMap& label_map);

void write_signal_csv(const std::string& path, const Tensor& leads);
Tensor read_signal_csv(const std::string& path);

struct SynthSpec {
    double heart_rate_bpm = 75.0;
    double p_amp_mv = 0.15;
    double qrs_amp_mv = 1.2;
    double t_amp_mv = 0.3;
    double qrs_width_ms = 80.0;
    double st_offset_mv = 0.0;
    double noise_std_mv = 0.0;
    double duration_s = 10.0;
    double sample_rate_hz = 500.0;
    std::uint64_t seed = 0;

    void validate() const;
    // Toy archetype labels: pure function of the spec.
    std::array<bool, kNumClasses> labels() const;
    // Diagnostic codes matching labels(), resolvable via LabelMap::builtin().
    std::vector<std::string> codes() const;
    // QRS center times in seconds, one per beat.
    std::vector<double> beat_centers() const;
};

RawSignal synth_ecg(const SynthSpec& spec);

// Writes a synthetic corpus: signals/<id>.csv, labels.csv, labelmap.csv.
// Records cycle through the four archetypes plus multi-label combinations.
std::vector<SynthSpec> synth_corpus_specs(std::size_t count, double duration_s,
                                          double noise_std_mv, std::uint64_t seed);
void write_synth_corpus(const std::string& out_dir, const std::vector<SynthSpec>& specs);

struct SplitPlan {
    double test_fraction = 0.15;
    std::size_t n_folds = 5;
    std::uint64_t seed = 0;
};

struct Splits {
    std::vector<std::size_t> test;
    struct Fold {
        std::vector<std::size_t> train;
        std::vector<std::size_t> val;
    };
    std::vector<Fold> folds;
};

// Stratified by exact multi-hot pattern where the pattern count allows,
// deterministic under seed; fold val sets partition the non-test pool.
Splits make_splits(const std::vector<EcgRecord>& records, const SplitPlan& plan);

// Fraction of records carrying each label.
std::array<double, kNumClasses> class_prevalence(const std::vector<EcgRecord>& records);

} // namespace cpf
