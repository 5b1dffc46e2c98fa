#include "cpf/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cpf/errors.hpp"

namespace fs = std::filesystem;

namespace cpf {

const std::array<const char*, kNumClasses> kClassNames = {
    "SinusBrady", "SinusRhythmTachy", "SVA", "VentArrCondBlock", "STTIschemic", "StructMisc"};

std::vector<double> EcgRecord::label_vec() const {
    std::vector<double> v(kNumClasses);
    for (std::size_t i = 0; i < kNumClasses; ++i) v[i] = labels[i] ? 1.0 : 0.0;
    return v;
}

void RawSignal::validate() const {
    if (leads.ndim() != 2 || leads.shape[0] != 12)
        throw InputError("raw signal must have 12 channels, got " + leads.shape_str());
    if (static_cast<double>(leads.shape[1]) < 2.0 * sample_rate_hz)
        throw InputError("raw signal must span at least 2 seconds");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) {
        // trim whitespace and CR
        std::size_t a = field.find_first_not_of(" \t\r");
        std::size_t b = field.find_last_not_of(" \t\r");
        out.push_back(a == std::string::npos ? "" : field.substr(a, b - a + 1));
    }
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

} // namespace

void LabelMap::add(const std::string& code, std::size_t category) {
    if (category >= kNumClasses) throw ConfigError("label map category out of range: " + code);
    auto it = map_.find(code);
    if (it != map_.end() && it->second != category)
        throw ConfigError("label map: code '" + code + "' mapped to two categories");
    map_[code] = category;
}

bool LabelMap::contains(const std::string& code) const { return map_.count(code) > 0; }

std::size_t LabelMap::category(const std::string& code) const {
    auto it = map_.find(code);
    if (it == map_.end()) throw InputError("unmapped diagnostic code: " + code);
    return it->second;
}

LabelMap LabelMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open label map: " + path);
    LabelMap m;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (first && fields.size() >= 2 && fields[0] == "code") {
            first = false;
            continue;
        }
        first = false;
        if (fields.size() != 2) throw InputError("label map: malformed line '" + line + "'");
        m.add(fields[0], static_cast<std::size_t>(std::stoul(fields[1])));
    }
    return m;
}

void LabelMap::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write label map: " + path);
    out << "code,category_index\n";
    for (const auto& [code, cat] : map_) out << code << "," << cat << "\n";
}

LabelMap LabelMap::builtin() {
    LabelMap m;
    auto add_all = [&m](std::size_t cat, std::initializer_list<const char*> codes) {
        for (const char* c : codes) m.add(c, cat);
    };
    add_all(0, {"SB"});
    add_all(1, {"SR", "ST", "SI", "SNR"});
    add_all(2, {"AFIB", "AF", "AT", "SVT", "AVNRT", "AVRT", "SAAWR", "PAC", "APB"});
    add_all(3, {"PVC", "VPB", "VT", "LBBB", "RBBB", "CRBBB", "CLBBB", "AVB", "1AVB", "2AVB",
                "3AVB", "WPW", "IVB", "WQRS"});
    add_all(4, {"STD", "STE", "STTC", "TWC", "TWO", "QTIE", "STSH"});
    add_all(5, {"LVH", "RVH", "LAE", "RAE", "ALS", "ARS", "LOWV", "PWC"});
    return m;
}

void write_signal_csv(const std::string& path, const Tensor& leads) {
    if (leads.ndim() != 2 || leads.shape[0] != 12)
        throw InputError("signal CSV writer expects [12 x L]");
    std::ofstream out(path);
    if (!out) throw InputError("cannot write signal: " + path);
    for (std::size_t i = 0; i < 12; ++i) out << kLeadNames[i] << (i + 1 < 12 ? "," : "\n");
    std::size_t len = leads.cols();
    out.precision(10);
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t lead = 0; lead < 12; ++lead)
            out << leads.at(lead, t) << (lead + 1 < 12 ? "," : "\n");
    }
}

Tensor read_signal_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open signal: " + path);
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty signal file: " + path);
    auto header = split_csv_line(line);
    if (header.size() != 12)
        throw InputError("expected 12 columns, got " + std::to_string(header.size()));
    std::vector<double> samples;  // row-major by sample
    std::size_t n_rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 12)
            throw InputError("row " + std::to_string(n_rows + 1) + ": expected 12 columns, got " +
                             std::to_string(fields.size()));
        for (const auto& f : fields) {
            double v = std::stod(f);
            if (!std::isfinite(v))
                throw InputError("non-finite sample at row " + std::to_string(n_rows + 1));
            samples.push_back(v);
        }
        ++n_rows;
    }
    if (n_rows == 0) throw InputError("signal has no samples: " + path);
    Tensor out({12, n_rows});
    for (std::size_t t = 0; t < n_rows; ++t)
        for (std::size_t lead = 0; lead < 12; ++lead)
            out.at(lead, t) = samples[t * 12 + lead];
    return out;
}

LoadReport load_dataset(const std::string& signals_dir, const std::string& labels_path,
                        const LabelMap& label_map) {
    std::ifstream in(labels_path);
    if (!in) throw InputError("cannot open labels file: " + labels_path);
    LoadReport report;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (first && fields.size() >= 2 && fields[0] == "id") {
            first = false;
            continue;
        }
        first = false;
        if (fields.size() != 2) {
            report.rejected.emplace_back(line, "malformed labels row");
            continue;
        }
        const std::string& id = fields[0];
        EcgRecord rec;
        rec.id = id;
        try {
            // union over ';'-separated codes; unknown codes reject the record
            std::stringstream cs(fields[1]);
            std::string code;
            bool any = false;
            while (std::getline(cs, code, ';')) {
                if (code.empty()) continue;
                rec.labels[label_map.category(code)] = true;
                any = true;
            }
            if (!any) throw InputError("record has no diagnostic codes");
            rec.signal = read_signal_csv(signals_dir + "/" + id + ".csv");
            report.records.push_back(std::move(rec));
        } catch (const Error& e) {
            report.rejected.emplace_back(id, e.what());
        }
    }
    return report;
}

void SynthSpec::validate() const {
    if (heart_rate_bpm < 20.0 || heart_rate_bpm > 250.0)
        throw ConfigError("heart rate must be in [20, 250] bpm");
    if (duration_s < 2.0) throw ConfigError("duration must be >= 2 s");
    for (double a : {p_amp_mv, qrs_amp_mv, t_amp_mv, st_offset_mv, noise_std_mv})
        if (!std::isfinite(a)) throw ConfigError("amplitudes must be finite");
    if (qrs_width_ms <= 0.0) throw ConfigError("qrs width must be positive");
}

std::array<bool, kNumClasses> SynthSpec::labels() const {
    std::array<bool, kNumClasses> l{};
    if (heart_rate_bpm < 60.0)
        l[0] = true;
    else
        l[1] = true;
    if (qrs_width_ms >= 120.0) l[3] = true;
    if (std::fabs(st_offset_mv) >= 0.1) l[4] = true;
    return l;
}

std::vector<std::string> SynthSpec::codes() const {
    auto l = labels();
    std::vector<std::string> c;
    if (l[0]) c.push_back("SB");
    if (l[1]) c.push_back("SNR");
    if (l[3]) c.push_back("WQRS");
    if (l[4]) c.push_back("STSH");
    return c;
}

std::vector<double> SynthSpec::beat_centers() const {
    double period = 60.0 / heart_rate_bpm;
    std::vector<double> centers;
    for (double c = 0.5 * period; c < duration_s; c += period) centers.push_back(c);
    return centers;
}

RawSignal synth_ecg(const SynthSpec& spec) {
    spec.validate();
    // Fixed per-lead projection of the synthetic dipole; aVR inverted.
    static const std::array<double, 12> lead_scale = {
        0.7, 1.0, 0.5, -0.8, 0.3, 0.75, 0.4, 0.6, 0.9, 1.0, 0.85, 0.7};

    double fs = spec.sample_rate_hz;
    std::size_t len = static_cast<std::size_t>(std::llround(spec.duration_s * fs));
    double period = 60.0 / spec.heart_rate_bpm;
    double interval = std::min(period, 0.8);
    double p_offset = -0.22 * interval;
    double t_offset = 0.30 * interval;
    double sigma_p = 0.017;                          // ~40 ms wave
    double sigma_qrs = spec.qrs_width_ms / 1000.0 / 5.0;
    double sigma_t = 0.05;                           // ~120 ms wave
    auto centers = spec.beat_centers();

    std::vector<double> base(len, 0.0);
    for (double c : centers) {
        // only a +-0.6 s neighborhood of each beat contributes
        std::size_t i0 = static_cast<std::size_t>(std::max(0.0, (c - 0.6) * fs));
        std::size_t i1 = std::min(len, static_cast<std::size_t>(std::max(0.0, (c + 0.6) * fs)));
        for (std::size_t i = i0; i < i1; ++i) {
            double t = static_cast<double>(i) / fs;
            double dp = t - (c + p_offset);
            double dq = t - c;
            double dt = t - (c + t_offset);
            double v = spec.p_amp_mv * std::exp(-0.5 * dp * dp / (sigma_p * sigma_p)) +
                       spec.qrs_amp_mv * std::exp(-0.5 * dq * dq / (sigma_qrs * sigma_qrs)) +
                       spec.t_amp_mv * std::exp(-0.5 * dt * dt / (sigma_t * sigma_t));
            if (t >= c + 0.04 && t <= c + 0.12) v += spec.st_offset_mv;
            base[i] += v;
        }
    }

    Rng rng(spec.seed);
    RawSignal sig;
    sig.sample_rate_hz = fs;
    sig.leads = Tensor({12, len});
    for (std::size_t lead = 0; lead < 12; ++lead)
        for (std::size_t i = 0; i < len; ++i) {
            double n = spec.noise_std_mv > 0.0 ? rng.normal(0.0, spec.noise_std_mv) : 0.0;
            sig.leads.at(lead, i) = lead_scale[lead] * base[i] + n;
        }
    sig.validate();
    return sig;
}

std::vector<SynthSpec> synth_corpus_specs(std::size_t count, double duration_s,
                                          double noise_std_mv, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SynthSpec> specs;
    specs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        SynthSpec s;
        s.duration_s = duration_s;
        s.noise_std_mv = noise_std_mv;
        s.seed = rng.next_u64();
        s.p_amp_mv = rng.uniform(0.10, 0.20);
        s.qrs_amp_mv = rng.uniform(0.9, 1.5);
        s.t_amp_mv = rng.uniform(0.2, 0.4);
        switch (i % 6) {
            case 0:  // bradycardia
                s.heart_rate_bpm = rng.uniform(40.0, 55.0);
                break;
            case 1:  // normal sinus
                s.heart_rate_bpm = rng.uniform(65.0, 95.0);
                break;
            case 2:  // tachycardia
                s.heart_rate_bpm = rng.uniform(105.0, 140.0);
                break;
            case 3:  // wide QRS
                s.heart_rate_bpm = rng.uniform(65.0, 95.0);
                s.qrs_width_ms = rng.uniform(130.0, 160.0);
                break;
            case 4:  // ST shift
                s.heart_rate_bpm = rng.uniform(65.0, 95.0);
                s.st_offset_mv = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.15, 0.3);
                break;
            case 5:  // tachy + ST shift (multi-label)
                s.heart_rate_bpm = rng.uniform(105.0, 140.0);
                s.st_offset_mv = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.15, 0.3);
                break;
        }
        specs.push_back(s);
    }
    return specs;
}

void write_synth_corpus(const std::string& out_dir, const std::vector<SynthSpec>& specs) {
    fs::create_directories(fs::path(out_dir) / "signals");
    std::ofstream labels(fs::path(out_dir) / "labels.csv");
    if (!labels) throw InputError("cannot write labels.csv in " + out_dir);
    labels << "id,codes\n";
    for (std::size_t i = 0; i < specs.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "synth%05zu", i);
        RawSignal sig = synth_ecg(specs[i]);
        write_signal_csv((fs::path(out_dir) / "signals" / (std::string(id) + ".csv")).string(),
                         sig.leads);
        auto codes = specs[i].codes();
        labels << id << ",";
        for (std::size_t c = 0; c < codes.size(); ++c)
            labels << codes[c] << (c + 1 < codes.size() ? ";" : "");
        labels << "\n";
    }
    LabelMap::builtin().save((fs::path(out_dir) / "labelmap.csv").string());
}

namespace {

std::string pattern_key(const EcgRecord& r) {
    std::string k(kNumClasses, '0');
    for (std::size_t i = 0; i < kNumClasses; ++i)
        if (r.labels[i]) k[i] = '1';
    return k;
}

} // namespace

Splits make_splits(const std::vector<EcgRecord>& records, const SplitPlan& plan) {
    std::size_t n = records.size();
    if (plan.n_folds < 2) throw ConfigError("need at least 2 folds");
    if (n < 10 * plan.n_folds)
        throw ConfigError("too few records for splitting: " + std::to_string(n));

    Rng rng(plan.seed);

    // Group by exact multi-hot pattern; patterns too small to stratify are
    // pooled together.
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[pattern_key(records[i])].push_back(i);

    std::vector<std::vector<std::size_t>> strata;
    std::vector<std::size_t> pooled;
    for (auto& [key, idx] : groups) {
        if (idx.size() >= plan.n_folds)
            strata.push_back(std::move(idx));
        else
            pooled.insert(pooled.end(), idx.begin(), idx.end());
    }
    if (!pooled.empty()) strata.push_back(std::move(pooled));
    for (auto& s : strata) rng.shuffle(s);

    // Per-stratum test quota by largest remainder, hitting the global target.
    std::size_t target_test = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * plan.test_fraction + 1e-9));
    std::vector<std::size_t> quota(strata.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < strata.size(); ++g) {
        double exact = static_cast<double>(strata[g].size()) * plan.test_fraction;
        quota[g] = static_cast<std::size_t>(std::floor(exact));
        assigned += quota[g];
        remainders.emplace_back(exact - std::floor(exact), g);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t k = 0; assigned < target_test && k < remainders.size(); ++k) {
        std::size_t g = remainders[k].second;
        if (quota[g] < strata[g].size()) {
            ++quota[g];
            ++assigned;
        }
    }

    Splits out;
    out.folds.resize(plan.n_folds);
    std::vector<std::vector<std::size_t>> fold_val(plan.n_folds);
    for (std::size_t g = 0; g < strata.size(); ++g) {
        const auto& s = strata[g];
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i < quota[g])
                out.test.push_back(s[i]);
            else
                fold_val[(i - quota[g]) % plan.n_folds].push_back(s[i]);
        }
    }
    for (std::size_t f = 0; f < plan.n_folds; ++f) {
        std::sort(fold_val[f].begin(), fold_val[f].end());
        out.folds[f].val = fold_val[f];
        for (std::size_t g = 0; g < plan.n_folds; ++g)
            if (g != f)
                out.folds[f].train.insert(out.folds[f].train.end(), fold_val[g].begin(),
                                          fold_val[g].end());
        std::sort(out.folds[f].train.begin(), out.folds[f].train.end());
    }
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::array<double, kNumClasses> class_prevalence(const std::vector<EcgRecord>& records) {
    if (records.empty()) throw InputError("class_prevalence on empty record set");
    std::array<double, kNumClasses> prev{};
    for (const auto& r : records)
        for (std::size_t c = 0; c < kNumClasses; ++c)
            if (r.labels[c]) prev[c] += 1.0;
    for (auto& p : prev) p /= static_cast<double>(records.size());
    return prev;
}

} // namespace cpf
