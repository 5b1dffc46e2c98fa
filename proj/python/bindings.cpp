#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cpf/data.hpp"
#include "cpf/errors.hpp"
#include "cpf/eval.hpp"
#include "cpf/model.hpp"
#include "cpf/preprocess.hpp"
#include "cpf/selftest.hpp"
#include "cpf/train.hpp"

namespace py = pybind11;
using namespace cpf;

namespace {

Tensor tensor_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::size_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<std::size_t>(a.shape(i));
    Tensor t(shape);
    std::copy(a.data(), a.data() + a.size(), t.data.begin());
    return t;
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> a(shape);
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

LeadMask mask_from(const std::optional<std::vector<int>>& leads) {
    return leads ? LeadMask::of(*leads) : LeadMask();
}

ModelConfig config_for(const std::string& profile) {
    if (profile == "desk") return ModelConfig::desk();
    if (profile == "paper") return ModelConfig::paper();
    throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
}

// Inference-oriented handle around a parameter set.
struct PyModel {
    ModelConfig cfg;
    ModelParams params;
    std::array<double, kNumClasses> thresholds{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};

    PyModel(const std::string& profile, std::uint64_t seed) : cfg(config_for(profile)) {
        Rng rng(seed);
        params = init_model(cfg, rng);
    }
    explicit PyModel(const Checkpoint& ck)
        : cfg(ck.model_cfg), params(ck.params), thresholds(ck.thresholds) {}

    py::array_t<double> predict_proba(const py::array_t<double>& signal) const {
        ModelOutput o = model_forward(tensor_from(signal), params, cfg);
        Tensor probs({1, kNumClasses});
        for (std::size_t c = 0; c < kNumClasses; ++c)
            probs[c] = 1.0 / (1.0 + std::exp(-o.logits->value[c]));
        return array_from(probs);
    }

    py::dict explain(const py::array_t<double>& signal) const {
        ForwardOptions opt;
        opt.return_weights = true;
        ModelOutput o = model_forward(tensor_from(signal), params, cfg, opt);
        py::dict d;
        d["maps"] = array_from(o.maps->value);
        d["relevance"] = array_from(o.relevance->value);
        d["uncertainty"] = array_from(o.uncertainty->value);
        d["avg_attention"] = py::cast(average_attention(o.attention));
        return d;
    }
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "CardioPatternFormer core: preprocessing, synthesis, model, metrics";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<InputError>(m, "InputError");

    m.attr("CLASS_NAMES") = py::cast(std::vector<std::string>(
        kClassNames.begin(), kClassNames.end()));
    m.attr("LEAD_NAMES") =
        py::cast(std::vector<std::string>(kLeadNames.begin(), kLeadNames.end()));

    m.def(
        "preprocess",
        [](const py::array_t<double>& raw, double from_hz, double to_hz,
           const std::optional<std::vector<int>>& leads) {
            return array_from(
                preprocess_pipeline(tensor_from(raw), from_hz, to_hz, mask_from(leads)));
        },
        py::arg("raw"), py::arg("from_hz") = 500.0, py::arg("to_hz") = 100.0,
        py::arg("leads") = py::none(),
        "Bandpass filter, resample, per-lead normalize and mask a [12 x L] signal.");

    m.def(
        "synth_ecg",
        [](double heart_rate_bpm, double st_offset_mv, double qrs_width_ms,
           double noise_std_mv, double duration_s, std::uint64_t seed) {
            SynthSpec spec;
            spec.heart_rate_bpm = heart_rate_bpm;
            spec.st_offset_mv = st_offset_mv;
            spec.qrs_width_ms = qrs_width_ms;
            spec.noise_std_mv = noise_std_mv;
            spec.duration_s = duration_s;
            spec.seed = seed;
            RawSignal sig = synth_ecg(spec);
            auto l = spec.labels();
            py::dict d;
            d["signal"] = array_from(sig.leads);
            d["sample_rate_hz"] = sig.sample_rate_hz;
            d["labels"] = py::cast(std::vector<bool>(l.begin(), l.end()));
            d["beat_centers"] = py::cast(spec.beat_centers());
            return d;
        },
        py::arg("heart_rate_bpm") = 75.0, py::arg("st_offset_mv") = 0.0,
        py::arg("qrs_width_ms") = 80.0, py::arg("noise_std_mv") = 0.0,
        py::arg("duration_s") = 10.0, py::arg("seed") = 0,
        "Generate a parametric 12-lead ECG with archetype labels.");

    m.def(
        "compute_metrics",
        [](const py::array_t<double>& probs, const py::array_t<double>& targets,
           const std::optional<std::vector<double>>& thresholds) {
            std::array<double, kNumClasses> thr;
            thr.fill(0.5);
            if (thresholds) {
                if (thresholds->size() != kNumClasses)
                    throw InputError("thresholds must have 6 entries");
                std::copy(thresholds->begin(), thresholds->end(), thr.begin());
            }
            MetricsReport r = compute_metrics(tensor_from(probs), tensor_from(targets), thr);
            py::module_ json = py::module_::import("json");
            return json.attr("loads")(r.to_json());
        },
        py::arg("probs"), py::arg("targets"), py::arg("thresholds") = py::none(),
        "Multi-label metrics (Hamming, per-class P/R/F1/AUC, macros) as a dict.");

    m.def("selftest", [] {
        std::ostringstream out;
        int failures = run_selftest(out);
        py::print(out.str());
        return failures;
    });

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&, std::uint64_t>(), py::arg("profile") = "desk",
             py::arg("seed") = 0)
        .def_static(
            "load",
            [](const std::string& dir) { return PyModel(load_checkpoint(dir)); },
            py::arg("checkpoint_dir"))
        .def_property_readonly("thresholds",
                               [](const PyModel& s) {
                                   return std::vector<double>(s.thresholds.begin(),
                                                              s.thresholds.end());
                               })
        .def_property_readonly("d_model", [](const PyModel& s) { return s.cfg.d_model; })
        .def_property_readonly("max_seq_len",
                               [](const PyModel& s) { return s.cfg.max_seq_len; })
        .def("predict_proba", &PyModel::predict_proba, py::arg("signal"),
             "Fused class probabilities for a preprocessed [12 x L] signal.")
        .def("explain", &PyModel::explain, py::arg("signal"),
             "Explanation maps, relevance, uncertainty and average attention.");
}
