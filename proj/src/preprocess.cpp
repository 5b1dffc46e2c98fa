#include "cpf/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "cpf/errors.hpp"

namespace cpf {

namespace {
constexpr double kPi = 3.14159265358979323846;
using cplx = std::complex<double>;
} // namespace

void FilterSpec::validate() const {
    if (order < 1) throw ConfigError("filter order must be >= 1");
    if (!(low_hz > 0.0 && low_hz < high_hz))
        throw ConfigError("filter band must satisfy 0 < low < high");
    if (high_hz >= sample_rate_hz / 2.0)
        throw ConfigError("high cutoff must be below Nyquist");
}

double SosFilter::gain_at(double freq_hz, double sample_rate_hz) const {
    double w = 2.0 * kPi * freq_hz / sample_rate_hz;
    cplx z = std::polar(1.0, w);
    cplx zinv = 1.0 / z;
    cplx h(1.0, 0.0);
    for (const auto& s : sections) {
        cplx num = s.b0 + s.b1 * zinv + s.b2 * zinv * zinv;
        cplx den = 1.0 + s.a1 * zinv + s.a2 * zinv * zinv;
        h *= num / den;
    }
    return std::abs(h);
}

SosFilter design_butterworth_bandpass(const FilterSpec& spec) {
    spec.validate();
    const int n = spec.order;
    const double fs = spec.sample_rate_hz;
    const double fs2 = 2.0 * fs;

    // Pre-warped analog band edges (rad/s).
    const double wl = fs2 * std::tan(kPi * spec.low_hz / fs);
    const double wh = fs2 * std::tan(kPi * spec.high_hz / fs);
    const double bw = wh - wl;
    const double w0 = std::sqrt(wl * wh);

    // Analog prototype poles on the unit circle (left half plane), then
    // lowpass-to-bandpass: each pole splits into two.
    std::vector<cplx> analog_poles;
    for (int k = 1; k <= n; ++k) {
        double theta = kPi * (2.0 * k + n - 1.0) / (2.0 * n);
        cplx p = std::polar(1.0, theta);
        cplx a = p * (bw / 2.0);
        cplx r = std::sqrt(a * a - cplx(w0 * w0, 0.0));
        analog_poles.push_back(a + r);
        analog_poles.push_back(a - r);
    }

    // Bilinear transform. Analog zeros: n at s=0 (map to z=1); n implicit
    // zeros at infinity map to z=-1. Gain matched analytically.
    double k_analog = std::pow(bw, n);
    cplx den_prod(1.0, 0.0);
    for (const auto& p : analog_poles) den_prod *= (fs2 - p);
    double k_digital = k_analog * std::pow(fs2, n) / den_prod.real();

    std::vector<cplx> digital_poles;
    digital_poles.reserve(analog_poles.size());
    for (const auto& p : analog_poles) digital_poles.push_back((fs2 + p) / (fs2 - p));

    // Pair poles into real second-order sections: complex poles with their
    // conjugates, leftover real poles with each other.
    std::vector<cplx> upper;
    std::vector<double> reals;
    for (const auto& p : digital_poles) {
        if (std::fabs(p.imag()) < 1e-12)
            reals.push_back(p.real());
        else if (p.imag() > 0.0)
            upper.push_back(p);
    }
    std::sort(upper.begin(), upper.end(),
              [](const cplx& a, const cplx& b) { return std::norm(a) < std::norm(b); });
    std::sort(reals.begin(), reals.end());

    SosFilter filter;
    for (const auto& p : upper) {
        Biquad s{1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)};
        filter.sections.push_back(s);
    }
    for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
        Biquad s{1.0, 0.0, -1.0, -(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]};
        filter.sections.push_back(s);
    }
    if (filter.sections.size() != static_cast<std::size_t>(n))
        throw NumericError("butterworth design produced unexpected section count");

    filter.sections[0].b0 *= k_digital;
    filter.sections[0].b1 *= k_digital;
    filter.sections[0].b2 *= k_digital;
    return filter;
}

namespace {

// Steady-state initial conditions per section for a unit-amplitude step,
// cascaded (each section sees the previous section's DC gain).
std::vector<std::array<double, 2>> sos_step_zi(const SosFilter& f) {
    std::vector<std::array<double, 2>> zi(f.sections.size());
    double scale = 1.0;
    for (std::size_t k = 0; k < f.sections.size(); ++k) {
        const Biquad& s = f.sections[k];
        double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        zi[k] = {scale * (g - s.b0), scale * (s.b2 - s.a2 * g)};
        scale *= g;
    }
    return zi;
}

void sosfilt_inplace(const SosFilter& f, std::vector<double>& x,
                     const std::vector<std::array<double, 2>>& zi_unit, double x0) {
    auto zi = zi_unit;
    for (auto& z : zi) {
        z[0] *= x0;
        z[1] *= x0;
    }
    for (std::size_t k = 0; k < f.sections.size(); ++k) {
        const Biquad& s = f.sections[k];
        double z1 = zi[k][0], z2 = zi[k][1];
        for (double& v : x) {
            double y = s.b0 * v + z1;
            z1 = s.b1 * v - s.a1 * y + z2;
            z2 = s.b2 * v - s.a2 * y;
            v = y;
        }
    }
}

} // namespace

Tensor filtfilt(const SosFilter& filter, const Tensor& x) {
    std::size_t leads = x.rows(), len = x.cols();
    std::size_t padlen = 3 * static_cast<std::size_t>(filter.order());
    if (len <= padlen)
        throw InputError("signal too short for filtering: length " + std::to_string(len) +
                         " needs > " + std::to_string(padlen));
    auto zi = sos_step_zi(filter);

    Tensor out({leads, len});
    std::vector<double> ext;
    ext.reserve(len + 2 * padlen);
    for (std::size_t lead = 0; lead < leads; ++lead) {
        const double* sig = x.data.data() + lead * len;
        ext.clear();
        // reflective (even) edge padding
        for (std::size_t i = 0; i < padlen; ++i) ext.push_back(sig[padlen - i]);
        ext.insert(ext.end(), sig, sig + len);
        for (std::size_t i = 0; i < padlen; ++i) ext.push_back(sig[len - 2 - i]);

        sosfilt_inplace(filter, ext, zi, ext.front());
        std::reverse(ext.begin(), ext.end());
        sosfilt_inplace(filter, ext, zi, ext.front());
        std::reverse(ext.begin(), ext.end());

        std::copy(ext.begin() + padlen, ext.begin() + padlen + len,
                  out.data.data() + lead * len);
    }
    return out;
}

Tensor resample(const Tensor& x, double from_hz, double to_hz) {
    if (from_hz <= 0.0 || to_hz <= 0.0) throw ConfigError("resample: rates must be positive");
    double fi = std::round(from_hz), ti = std::round(to_hz);
    if (std::fabs(from_hz - fi) > 1e-9 || std::fabs(to_hz - ti) > 1e-9)
        throw ConfigError("resample: rates must form a rational ratio (integer Hz)");
    std::size_t leads = x.rows(), len = x.cols();
    std::size_t out_len = static_cast<std::size_t>(
        std::floor(static_cast<double>(len) * to_hz / from_hz));
    if (out_len == 0) throw InputError("resample: output would be empty");
    Tensor out({leads, out_len});
    for (std::size_t lead = 0; lead < leads; ++lead)
        for (std::size_t j = 0; j < out_len; ++j) {
            std::size_t src = static_cast<std::size_t>(
                std::floor(static_cast<double>(j) * from_hz / to_hz + 1e-9));
            out.at(lead, j) = x.at(lead, std::min(src, len - 1));
        }
    return out;
}

Tensor normalize_per_lead(const Tensor& x) {
    std::size_t leads = x.rows(), len = x.cols();
    Tensor out({leads, len});
    for (std::size_t lead = 0; lead < leads; ++lead) {
        const double* sig = x.data.data() + lead * len;
        double mean = 0.0;
        for (std::size_t i = 0; i < len; ++i) mean += sig[i];
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t i = 0; i < len; ++i) var += (sig[i] - mean) * (sig[i] - mean);
        double sd = std::sqrt(var / static_cast<double>(len));
        double* o = out.data.data() + lead * len;
        if (sd < 1e-8) {
            std::fill(o, o + len, 0.0);
        } else {
            for (std::size_t i = 0; i < len; ++i) o[i] = (sig[i] - mean) / sd;
        }
    }
    return out;
}

const std::array<const char*, 12> kLeadNames = {
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};

int lead_index(const std::string& name) {
    for (int i = 0; i < 12; ++i)
        if (name == kLeadNames[i]) return i;
    return -1;
}

LeadMask::LeadMask() { included.fill(true); }

LeadMask LeadMask::none() {
    LeadMask m;
    m.included.fill(false);
    return m;
}

LeadMask LeadMask::of(const std::vector<int>& lead_indices) {
    LeadMask m = none();
    for (int i : lead_indices) {
        if (i < 0 || i >= 12) throw InputError("lead index out of range");
        m.included[static_cast<std::size_t>(i)] = true;
    }
    m.validate();
    return m;
}

std::size_t LeadMask::count() const {
    std::size_t c = 0;
    for (bool b : included) c += b ? 1 : 0;
    return c;
}

void LeadMask::validate() const {
    if (count() == 0) throw InputError("lead mask must include at least one lead");
}

Tensor apply_lead_mask(const Tensor& x, const LeadMask& mask) {
    mask.validate();
    if (x.rows() != 12) throw DimensionError("apply_lead_mask: expected 12 leads");
    Tensor out = x;
    std::size_t len = x.cols();
    for (std::size_t lead = 0; lead < 12; ++lead)
        if (!mask.included[lead])
            std::fill(out.data.begin() + lead * len, out.data.begin() + (lead + 1) * len, 0.0);
    return out;
}

Tensor preprocess_pipeline(const Tensor& raw, double from_hz, double to_hz,
                           const LeadMask& mask) {
    FilterSpec spec;
    spec.sample_rate_hz = from_hz;
    SosFilter filter = design_butterworth_bandpass(spec);
    Tensor y = filtfilt(filter, raw);
    y = resample(y, from_hz, to_hz);
    y = normalize_per_lead(y);
    return apply_lead_mask(y, mask);
}

} // namespace cpf
