#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "cpf/tensor.hpp"

namespace cpf {

struct FilterSpec {
    int order = 4;          // prototype order; the bandpass transform doubles it
    double low_hz = 0.5;
    double high_hz = 45.0;
    double sample_rate_hz = 500.0;

    void validate() const;
};

// One second-order section, direct form II transposed.
struct Biquad {
    double b0, b1, b2;
    double a1, a2;          // denominator, a0 normalized to 1
};

struct SosFilter {
    std::vector<Biquad> sections;

    // |H(e^{j 2 pi f / fs})|
    double gain_at(double freq_hz, double sample_rate_hz) const;
    int order() const { return static_cast<int>(sections.size()) * 2; }
};

// Bilinear-transform Butterworth bandpass with frequency pre-warping.
SosFilter design_butterworth_bandpass(const FilterSpec& spec);

// Forward-backward (zero phase) filtering per lead with reflective edge
// padding of 3 x filter order. x: [C x L] -> [C x L].
Tensor filtfilt(const SosFilter& filter, const Tensor& x);

// Plain decimation; the bandpass above already anti-aliases. [C x L] ->
// [C x floor(L * to / from)].
Tensor resample(const Tensor& x, double from_hz, double to_hz);

// Per-lead standardization with population std; leads with std < 1e-8 map to
// all zeros (disconnected-lead rule).
Tensor normalize_per_lead(const Tensor& x);

struct LeadMask {
    std::array<bool, 12> included;

    LeadMask();                                    // all leads
    static LeadMask none();
    static LeadMask of(const std::vector<int>& lead_indices);
    std::size_t count() const;
    void validate() const;
};

extern const std::array<const char*, 12> kLeadNames;
int lead_index(const std::string& name);           // -1 if unknown

// Zeroes excluded channels exactly; applied after normalization.
Tensor apply_lead_mask(const Tensor& x, const LeadMask& mask);

// filter -> resample -> normalize -> mask; the order is load-bearing.
Tensor preprocess_pipeline(const Tensor& raw, double from_hz, double to_hz,
                           const LeadMask& mask);

} // namespace cpf
