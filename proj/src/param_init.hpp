#pragma once

#include <cmath>

#include "cpf/autodiff.hpp"
#include "cpf/rng.hpp"
#include "cpf/tensor.hpp"

namespace cpf::detail {

// Kaiming fan-in scaled normal.
inline ad::Var kaiming(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = rng.normal(0.0, sd);
    return ad::param(std::move(t));
}

inline ad::Var normal_init(std::vector<std::size_t> shape, double sd, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, sd);
    return ad::param(std::move(t));
}

inline ad::Var fill_init(std::vector<std::size_t> shape, double value) {
    return ad::param(Tensor(std::move(shape), value));
}

} // namespace cpf::detail
