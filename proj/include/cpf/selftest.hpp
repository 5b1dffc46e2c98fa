#pragma once

#include <cstdint>
#include <ostream>

#include "cpf/autodiff.hpp"
#include "cpf/model_config.hpp"

namespace cpf {

// Smallest config that exercises every code path; used by the gradient suite.
ModelConfig micro_config();

// Finite-difference check of d(total_loss)/d(theta) for every parameter of a
// micro-config model on a small batch.
ad::GradCheckReport model_grad_check(std::size_t batch = 2, std::uint64_t seed = 1);

// Runs the invariant battery, one line per check. Returns the failure count.
int run_selftest(std::ostream& out);

} // namespace cpf
