#pragma once

#include <cstddef>
#include <functional>

namespace cpf {

// Worker count: min(hardware_concurrency, CPF_THREADS if set). Always >= 1.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Fans out across worker_count() threads when it
// helps; fn must be safe to call concurrently for distinct i. Exceptions from
// workers are rethrown on the calling thread (first one wins). Results must
// not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace cpf
