#pragma once

#include <cstdint>
#include <functional>

namespace oseg {

// Global worker count used by parallel_for. 0 resets to the hardware default.
void set_threads(int n);
int thread_count();

// Runs body(i) for i in [begin, end) on the shared pool. Work is split by
// task index, not by thread, so results never depend on the thread count:
// each index writes only its own outputs and any reduction over per-index
// partials is the caller's job, folded in index order.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& body);

} // namespace oseg
