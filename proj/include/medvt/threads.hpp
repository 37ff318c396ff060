#pragma once

#include <cstdint>
#include <functional>

namespace medvt {

// Global cap on worker threads (CLI --threads). Default: logical cores.
void set_threads(int n);
int get_threads();

// Runs fn(i) for i in [0,n). Work items must have unique writers (or be
// independent), which keeps outputs bit-identical for any thread count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace medvt
