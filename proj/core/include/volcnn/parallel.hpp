#pragma once

#include <cstddef>
#include <functional>

namespace volcnn {

/// Global cap on worker threads (the CLI's --threads). 1 means fully serial.
void set_num_threads(int n);
int num_threads();

/// Runs body(i) for i in [0, n) on up to num_threads() workers. Every index is
/// processed exactly once; callers keep results independent of scheduling by
/// writing to per-index outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace volcnn
