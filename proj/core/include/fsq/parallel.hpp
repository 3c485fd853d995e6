#pragma once

#include <cstddef>
#include <functional>

namespace fsq {

/// Worker count used by parallel_for. 1 means strictly sequential execution.
/// Defaults to the hardware concurrency.
void set_num_threads(unsigned n);
unsigned num_threads();

/// Runs body(i) for every i in [0, n), partitioned into contiguous chunks
/// across worker threads. Callers must only parallelize loops whose
/// iterations write disjoint outputs, which keeps results bit-identical
/// to the sequential order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace fsq
