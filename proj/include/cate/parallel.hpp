#pragma once

#include <cstddef>
#include <functional>

namespace cate {

//! Number of worker threads used by parallel_for. Defaults to 1.
int num_threads();
void set_num_threads(int n);

//! Calls body(i) for i in [0, n). Each index is processed exactly once; the
//! caller reduces per-index results in index order, so output never depends
//! on the thread count. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace cate
