#pragma once

namespace cmirror {

/// Upper bound on internal parallelism. Results never depend on it: every parallel
/// loop writes per-index slots that are reduced in a fixed order.
void set_thread_count(int threads);
int thread_count();

} // namespace cmirror
