#pragma once

namespace subprune {

/// Worker count for OpenMP regions. Initialized from SUBPRUNE_THREADS when set
/// (clamped to the hardware count), otherwise the OpenMP default.
int thread_count();
void set_thread_count(int n);

}  // namespace subprune
