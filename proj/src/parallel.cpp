#include "subprune/parallel.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <string>

namespace subprune {
namespace {

int initial_thread_count() {
  int n = omp_get_max_threads();
  if (const char* env = std::getenv("SUBPRUNE_THREADS")) {
    try {
      const int requested = std::stoi(env);
      if (requested > 0) n = std::min(requested, std::max(1, omp_get_num_procs()));
    } catch (const std::exception&) {
      // unparsable value: keep the OpenMP default
    }
  }
  return std::max(1, n);
}

int& thread_count_slot() {
  static int count = initial_thread_count();
  return count;
}

}  // namespace

int thread_count() { return thread_count_slot(); }

void set_thread_count(int n) { thread_count_slot() = std::max(1, n); }

}  // namespace subprune
