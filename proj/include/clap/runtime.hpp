// Process-level setup shared by the executables.
#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace clap {

// Keeps large activation buffers on the heap between batches instead of
// returning them to the system and faulting the pages in again.
inline void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace clap
