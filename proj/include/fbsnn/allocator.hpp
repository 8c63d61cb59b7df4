// SPDX-License-Identifier: Apache-2.0
#pragma once

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace fbsnn {

/// Serves large temporaries from the heap instead of fresh mmap pages.
/// Training allocates the same Jacobian-sized blocks at every step, and
/// returning them to the kernel each time costs about a third of the runtime.
inline void keep_large_blocks_on_heap() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace fbsnn
