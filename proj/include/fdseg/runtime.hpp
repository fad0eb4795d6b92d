#pragma once

namespace fdseg {

/// Keeps large freed blocks inside the allocator instead of returning them to
/// the OS. Training allocates and frees multi-megabyte activations every step;
/// without this each allocation pays for fresh zeroed pages. No-op outside glibc.
void tune_allocator();

}  // namespace fdseg
