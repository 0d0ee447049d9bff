#pragma once

namespace sara {

/// Keeps large freed blocks on the heap instead of returning them to the OS.
/// Training allocates the same multi-megabyte patch matrices every pass, and
/// without this each allocation pays fresh page faults. Idempotent.
void configure_allocator();

}  // namespace sara
