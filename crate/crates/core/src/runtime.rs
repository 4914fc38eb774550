//! Process-level tuning for the training loop.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Keep large activation buffers on the heap between iterations instead of
/// letting glibc unmap and re-fault them on every allocation.
pub fn tune_allocator() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TOP_PAD, 64 << 20);
        }
    });
}
