//! Deliberate backward corruption for exercising the gradient checker.
//! Only switchable when built with the `fault-injection` feature.

#[cfg(feature = "fault-injection")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "fault-injection")]
static RELU_BACKWARD: AtomicBool = AtomicBool::new(false);

pub const AVAILABLE: bool = cfg!(feature = "fault-injection");

/// Halves every ReLU input gradient while enabled. Returns whether the
/// switch exists in this build; without the feature this does nothing.
pub fn set_relu_backward_fault(enabled: bool) -> bool {
    #[cfg(feature = "fault-injection")]
    {
        RELU_BACKWARD.store(enabled, Ordering::SeqCst);
        true
    }
    #[cfg(not(feature = "fault-injection"))]
    {
        let _ = enabled;
        false
    }
}

#[inline]
pub(crate) fn relu_backward_corrupted() -> bool {
    #[cfg(feature = "fault-injection")]
    {
        RELU_BACKWARD.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "fault-injection"))]
    {
        false
    }
}
