use std::fmt::Debug;

use num_traits::Float;

/// Scalar type a streaming kernel carries its running state in.
pub trait Real: Float + Debug + Send + Sync + 'static {
    /// Stand-in for `-inf` as the initial running maximum.
    const NEG_SENTINEL: Self;

    fn of(x: f64) -> Self;
    fn wide(self) -> f64;
}

impl Real for f64 {
    const NEG_SENTINEL: Self = f64::MIN;

    fn of(x: f64) -> Self {
        x
    }

    fn wide(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const NEG_SENTINEL: Self = f32::MIN;

    fn of(x: f64) -> Self {
        x as f32
    }

    fn wide(self) -> f64 {
        self as f64
    }
}

/// Rescale factor `exp(m_old - m)` for an online-softmax step. The first
/// step (running max still at the sentinel) contributes nothing to rescale.
#[inline]
pub(crate) fn rescale<T: Real>(m_old: T, m: T) -> T {
    if m_old == T::NEG_SENTINEL {
        T::zero()
    } else {
        (m_old - m).exp()
    }
}
