use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;

/// Default maximum range in metres.
pub const DEFAULT_X_MAX: f64 = 80.0;

/// `log(x + 1) / log(x_max + 1)`, clamping `x` into `[0, x_max]`.
pub fn encode_log(x: f64, x_max: f64) -> f64 {
    (x.clamp(0.0, x_max) + 1.0).ln() / (x_max + 1.0).ln()
}

/// Inverse of [`encode_log`], clamping the code into `[0, 1]`.
pub fn decode_log(y: f64, x_max: f64) -> f64 {
    ((y.clamp(0.0, 1.0) * (x_max + 1.0).ln()).exp() - 1.0).clamp(0.0, x_max)
}

/// Log-range codec that counts how many inputs had to be clamped.
#[derive(Debug)]
pub struct LogCodec {
    x_max: f64,
    clamped: AtomicUsize,
}

impl Clone for LogCodec {
    fn clone(&self) -> Self {
        Self {
            x_max: self.x_max,
            clamped: AtomicUsize::new(self.clamped()),
        }
    }
}

impl Default for LogCodec {
    fn default() -> Self {
        Self::new(DEFAULT_X_MAX)
    }
}

impl LogCodec {
    pub fn new(x_max: f64) -> Self {
        assert!(
            x_max > 0.0 && x_max.is_finite(),
            "x_max must be positive, got {x_max}"
        );
        Self {
            x_max,
            clamped: AtomicUsize::new(0),
        }
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Number of out-of-range inputs seen so far.
    pub fn clamped(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    fn note(&self, what: &str, v: f64) {
        if self.clamped.fetch_add(1, Ordering::Relaxed) == 0 {
            warn!("{what} {v} out of range; clamping (further clamps are only counted)");
        }
    }

    pub fn encode(&self, x: f64) -> f64 {
        if !(0.0..=self.x_max).contains(&x) {
            self.note("range", x);
        }
        encode_log(x, self.x_max)
    }

    pub fn decode(&self, y: f64) -> f64 {
        if !(0.0..=1.0).contains(&y) {
            self.note("log-range code", y);
        }
        decode_log(y, self.x_max)
    }
}
