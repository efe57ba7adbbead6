//! Pulse envelope with Blackman switch-on and switch-off.
//!
//! Each ramp is the rising half of a Blackman window
//! `w(x) = 0.42 − 0.5 cos 2πx + 0.08 cos 4πx`, `x ∈ [0, 1/2]`, stretched
//! over `ramp_time`. The ramps sit so that the half-maximum points are
//! exactly `t_g` apart, making `t_g` the full width at half maximum.

use std::f64::consts::TAU;
use std::sync::OnceLock;

use crate::{Error, Result};

fn blackman(x: f64) -> f64 {
    0.42 - 0.5 * (TAU * x).cos() + 0.08 * (2.0 * TAU * x).cos()
}

/// Window coordinate `x_h ∈ (0, 1/2)` where the half-window reaches 0.5.
pub fn blackman_half_max() -> f64 {
    static XH: OnceLock<f64> = OnceLock::new();
    *XH.get_or_init(|| {
        let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if blackman(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    pub gate_time: f64,
    pub ramp_time: f64,
}

impl PulseShape {
    pub fn new(gate_time: f64, ramp_time: f64) -> Self {
        Self {
            gate_time,
            ramp_time,
        }
    }

    /// Offset of the half-maximum point from the pulse start.
    fn half_max_offset(&self) -> f64 {
        2.0 * self.ramp_time * blackman_half_max()
    }

    /// Total pulse duration, ramps included.
    pub fn duration(&self) -> f64 {
        self.gate_time + 2.0 * self.half_max_offset()
    }

    /// Length of the flat top.
    pub fn plateau(&self) -> f64 {
        self.duration() - 2.0 * self.ramp_time
    }

    /// Envelope value without range checking; zero outside the pulse.
    pub fn value(&self, t: f64) -> f64 {
        let total = self.duration();
        if t < 0.0 || t > total {
            return 0.0;
        }
        if self.ramp_time == 0.0 {
            return 1.0;
        }
        let r = self.ramp_time;
        if t < r {
            blackman(t / (2.0 * r))
        } else if t > total - r {
            blackman((total - t) / (2.0 * r))
        } else {
            1.0
        }
    }
}

/// Envelope scale in `[0, 1]` at time `t` into a single gate pulse.
pub fn pulse_envelope(t: f64, cfg: &crate::physics::ModelConfig) -> Result<f64> {
    let shape = cfg.pulse();
    let total = shape.duration();
    if !(0.0..=total).contains(&t) {
        return Err(Error::OutOfPulseWindow { t, duration: total });
    }
    Ok(shape.value(t))
}
