//! Average Cramer-Rao bounds on range and velocity estimation.
//!
//! These are average bounds, not strict lower bounds, so a simulated RMSE may
//! dip below them.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::frame::GridConfig;
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbInputs {
    /// Noise power per delay-Doppler sample.
    pub n0: f64,
    /// Average transmit power per sample.
    pub p_avg: f64,
    /// Squared magnitude of the target path gain.
    pub gain2: f64,
    pub grid: GridConfig,
}

impl CrbInputs {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("N0", self.n0), ("P_avg", self.p_avg), ("gain2", self.gain2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.grid.m < 2 || self.grid.n < 2 {
            return Err(Error::Domain(format!(
                "bounds need M, N >= 2, got M={} N={}",
                self.grid.m, self.grid.n
            )));
        }
        Ok(())
    }

    fn snr_term(&self) -> f64 {
        self.n0 / (self.p_avg * self.gain2 * PI * PI * (self.grid.m * self.grid.n) as f64)
    }
}

/// Range bound in meters.
pub fn crb_range(inputs: &CrbInputs) -> Result<f64> {
    inputs.validate()?;
    let m1 = (inputs.grid.m - 1) as f64;
    Ok((inputs.snr_term() / (m1 * m1)).sqrt() * SPEED_OF_LIGHT / (2.0 * inputs.grid.delta_f))
}

/// Velocity bound in m/s.
pub fn crb_velocity(inputs: &CrbInputs) -> Result<f64> {
    inputs.validate()?;
    let n1 = (inputs.grid.n - 1) as f64;
    Ok((inputs.snr_term() / (n1 * n1)).sqrt() * SPEED_OF_LIGHT * inputs.grid.delta_f / (2.0 * inputs.grid.carrier))
}
