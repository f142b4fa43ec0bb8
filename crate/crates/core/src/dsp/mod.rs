//! Band-pass filtering, Welch spectra and squeezing metrics.

mod filter;
mod spectrum;

pub use filter::{bandpass_filter, bandpass_kernel, lowpass_kernel};
pub use spectrum::{
    band_average_squeezing, estimate_psd, inband_power_ratio, intensity_difference_spectrum,
    squeezing_recovery_fraction, RecoveryFraction, Spectrum, SpectrumScale, WelchParams,
    WindowKind,
};

use crate::error::{Error, Result};

/// Analysis band. Both edges are inclusive when selecting spectral bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
}

impl BandSpec {
    pub fn new(f_lo_hz: f64, f_hi_hz: f64) -> Result<Self> {
        let band = Self { f_lo_hz, f_hi_hz };
        if !(f_lo_hz.is_finite() && f_hi_hz.is_finite() && 0.0 < f_lo_hz && f_lo_hz < f_hi_hz) {
            return Err(Error::invalid(
                "band",
                format!("need 0 < f_lo < f_hi, got {f_lo_hz}..{f_hi_hz}"),
            ));
        }
        Ok(band)
    }

    pub fn check_rate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(0.0 < self.f_lo_hz && self.f_lo_hz < self.f_hi_hz && self.f_hi_hz < sample_rate_hz / 2.0)
        {
            return Err(Error::invalid(
                "band",
                format!(
                    "{}..{} Hz is not inside (0, {}) Hz",
                    self.f_lo_hz,
                    self.f_hi_hz,
                    sample_rate_hz / 2.0
                ),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, f_hz: f64) -> bool {
        self.f_lo_hz <= f_hz && f_hz <= self.f_hi_hz
    }

    pub fn width_hz(&self) -> f64 {
        self.f_hi_hz - self.f_lo_hz
    }
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            f_lo_hz: 1.5e6,
            f_hi_hz: 3.5e6,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_validation() {
        assert!(BandSpec::new(3.0, 2.0).is_err());
        assert!(BandSpec::new(0.0, 2.0).is_err());
        let b = BandSpec::default();
        assert!(b.check_rate(2e9).is_ok());
        assert!(b.check_rate(6e6).is_err());
        assert!(b.contains(1.5e6) && b.contains(3.5e6) && !b.contains(3.6e6));
    }
}
