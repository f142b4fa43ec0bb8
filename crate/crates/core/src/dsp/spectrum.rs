use std::f64::consts::PI;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::BandSpec;
use crate::error::{Error, Result};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchParams {
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub window_kind: WindowKind,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self {
            segment_length: 4096,
            overlap_fraction: 0.5,
            window_kind: WindowKind::Hann,
        }
    }
}

impl WelchParams {
    pub fn validate(&self) -> Result<()> {
        if self.segment_length < 2 || !self.segment_length.is_power_of_two() {
            return Err(Error::invalid(
                "segment_length",
                format!("{} is not a power of two >= 2", self.segment_length),
            ));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::invalid(
                "overlap_fraction",
                format!("{} not in [0, 1)", self.overlap_fraction),
            ));
        }
        Ok(())
    }

    fn step(&self) -> usize {
        ((self.segment_length as f64 * (1.0 - self.overlap_fraction)).round() as usize).max(1)
    }

    fn window(&self) -> Vec<f64> {
        let n = self.segment_length;
        match self.window_kind {
            // periodic Hann
            WindowKind::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumScale {
    /// One-sided power spectral density, units²/Hz.
    LinearPsd,
    /// 10·log10 of the ratio to a shot-noise reference PSD.
    DbRelSql,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    pub power: Vec<f64>,
    pub scale: SpectrumScale,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    pub fn bin_width_hz(&self) -> f64 {
        if self.freqs_hz.len() < 2 {
            0.0
        } else {
            self.freqs_hz[1] - self.freqs_hz[0]
        }
    }

    /// Sum of power times bin width, the rectangle-rule integral.
    pub fn integral(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.bin_width_hz()
    }

    pub fn band_integral(&self, band: BandSpec) -> f64 {
        self.freqs_hz
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| band.contains(**f))
            .map(|(_, p)| p)
            .sum::<f64>()
            * self.bin_width_hz()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let col = match self.scale {
            SpectrumScale::LinearPsd => "psd",
            SpectrumScale::DbRelSql => "db_rel_sql",
        };
        writeln!(w, "freq_hz,{col}")?;
        for (f, p) in self.freqs_hz.iter().zip(&self.power) {
            writeln!(w, "{f:?},{p:?}")?;
        }
        Ok(())
    }
}

/// Welch averaged periodogram of the mean-removed trace, one-sided density.
pub fn estimate_psd(t: &Trace, w: WelchParams) -> Result<Spectrum> {
    psd_of(t.samples(), t.sample_rate_hz(), w)
}

fn psd_of(x: &[f64], fs: f64, w: WelchParams) -> Result<Spectrum> {
    w.validate()?;
    let n = w.segment_length;
    if n > x.len() {
        return Err(Error::invalid(
            "segment_length",
            format!("{n} exceeds trace length {}", x.len()),
        ));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let win = w.window();
    let win_power: f64 = win.iter().map(|v| v * v).sum();
    let step = w.step();
    let segments = (x.len() - n) / step + 1;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let half = n / 2;
    let mut acc = vec![0.0; half + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for s in 0..segments {
        let seg = &x[s * step..s * step + n];
        for ((b, &v), &wk) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex64::new((v - mean) * wk, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let norm = 1.0 / (fs * win_power * segments as f64);
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || k == half { 1.0 } else { 2.0 };
            a * norm * one_sided
        })
        .collect();
    let freqs_hz = (0..=half).map(|k| k as f64 * fs / n as f64).collect();
    Ok(Spectrum {
        freqs_hz,
        power,
        scale: SpectrumScale::LinearPsd,
    })
}

fn check_aligned(traces: &[&Trace]) -> Result<()> {
    let first = traces[0];
    for t in &traces[1..] {
        if t.len() != first.len() || t.sample_rate_hz() != first.sample_rate_hz() {
            return Err(Error::Misaligned(format!(
                "{:?} has {} samples at {} Hz, {:?} has {} at {} Hz",
                first.label(),
                first.len(),
                first.sample_rate_hz(),
                t.label(),
                t.len(),
                t.sample_rate_hz()
            )));
        }
    }
    Ok(())
}

fn difference(a: &Trace, b: &Trace) -> Vec<f64> {
    a.samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| x - y)
        .collect()
}

/// Noise power of `a − b` relative to the shot-noise pair, in dB per bin.
/// The DC bin is dropped because both spectra are mean-removed.
pub fn intensity_difference_spectrum(
    a: &Trace,
    b: &Trace,
    sql_pair: (&Trace, &Trace),
    w: WelchParams,
) -> Result<Spectrum> {
    check_aligned(&[a, b, sql_pair.0, sql_pair.1])?;
    let fs = a.sample_rate_hz();
    let num = psd_of(&difference(a, b), fs, w)?;
    let den = psd_of(&difference(sql_pair.0, sql_pair.1), fs, w)?;
    let power = num.power[1..]
        .iter()
        .zip(&den.power[1..])
        .map(|(n, d)| 10.0 * (n / d).log10())
        .collect();
    Ok(Spectrum {
        freqs_hz: num.freqs_hz[1..].to_vec(),
        power,
        scale: SpectrumScale::DbRelSql,
    })
}

/// In-band variance of `a − b` over that of the shot-noise pair, linear.
pub fn inband_power_ratio(
    a: &Trace,
    b: &Trace,
    sql_pair: (&Trace, &Trace),
    w: WelchParams,
    band: BandSpec,
) -> Result<f64> {
    check_aligned(&[a, b, sql_pair.0, sql_pair.1])?;
    let fs = a.sample_rate_hz();
    let num = psd_of(&difference(a, b), fs, w)?;
    let den = psd_of(&difference(sql_pair.0, sql_pair.1), fs, w)?;
    let d = den.band_integral(band);
    if d == 0.0 {
        if !num.freqs_hz.iter().any(|f| band.contains(*f)) {
            return Err(Error::EmptyBand {
                lo_hz: band.f_lo_hz,
                hi_hz: band.f_hi_hz,
            });
        }
        return Err(Error::invalid("sql_pair", "reference has no in-band power"));
    }
    Ok(num.band_integral(band) / d)
}

/// Arithmetic mean of the dB values over bins inside `band`.
pub fn band_average_squeezing(s: &Spectrum, band: BandSpec) -> Result<f64> {
    if s.scale != SpectrumScale::DbRelSql {
        return Err(Error::invalid("spectrum", "expected dB relative to the SQL"));
    }
    let (sum, count) = s
        .freqs_hz
        .iter()
        .zip(&s.power)
        .filter(|(f, _)| band.contains(**f))
        .fold((0.0, 0usize), |(acc, n), (_, p)| (acc + p, n + 1));
    if count == 0 {
        return Err(Error::EmptyBand {
            lo_hz: band.f_lo_hz,
            hi_hz: band.f_hi_hz,
        });
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryFraction {
    pub percent: f64,
    /// False when the recovered level lies outside `[original, 0]` dB and
    /// `percent` is reported unclamped.
    pub in_range: bool,
}

/// Recovered squeezing as a percentage of the original, both in dB.
pub fn squeezing_recovery_fraction(recovered_db: f64, original_db: f64) -> Result<RecoveryFraction> {
    if !(original_db < 0.0) {
        return Err(Error::invalid(
            "original_db",
            format!("{original_db} dB is not below the SQL"),
        ));
    }
    let percent = 100.0 * recovered_db / original_db;
    let in_range = (original_db..=0.0).contains(&recovered_db);
    Ok(RecoveryFraction {
        percent: if in_range { percent.clamp(0.0, 100.0) } else { percent },
        in_range,
    })
}
