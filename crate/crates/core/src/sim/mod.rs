//! Statistical stand-in for a four-wave-mixing twin-beam source.
//!
//! Each beam is its mean plus a band-limited fluctuation shared by both
//! beams plus an independent fluctuation. The independent parts are what
//! survives in the intensity difference, so their amplitude sets the
//! squeezing level relative to a shot-noise reference.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::BandSpec;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::trace::{DigitizationSpec, Trace, TraceSet};

/// Levels per milliwatt used to translate optical powers into ADC levels.
pub const LEVELS_PER_MW: f64 = 20.0;
/// Probe power before the scatterer, mW.
pub const PROBE_POWER_MW: f64 = 5.87;
/// Conjugate power, mW.
pub const CONJ_POWER_MW: f64 = 5.28;
/// Probe power after the scatterer, mW.
pub const SCATTERED_POWER_MW: f64 = 0.740;

#[derive(Debug, Clone, PartialEq)]
pub struct SqueezedPairParams {
    /// Intensity-difference noise below the shot-noise level, dB, >= 0.
    pub squeezing_db: f64,
    pub mean_probe: f64,
    pub mean_conj: f64,
    /// Corner of the first-order low-pass shaping the shared fluctuation.
    pub correlation_bandwidth_hz: f64,
    pub length: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
    /// RMS of the shared fluctuation, levels.
    pub shared_rms: f64,
    /// Corner of the detector response applied to the independent parts.
    /// `None` leaves them white.
    pub detector_bandwidth_hz: Option<f64>,
    /// Shot-noise variance per level of mean; the SQL reference has
    /// variance `shot_noise_var_per_level · mean`.
    pub shot_noise_var_per_level: f64,
    /// Band in which the squeezing level is calibrated.
    pub band: BandSpec,
    pub digitization: Option<DigitizationSpec>,
}

impl Default for SqueezedPairParams {
    fn default() -> Self {
        Self {
            squeezing_db: 7.8,
            mean_probe: PROBE_POWER_MW * LEVELS_PER_MW,
            mean_conj: CONJ_POWER_MW * LEVELS_PER_MW,
            correlation_bandwidth_hz: 3.5e6,
            length: 100_000,
            sample_rate_hz: 2.0e9,
            seed: 0,
            shared_rms: 12.0,
            detector_bandwidth_hz: Some(30e6),
            shot_noise_var_per_level: 1.5,
            band: BandSpec::default(),
            digitization: Some(DigitizationSpec::default()),
        }
    }
}

impl SqueezedPairParams {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz / 2.0;
        if !(self.squeezing_db.is_finite() && self.squeezing_db >= 0.0) {
            return Err(Error::invalid("squeezing_db", format!("{} < 0", self.squeezing_db)));
        }
        if !(self.mean_probe > 0.0 && self.mean_conj > 0.0) {
            return Err(Error::invalid("mean", "beam means must be positive"));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample_rate_hz", "must be positive"));
        }
        if !(self.correlation_bandwidth_hz > 0.0 && self.correlation_bandwidth_hz < nyquist) {
            return Err(Error::invalid(
                "correlation_bandwidth_hz",
                format!("{} not in (0, {nyquist})", self.correlation_bandwidth_hz),
            ));
        }
        if let Some(f) = self.detector_bandwidth_hz {
            if !(f > 0.0 && f < nyquist) {
                return Err(Error::invalid(
                    "detector_bandwidth_hz",
                    format!("{f} not in (0, {nyquist})"),
                ));
            }
        }
        if self.length == 0 {
            return Err(Error::invalid("length", "must be positive"));
        }
        if !(self.shared_rms >= 0.0 && self.shared_rms.is_finite()) {
            return Err(Error::invalid("shared_rms", "must be finite and >= 0"));
        }
        if !(self.shot_noise_var_per_level > 0.0) {
            return Err(Error::invalid("shot_noise_var_per_level", "must be positive"));
        }
        self.band.check_rate(self.sample_rate_hz)
    }

    pub fn noise_ratio(&self) -> f64 {
        10f64.powf(-self.squeezing_db / 10.0)
    }
}

/// Coefficient `a` of `y[n] = a·y[n-1] + (1-a)·x[n]` for a corner frequency.
fn pole_for_corner(corner_hz: f64, sample_rate_hz: f64) -> f64 {
    (-2.0 * PI * corner_hz / sample_rate_hz).exp()
}

/// Unit-variance stationary first-order low-passed Gaussian noise.
fn colored_noise(rng: &mut ChaCha8Rng, n: usize, pole: f64) -> Vec<f64> {
    let gain = 1.0 - pole;
    let stationary_var = gain * gain / (1.0 - pole * pole);
    let norm = 1.0 / stationary_var.sqrt();
    let mut y = stationary_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let mut out = Vec::with_capacity(n);
    out.push(y * norm);
    for _ in 1..n {
        y = pole * y + gain * rng.sample::<f64, _>(StandardNormal);
        out.push(y * norm);
    }
    out
}

/// Mean of `|H(f)|²` across `band` for the unit-variance-normalized
/// low-pass, relative to white noise of the same variance.
fn inband_gain(pole: f64, band: BandSpec, sample_rate_hz: f64) -> f64 {
    let gain = 1.0 - pole;
    let stationary_var = gain * gain / (1.0 - pole * pole);
    let points = 2048;
    let sum: f64 = (0..=points)
        .map(|k| {
            let f = band.f_lo_hz + band.width_hz() * k as f64 / points as f64;
            let w = 2.0 * PI * f / sample_rate_hz;
            let h2 = gain * gain / (1.0 - 2.0 * pole * w.cos() + pole * pole);
            let weight = if k == 0 || k == points { 0.5 } else { 1.0 };
            weight * h2
        })
        .sum();
    sum / points as f64 / stationary_var
}

fn finish(samples: Vec<f64>, p: &SqueezedPairParams, label: &str) -> Result<Trace> {
    let t = Trace::new(samples, p.sample_rate_hz, label)?;
    match p.digitization {
        Some(spec) => {
            let levels = t.samples().iter().map(|&x| spec.quantize(x)).collect();
            Trace::new(levels, p.sample_rate_hz, label)?.with_digitization(spec)
        }
        None => Ok(t),
    }
}

/// Probe and conjugate traces with the requested in-band squeezing.
pub fn generate_twin_beams(p: &SqueezedPairParams) -> Result<(Trace, Trace)> {
    p.validate()?;
    let n = p.length;
    let shared_pole = pole_for_corner(p.correlation_bandwidth_hz, p.sample_rate_hz);
    let shared = colored_noise(&mut stream_rng(p.seed, streams::SHARED), n, shared_pole);

    let (det_pole, det_gain) = match p.detector_bandwidth_hz {
        Some(f) => {
            let pole = pole_for_corner(f, p.sample_rate_hz);
            (pole, inband_gain(pole, p.band, p.sample_rate_hz))
        }
        None => (0.0, 1.0),
    };
    // Independent variance chosen so its in-band density equals the ratio
    // times the shot-noise density at the same mean.
    let independent_rms = |mean: f64| {
        (p.noise_ratio() * p.shot_noise_var_per_level * mean / det_gain).sqrt()
    };
    let probe_noise = colored_noise(&mut stream_rng(p.seed, streams::PROBE), n, det_pole);
    let conj_noise = colored_noise(&mut stream_rng(p.seed, streams::CONJ), n, det_pole);

    let (ap, ac) = (independent_rms(p.mean_probe), independent_rms(p.mean_conj));
    let probe = (0..n)
        .map(|k| p.mean_probe + p.shared_rms * shared[k] + ap * probe_noise[k])
        .collect();
    let conj = (0..n)
        .map(|k| p.mean_conj + p.shared_rms * shared[k] + ac * conj_noise[k])
        .collect();
    Ok((finish(probe, p, "probe")?, finish(conj, p, "conj")?))
}

/// Independent white shot-noise traces at the pair's means.
pub fn generate_sql_reference(p: &SqueezedPairParams) -> Result<(Trace, Trace)> {
    p.validate()?;
    let draw = |stream: u64, mean: f64| {
        let mut rng = stream_rng(p.seed, stream);
        let sd = (p.shot_noise_var_per_level * mean).sqrt();
        (0..p.length)
            .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
            .collect::<Vec<_>>()
    };
    Ok((
        finish(draw(streams::SQL_PROBE, p.mean_probe), p, "sql_probe")?,
        finish(draw(streams::SQL_CONJ, p.mean_conj), p, "sql_conj")?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScattererParams {
    /// Power transmission η in [0, 1].
    pub transmission: f64,
    pub smoothing_tau_s: f64,
    pub electronic_noise_rms: f64,
    pub delay_samples: usize,
}

impl Default for ScattererParams {
    fn default() -> Self {
        Self {
            transmission: 0.126,
            smoothing_tau_s: 100e-9,
            electronic_noise_rms: 5.0,
            delay_samples: 0,
        }
    }
}

impl ScattererParams {
    pub fn identity() -> Self {
        Self {
            transmission: 1.0,
            smoothing_tau_s: 0.0,
            electronic_noise_rms: 0.0,
            delay_samples: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.transmission) {
            return Err(Error::invalid(
                "transmission",
                format!("{} not in [0, 1]", self.transmission),
            ));
        }
        if !(self.smoothing_tau_s >= 0.0 && self.smoothing_tau_s.is_finite()) {
            return Err(Error::invalid("smoothing_tau_s", "must be finite and >= 0"));
        }
        if !(self.electronic_noise_rms >= 0.0 && self.electronic_noise_rms.is_finite()) {
            return Err(Error::invalid("electronic_noise_rms", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Attenuate, smooth, delay and add detector noise. A digitized input
/// yields a digitized output at the same bit depth.
pub fn apply_scatterer(t: &Trace, s: &ScattererParams, seed: u64) -> Result<Trace> {
    s.validate()?;
    let x = t.samples();
    let n = x.len();
    let pole = if s.smoothing_tau_s > 0.0 {
        (-1.0 / (s.smoothing_tau_s * t.sample_rate_hz())).exp()
    } else {
        0.0
    };

    let mut smoothed = Vec::with_capacity(n);
    let mut y = x[0];
    for &v in x {
        y = pole * y + (1.0 - pole) * v;
        smoothed.push(s.transmission * y);
    }

    let mut rng = stream_rng(seed, streams::SCATTERER);
    let head = smoothed[0];
    let mut out: Vec<f64> = (0..n)
        .map(|k| {
            if k < s.delay_samples {
                head
            } else {
                smoothed[k - s.delay_samples]
            }
        })
        .collect();
    if s.electronic_noise_rms > 0.0 {
        for v in out.iter_mut() {
            *v += s.electronic_noise_rms * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let label = format!("{}_scattered", t.label());
    match t.digitization() {
        Some(spec) => {
            out.iter_mut().for_each(|v| *v = spec.quantize(*v));
            Trace::new(out, t.sample_rate_hz(), label)?.with_digitization(spec)
        }
        None => Trace::new(out, t.sample_rate_hz(), label),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioParams {
    pub pair: SqueezedPairParams,
    pub scatterer: ScattererParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub traces: TraceSet,
    /// Shot-noise reference aligned with the second epoch.
    pub sql: (Trace, Trace),
}

const EPOCH_PRE: u64 = 1;
const EPOCH_POST: u64 = 2;
const SCATTER_SALT: u64 = 3;

/// Two independent recordings: one without the scatterer (probe and
/// conjugate) and one with it (conjugate, hidden undisrupted probe, and
/// disrupted probe).
pub fn simulate_scenario(p: &ScenarioParams) -> Result<Scenario> {
    let epoch = |salt: u64| SqueezedPairParams {
        seed: derive_seed(p.pair.seed, salt),
        ..p.pair.clone()
    };
    let (probe_pre, conj_pre) = generate_twin_beams(&epoch(EPOCH_PRE))?;
    let post = epoch(EPOCH_POST);
    let (probe_truth, conj_post) = generate_twin_beams(&post)?;
    let disrupted = apply_scatterer(
        &probe_truth,
        &p.scatterer,
        derive_seed(p.pair.seed, SCATTER_SALT),
    )?;
    let (sql_p, sql_c) = generate_sql_reference(&post)?;
    Ok(Scenario {
        traces: TraceSet {
            probe_pre: probe_pre.relabel("probe_pre"),
            conj_pre: conj_pre.relabel("conj_pre"),
            conj_post: conj_post.relabel("conj_post"),
            probe_truth: Some(probe_truth.relabel("probe_truth")),
            probe_disrupted: Some(disrupted.relabel("probe_disrupted")),
        },
        sql: (sql_p, sql_c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{inband_power_ratio, WelchParams};
    use proptest::prelude::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn measured_ratio(p: &SqueezedPairParams) -> f64 {
        let (a, b) = generate_twin_beams(p).unwrap();
        let (s, t) = generate_sql_reference(p).unwrap();
        inband_power_ratio(&a, &b, (&s, &t), WelchParams::default(), p.band).unwrap()
    }

    fn long(squeezing_db: f64) -> SqueezedPairParams {
        SqueezedPairParams {
            squeezing_db,
            length: 2_000_000,
            seed: 11,
            ..SqueezedPairParams::default()
        }
    }

    #[test]
    fn unsqueezed_pair_sits_at_the_sql() {
        let r = measured_ratio(&long(0.0));
        assert!((r - 1.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn squeezed_pair_ratio_matches_db() {
        let r = measured_ratio(&long(7.8));
        assert!((r - 10f64.powf(-0.78)).abs() < 0.01, "{r}");
    }

    #[test]
    fn generation_is_deterministic() {
        let p = SqueezedPairParams::default();
        assert_eq!(generate_twin_beams(&p).unwrap(), generate_twin_beams(&p).unwrap());
        let q = SqueezedPairParams { seed: 1, ..p.clone() };
        assert_ne!(generate_twin_beams(&p).unwrap().0, generate_twin_beams(&q).unwrap().0);
    }

    #[test]
    fn means_are_respected() {
        let p = SqueezedPairParams::default();
        let (a, b) = generate_twin_beams(&p).unwrap();
        // shared fluctuation is strongly correlated in time, so allow a few levels
        assert!((a.mean() - p.mean_probe).abs() < 3.0);
        assert!((b.mean() - p.mean_conj).abs() < 3.0);
        assert!(a.is_digitized() && b.is_digitized());
    }

    #[test]
    fn sql_reference_is_independent_and_shot_scaled() {
        let p = SqueezedPairParams {
            length: 400_000,
            digitization: None,
            ..SqueezedPairParams::default()
        };
        let (a, b) = generate_sql_reference(&p).unwrap();
        let r = pearson(a.samples(), b.samples());
        assert!(r.abs() < 3.0 / (p.length as f64).sqrt(), "{r}");

        let doubled = SqueezedPairParams { mean_probe: 2.0 * p.mean_probe, ..p.clone() };
        let (a2, _) = generate_sql_reference(&doubled).unwrap();
        let ratio = a2.variance() / a.variance();
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn sql_difference_is_flat_in_band() {
        let p = SqueezedPairParams {
            length: 2_000_000,
            ..SqueezedPairParams::default()
        };
        let (a, b) = generate_sql_reference(&p).unwrap();
        let d = a
            .with_samples(a.samples().iter().zip(b.samples()).map(|(x, y)| x - y).collect())
            .unwrap();
        let s = crate::dsp::estimate_psd(&d, WelchParams::default()).unwrap();
        let white = 2.0 * d.variance() / p.sample_rate_hz;
        for (f, pw) in s.freqs_hz.iter().zip(&s.power) {
            if p.band.contains(*f) {
                let db = 10.0 * (pw / white).log10();
                assert!(db.abs() < 0.5, "{f} Hz: {db} dB");
            }
        }
    }

    #[test]
    fn identity_scatterer_is_exact() {
        let (a, _) = generate_twin_beams(&SqueezedPairParams::default()).unwrap();
        let out = apply_scatterer(&a, &ScattererParams::identity(), 5).unwrap();
        assert_eq!(out.samples(), a.samples());
    }

    #[test]
    fn scatterer_scales_mean_to_scattered_power() {
        let p = SqueezedPairParams {
            length: 400_000,
            digitization: None,
            ..SqueezedPairParams::default()
        };
        let (a, _) = generate_twin_beams(&p).unwrap();
        let s = ScattererParams {
            transmission: SCATTERED_POWER_MW / PROBE_POWER_MW,
            ..ScattererParams::default()
        };
        let out = apply_scatterer(&a, &s, 1).unwrap();
        let mw = out.mean() / LEVELS_PER_MW;
        let expected = a.mean() * s.transmission / LEVELS_PER_MW;
        assert!((mw - expected).abs() < 0.01, "{mw} vs {expected}");
        assert!((expected - SCATTERED_POWER_MW).abs() < 0.02);
    }

    #[test]
    fn opaque_scatterer_destroys_correlation() {
        let p = SqueezedPairParams { length: 200_000, ..SqueezedPairParams::default() };
        let (a, _) = generate_twin_beams(&p).unwrap();
        let s = ScattererParams { transmission: 0.0, ..ScattererParams::default() };
        let out = apply_scatterer(&a, &s, 2).unwrap();
        let r = pearson(a.samples(), out.samples());
        assert!(r.abs() < 3.0 / (p.length as f64).sqrt(), "{r}");
    }

    #[test]
    fn scatterer_delay_shifts_samples() {
        let t = Trace::new((0..10).map(|k| k as f64).collect(), 1e9, "ramp").unwrap();
        let s = ScattererParams { delay_samples: 3, ..ScattererParams::identity() };
        let out = apply_scatterer(&t, &s, 0).unwrap();
        assert_eq!(&out.samples()[..5], &[0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn scenario_streams_are_aligned() {
        let sc = simulate_scenario(&ScenarioParams::default()).unwrap();
        assert!(crate::trace::validate_traceset(&sc.traces).is_ok());
        assert_ne!(sc.traces.probe_pre.samples(), sc.traces.probe_truth.as_ref().unwrap().samples());
    }

    #[test]
    fn invalid_params_error() {
        let bad = SqueezedPairParams { squeezing_db: -1.0, ..SqueezedPairParams::default() };
        assert!(generate_twin_beams(&bad).is_err());
        let bad = SqueezedPairParams { correlation_bandwidth_hz: 2e9, ..SqueezedPairParams::default() };
        assert!(generate_sql_reference(&bad).is_err());
        let t = Trace::new(vec![1.0], 1.0, "x").unwrap();
        let s = ScattererParams { transmission: 1.5, ..ScattererParams::default() };
        assert!(apply_scatterer(&t, &s, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn noiseless_scatterer_scales_variance(eta in 0.0f64..=1.0, seed in 0u64..100) {
            let p = SqueezedPairParams { length: 5000, seed, digitization: None, ..SqueezedPairParams::default() };
            let (a, _) = generate_twin_beams(&p).unwrap();
            let s = ScattererParams { transmission: eta, ..ScattererParams::identity() };
            let out = apply_scatterer(&a, &s, seed).unwrap();
            let expected = eta * eta * a.variance();
            prop_assert!((out.variance() - expected).abs() <= 1e-10 * a.variance());
        }

        #[test]
        fn more_squeezing_means_less_difference_noise(db in 0.0f64..12.0, step in 0.25f64..3.0) {
            let base = SqueezedPairParams { length: 20_000, digitization: None, ..SqueezedPairParams::default() };
            let lo = measured_ratio(&SqueezedPairParams { squeezing_db: db, ..base.clone() });
            let hi = measured_ratio(&SqueezedPairParams { squeezing_db: db + step, ..base });
            prop_assert!(hi < lo);
        }
    }
}
