//! Verification runs and recovery experiments on trained models.

use std::fmt;
use std::io::Write;

use crate::dsp::{
    band_average_squeezing, bandpass_filter, intensity_difference_spectrum, squeezing_recovery_fraction,
    BandSpec, Spectrum, WelchParams,
};
use crate::error::{Error, Result};
use crate::info::{
    joint_histogram_on, mi_recovery_fraction, mi_timeshift_scan, peak_metrics, BinAxis, JointHistogram,
    MiCurve, MiPeak, DEFAULT_BINS,
};
use crate::neural::RecoveryModel;
use crate::trace::{DigitizationSpec, StreamId, Trace, TraceSet};
use crate::training::{
    fit, make_windows_from, reconstruct, reconstruct_series, split_dataset, Affine, Hyperparams, NormParams,
    Reconstruction, TrainingReport,
};

/// Published figures for the optical-hardware approach, kept for comparison
/// tables only.
pub const HARDWARE_MI_RECOVERY_PCT: f64 = 47.1;
pub const HARDWARE_PEAK_DELAY_NS: f64 = 32.5;

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "pearson",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("pearson"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateAxis("pearson input"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Segment of `t` matching a reconstruction's position and length.
pub fn aligned_segment(t: &Trace, r: &Reconstruction) -> Result<Trace> {
    t.slice(r.offset, r.trace.len())
}

/// Train a single block to predict `stream` from its own past and
/// reconstruct the test split. A constant stream is scaled by a unit span
/// so it reconstructs to a constant.
pub fn reconstruct_single_stream(stream: &Trace, hp: &Hyperparams) -> Result<(Reconstruction, TrainingReport)> {
    let aff = Affine::fit(stream.samples(), "stream").unwrap_or(Affine {
        lo: stream.samples().first().copied().unwrap_or(0.0),
        span: 1.0,
    });
    let x: Vec<f64> = stream.samples().iter().map(|&v| aff.apply(v)).collect();
    let ds = make_windows_from(vec![x.clone()], x.clone(), hp.window_len, hp.window_rule)?;
    let splits = split_dataset(&ds, &hp.split)?;
    let (model, report) = fit(hp.single_block_spec(), &splits, hp)?;
    let mut rec = reconstruct_series(&model, &[&x], aff, stream.sample_rate_hz(), hp.window_rule, &hp.split)?;
    rec.trace = rec.trace.relabel(format!("{}_reconstructed", stream.label()));
    Ok((rec, report))
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub probe: Reconstruction,
    pub conj: Reconstruction,
    pub probe_report: TrainingReport,
    pub conj_report: TrainingReport,
    /// Test-segment originals on axes spanning their own range.
    pub hist_original: JointHistogram,
    /// Reconstructions on the same axes, after digitization when the
    /// originals are digitized.
    pub hist_reconstructed: JointHistogram,
    pub cosine_similarity: f64,
    pub pearson_probe: f64,
    pub pearson_conj: f64,
}

fn like_original(rec: &Trace, original: &Trace) -> Result<Trace> {
    match original.digitization() {
        Some(d) => digitize_to(rec, d),
        None => Ok(rec.clone()),
    }
}

fn digitize_to(t: &Trace, d: DigitizationSpec) -> Result<Trace> {
    t.with_samples(t.samples().iter().map(|&x| d.quantize(x)).collect())?
        .with_digitization(d)
}

/// Reconstruct the undisrupted probe and conjugate independently with one
/// single-block model each, and compare joint statistics with the originals.
pub fn verify_single_stream(ts: &TraceSet, hp: &Hyperparams, bins: usize) -> Result<Verification> {
    let (probe, probe_report) = reconstruct_single_stream(&ts.probe_pre, hp)?;
    let (conj, conj_report) = reconstruct_single_stream(&ts.conj_pre, hp)?;
    let p_orig = aligned_segment(&ts.probe_pre, &probe)?;
    let c_orig = aligned_segment(&ts.conj_pre, &conj)?;
    let p_rec = like_original(&probe.trace, &p_orig)?;
    let c_rec = like_original(&conj.trace, &c_orig)?;

    let p_axis = BinAxis::spanning(p_orig.samples(), bins, "probe")?;
    let c_axis = BinAxis::spanning(c_orig.samples(), bins, "conjugate")?;
    let hist_original = joint_histogram_on(p_orig.samples(), c_orig.samples(), p_axis, c_axis)?;
    let hist_reconstructed = joint_histogram_on(p_rec.samples(), c_rec.samples(), p_axis, c_axis)?;
    let cosine_similarity = hist_original.cosine_similarity(&hist_reconstructed)?;
    Ok(Verification {
        pearson_probe: pearson(probe.trace.samples(), p_orig.samples())?,
        pearson_conj: pearson(conj.trace.samples(), c_orig.samples())?,
        probe,
        conj,
        probe_report,
        conj_report,
        hist_original,
        hist_reconstructed,
        cosine_similarity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub band: BandSpec,
    pub bins: usize,
    /// MI scan range, samples either side of zero shift.
    pub max_shift_samples: usize,
    pub welch: WelchParams,
    /// Band-pass filter every pair before the MI scans.
    pub filter_before_mi: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            band: BandSpec::default(),
            bins: DEFAULT_BINS,
            max_shift_samples: 200,
            welch: WelchParams::default(),
            filter_before_mi: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryReport {
    pub mi_original: MiPeak,
    pub mi_disrupted: MiPeak,
    pub mi_recovered: MiPeak,
    pub mi_recovery_pct: f64,
    pub squeezing_original_db: f64,
    pub squeezing_disrupted_db: f64,
    pub squeezing_recovered_db: f64,
    /// Unclamped when the recovered level falls outside `[original, 0]` dB;
    /// NaN when the original is not below the SQL.
    pub squeezing_recovery_pct: f64,
    pub peak_delay_ns: f64,
}

impl RecoveryReport {
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mi_original_bits", self.mi_original.height_bits),
            ("mi_original_delay_ns", self.mi_original.delay_s * 1e9),
            ("mi_disrupted_bits", self.mi_disrupted.height_bits),
            ("mi_disrupted_delay_ns", self.mi_disrupted.delay_s * 1e9),
            ("mi_recovered_bits", self.mi_recovered.height_bits),
            ("mi_recovered_delay_ns", self.mi_recovered.delay_s * 1e9),
            ("mi_recovery_pct", self.mi_recovery_pct),
            ("squeezing_original_db", self.squeezing_original_db),
            ("squeezing_disrupted_db", self.squeezing_disrupted_db),
            ("squeezing_recovered_db", self.squeezing_recovered_db),
            ("squeezing_recovery_pct", self.squeezing_recovery_pct),
            ("peak_delay_ns", self.peak_delay_ns),
            ("hardware_mi_recovery_pct", HARDWARE_MI_RECOVERY_PCT),
            ("hardware_peak_delay_ns", HARDWARE_PEAK_DELAY_NS),
        ]
    }
}

/// One `key=value` per line.
impl fmt::Display for RecoveryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.fields() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Everything a recovery evaluation computes.
#[derive(Debug, Clone)]
pub struct RecoveryEvaluation {
    pub report: RecoveryReport,
    pub reconstruction: Reconstruction,
    pub mi_original: MiCurve,
    pub mi_disrupted: MiCurve,
    pub mi_recovered: MiCurve,
    pub spectrum_original: Spectrum,
    pub spectrum_disrupted: Spectrum,
    pub spectrum_recovered: Spectrum,
}

impl RecoveryEvaluation {
    pub fn curves(&self) -> [(&'static str, &MiCurve); 3] {
        [
            ("original", &self.mi_original),
            ("disrupted", &self.mi_disrupted),
            ("recovered", &self.mi_recovered),
        ]
    }

    pub fn spectra(&self) -> [(&'static str, &Spectrum); 3] {
        [
            ("original", &self.spectrum_original),
            ("disrupted", &self.spectrum_disrupted),
            ("recovered", &self.spectrum_recovered),
        ]
    }

    pub fn write_report(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "{}", self.report)
    }
}

/// Assemble the report from the three MI curves and squeezing levels.
pub fn assemble_report(
    curves: [&MiCurve; 3],
    squeezing_db: [f64; 3],
) -> Result<RecoveryReport> {
    let [o, d, r] = [peak_metrics(curves[0])?, peak_metrics(curves[1])?, peak_metrics(curves[2])?];
    let [so, sd, sr] = squeezing_db;
    Ok(RecoveryReport {
        mi_original: o,
        mi_disrupted: d,
        mi_recovered: r,
        mi_recovery_pct: mi_recovery_fraction(&r, &o)?,
        squeezing_original_db: so,
        squeezing_disrupted_db: sd,
        squeezing_recovered_db: sr,
        squeezing_recovery_pct: squeezing_recovery_fraction(sr, so).map_or(f64::NAN, |f| f.percent),
        peak_delay_ns: r.delay_s * 1e9,
    })
}

/// Compare the undisrupted probe, the disrupted probe and the model's
/// reconstruction, each paired with the disrupted-epoch conjugate, over the
/// test split of `ts`. `sql` is the shot-noise reference pair for the whole
/// trace length.
pub fn evaluate_recovery(
    ts: &TraceSet,
    sql: (&Trace, &Trace),
    model: &RecoveryModel,
    norm: &NormParams,
    hp: &Hyperparams,
    opts: &EvalOptions,
) -> Result<RecoveryEvaluation> {
    let truth = ts.require(StreamId::ProbeTruth)?;
    let disrupted = ts.require(StreamId::ProbeDisrupted)?;
    let rec = reconstruct(model, ts, norm, hp.window_rule, &hp.split)?;
    let seg = |t: &Trace| aligned_segment(t, &rec);
    let conj = seg(&ts.conj_post)?;
    let probes = [seg(truth)?, seg(disrupted)?, rec.trace.clone()];
    let (sql_p, sql_c) = (seg(sql.0)?, seg(sql.1)?);

    let conj_f = if opts.filter_before_mi {
        bandpass_filter(&conj, opts.band)?
    } else {
        conj.clone()
    };
    let mut curves = Vec::with_capacity(3);
    let mut spectra = Vec::with_capacity(3);
    let mut levels = [0.0; 3];
    for (k, p) in probes.iter().enumerate() {
        let pf = if opts.filter_before_mi {
            bandpass_filter(p, opts.band)?
        } else {
            p.clone()
        };
        curves.push(mi_timeshift_scan(&pf, &conj_f, opts.max_shift_samples, opts.bins, opts.bins)?);
        let s = intensity_difference_spectrum(p, &conj, (&sql_p, &sql_c), opts.welch)?;
        levels[k] = band_average_squeezing(&s, opts.band)?;
        spectra.push(s);
    }
    let report = assemble_report([&curves[0], &curves[1], &curves[2]], levels)?;
    let mut curves = curves.into_iter();
    let mut spectra = spectra.into_iter();
    Ok(RecoveryEvaluation {
        report,
        reconstruction: rec,
        mi_original: curves.next().unwrap(),
        mi_disrupted: curves.next().unwrap(),
        mi_recovered: curves.next().unwrap(),
        spectrum_original: spectra.next().unwrap(),
        spectrum_disrupted: spectra.next().unwrap(),
        spectrum_recovered: spectra.next().unwrap(),
    })
}
