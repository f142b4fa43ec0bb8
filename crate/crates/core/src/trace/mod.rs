//! Digitized photocurrent time sequences and the aligned bundles the
//! reconstruction model consumes.

mod io;

pub use io::{load_trace, save_trace, TraceFormat};

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// ADC resolution. Levels run from `0` to `max_level() - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DigitizationSpec {
    bits: u32,
}

impl DigitizationSpec {
    pub fn new(bits: u32) -> Result<Self> {
        if !(1..=32).contains(&bits) {
            return Err(Error::invalid("bits", format!("{bits} not in 1..=32")));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn max_level(&self) -> u64 {
        1u64 << self.bits
    }

    /// Round to nearest (ties away from zero) and saturate into the ADC range.
    pub fn quantize(&self, x: f64) -> f64 {
        let top = (self.max_level() - 1) as f64;
        x.round().clamp(0.0, top)
    }
}

impl Default for DigitizationSpec {
    fn default() -> Self {
        Self { bits: 8 }
    }
}

/// A uniformly sampled sequence of photocurrent levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    label: String,
    digitization: Option<DigitizationSpec>,
}

impl Trace {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, label: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("trace samples"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid(
                "sample_rate_hz",
                format!("{sample_rate_hz} must be positive and finite"),
            ));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            label: label.into(),
            digitization: None,
        })
    }

    /// Marks the trace as raw ADC output. Fails if any sample is off the level grid.
    pub fn with_digitization(mut self, spec: DigitizationSpec) -> Result<Self> {
        let top = spec.max_level() as f64;
        if let Some(bad) = self
            .samples
            .iter()
            .find(|&&x| !(0.0..top).contains(&x) || x.fract() != 0.0)
        {
            return Err(Error::invalid(
                "samples",
                format!("{bad} is not a level of a {}-bit digitizer", spec.bits()),
            ));
        }
        self.digitization = Some(spec);
        Ok(self)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn digitization(&self) -> Option<DigitizationSpec> {
        self.digitization
    }

    pub fn is_digitized(&self) -> bool {
        self.digitization.is_some()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.samples.len() as f64
    }

    /// Same rate and label, new samples. The digitization mark is dropped.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Trace::new(samples, self.sample_rate_hz, self.label.clone())
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Copy of `samples[start..start + len]`, keeping the digitization mark.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.samples.len() && len > 0)
            .ok_or_else(|| {
                Error::invalid(
                    "slice",
                    format!("{start}+{len} outside trace of {}", self.samples.len()),
                )
            })?;
        Ok(Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
            label: self.label.clone(),
            digitization: self.digitization,
        })
    }
}

/// Quantize real-valued samples onto the digitizer grid.
pub fn digitize(samples: &[f64], spec: DigitizationSpec, sample_rate_hz: f64) -> Result<Trace> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("digitize"));
    }
    let levels = samples.iter().map(|&x| spec.quantize(x)).collect();
    Trace::new(levels, sample_rate_hz, "")?.with_digitization(spec)
}

/// Names of the streams held by a [`TraceSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    ProbePre,
    ConjPre,
    ConjPost,
    ProbeTruth,
    ProbeDisrupted,
}

impl StreamId {
    pub const ALL: [StreamId; 5] = [
        StreamId::ProbePre,
        StreamId::ConjPre,
        StreamId::ConjPost,
        StreamId::ProbeTruth,
        StreamId::ProbeDisrupted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StreamId::ProbePre => "probe_pre",
            StreamId::ConjPre => "conj_pre",
            StreamId::ConjPost => "conj_post",
            StreamId::ProbeTruth => "probe_truth",
            StreamId::ProbeDisrupted => "probe_disrupted",
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Probe and conjugate sequences recorded before the scatterer is inserted,
/// the conjugate recorded while it is present, and (in simulation) the
/// undisrupted probe of that second epoch plus its disrupted counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub probe_pre: Trace,
    pub conj_pre: Trace,
    pub conj_post: Trace,
    pub probe_truth: Option<Trace>,
    pub probe_disrupted: Option<Trace>,
}

impl TraceSet {
    pub fn get(&self, id: StreamId) -> Option<&Trace> {
        match id {
            StreamId::ProbePre => Some(&self.probe_pre),
            StreamId::ConjPre => Some(&self.conj_pre),
            StreamId::ConjPost => Some(&self.conj_post),
            StreamId::ProbeTruth => self.probe_truth.as_ref(),
            StreamId::ProbeDisrupted => self.probe_disrupted.as_ref(),
        }
    }

    pub fn require(&self, id: StreamId) -> Result<&Trace> {
        self.get(id)
            .ok_or_else(|| Error::invalid("trace set", format!("missing stream {id}")))
    }

    /// Present streams in canonical order.
    pub fn streams(&self) -> impl Iterator<Item = (StreamId, &Trace)> {
        StreamId::ALL
            .into_iter()
            .filter_map(move |id| self.get(id).map(|t| (id, t)))
    }

    pub fn len(&self) -> usize {
        self.conj_post.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conj_post.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.conj_post.sample_rate_hz()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty(StreamId),
    LengthMismatch(StreamId),
    RateMismatch(StreamId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty(id) => write!(f, "empty: {id}"),
            Violation::LengthMismatch(id) => write!(f, "length mismatch: {id}"),
            Violation::RateMismatch(id) => write!(f, "rate mismatch: {id}"),
        }
    }
}

/// Every alignment violation in `ts`. The reference length and rate are the
/// most common values among the member traces, so a single outlier is the
/// one reported.
pub fn validate_traceset(ts: &TraceSet) -> std::result::Result<(), Vec<Violation>> {
    let members: Vec<(StreamId, &Trace)> = ts.streams().collect();
    let mut violations = Vec::new();

    let ref_len = mode(members.iter().map(|(_, t)| t.len()));
    let ref_rate = mode(members.iter().map(|(_, t)| t.sample_rate_hz().to_bits()));

    for (id, t) in &members {
        if t.is_empty() {
            violations.push(Violation::Empty(*id));
        } else if Some(t.len()) != ref_len {
            violations.push(Violation::LengthMismatch(*id));
        }
        if Some(t.sample_rate_hz().to_bits()) != ref_rate {
            violations.push(Violation::RateMismatch(*id));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn mode<T: Copy + Eq + std::hash::Hash>(items: impl Iterator<Item = T>) -> Option<T> {
    let mut counts: HashMap<T, usize> = HashMap::new();
    let mut order = Vec::new();
    for item in items {
        let c = counts.entry(item).or_insert(0);
        if *c == 0 {
            order.push(item);
        }
        *c += 1;
    }
    // first-seen wins ties
    let mut best: Option<(T, usize)> = None;
    for item in order {
        let c = counts[&item];
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((item, c));
        }
    }
    best.map(|(item, _)| item)
}
