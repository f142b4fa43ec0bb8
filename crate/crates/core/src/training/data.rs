use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::trace::{StreamId, Trace, TraceSet};

/// `x ↦ (x − lo) / span`, mapping a stream's own range onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub lo: f64,
    pub span: f64,
}

impl Affine {
    pub fn fit(x: &[f64], name: &'static str) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyInput(name));
        }
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(hi > lo) {
            return Err(Error::DegenerateAxis(name));
        }
        Ok(Self { lo, span: hi - lo })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.lo) / self.span
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.span + self.lo
    }
}

/// Per-stream affine maps produced by [`normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub streams: Vec<(StreamId, Affine)>,
}

impl NormParams {
    pub fn get(&self, id: StreamId) -> Result<Affine> {
        self.streams
            .iter()
            .find(|(s, _)| *s == id)
            .map(|(_, a)| *a)
            .ok_or_else(|| Error::invalid("norm params", format!("no entry for {id}")))
    }

    /// Map every stream of `ts` with the stored parameters. Values outside
    /// the fitted range land outside [0, 1].
    pub fn apply(&self, ts: &TraceSet) -> Result<TraceSet> {
        let map = |id: StreamId, t: &Trace| -> Result<Trace> {
            let a = self.get(id)?;
            t.with_samples(t.samples().iter().map(|&x| a.apply(x)).collect())
        };
        Ok(TraceSet {
            probe_pre: map(StreamId::ProbePre, &ts.probe_pre)?,
            conj_pre: map(StreamId::ConjPre, &ts.conj_pre)?,
            conj_post: map(StreamId::ConjPost, &ts.conj_post)?,
            probe_truth: ts.probe_truth.as_ref().map(|t| map(StreamId::ProbeTruth, t)).transpose()?,
            probe_disrupted: ts
                .probe_disrupted
                .as_ref()
                .map(|t| map(StreamId::ProbeDisrupted, t))
                .transpose()?,
        })
    }
}

/// Map each stream onto [0, 1] by its own minimum and maximum.
pub fn normalize(ts: &TraceSet) -> Result<(TraceSet, NormParams)> {
    let params = NormParams {
        streams: ts
            .streams()
            .map(|(id, t)| Ok((id, Affine::fit(t.samples(), id.name())?)))
            .collect::<Result<_>>()?,
    };
    let out = params.apply(ts)?;
    Ok((out, params))
}

/// How many windows a series of length `T` yields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowRule {
    /// `T − W − 1`: the final admissible window is dropped.
    #[default]
    DropLast,
    /// `T − W`: every window that has a next value.
    Natural,
}

impl WindowRule {
    pub fn count(self, len: usize, window_len: usize) -> Result<usize> {
        let drop = match self {
            WindowRule::DropLast => 1,
            WindowRule::Natural => 0,
        };
        if window_len == 0 || len < window_len + drop + 1 {
            return Err(Error::invalid(
                "window_len",
                format!("window of {window_len} leaves no samples in a series of {len}"),
            ));
        }
        Ok(len - window_len - drop)
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowRule::DropLast => "drop_last",
            WindowRule::Natural => "natural",
        }
    }
}

impl std::str::FromStr for WindowRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop_last" => Ok(WindowRule::DropLast),
            "natural" => Ok(WindowRule::Natural),
            other => Err(Error::invalid("window_rule", format!("unknown rule {other:?}"))),
        }
    }
}

/// Sliding windows over aligned input series, advancing one sample at a
/// time, with the next value of the target series as the label.
///
/// Series are shared, so subsets made by splitting are cheap.
#[derive(Debug, Clone)]
pub struct WindowDataset {
    inputs: Arc<Vec<Vec<f64>>>,
    target: Arc<Vec<f64>>,
    window_len: usize,
    starts: Vec<usize>,
}

impl WindowDataset {
    pub fn count(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn stream_count(&self) -> usize {
        self.inputs.len()
    }

    /// Start index of each window in the underlying series.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn series(&self) -> Vec<&[f64]> {
        self.inputs.iter().map(|v| v.as_slice()).collect()
    }

    pub fn window(&self, stream: usize, sample: usize) -> &[f64] {
        let s = self.starts[sample];
        &self.inputs[stream][s..s + self.window_len]
    }

    pub fn target(&self, sample: usize) -> f64 {
        self.target[self.starts[sample] + self.window_len]
    }

    pub fn target_at_start(&self, start: usize) -> f64 {
        self.target[start + self.window_len]
    }

    pub fn targets(&self) -> Vec<f64> {
        (0..self.count()).map(|i| self.target(i)).collect()
    }

    pub fn subset(&self, range: Range<usize>) -> Self {
        Self {
            inputs: Arc::clone(&self.inputs),
            target: Arc::clone(&self.target),
            window_len: self.window_len,
            starts: self.starts[range].to_vec(),
        }
    }
}

/// Windows over arbitrary aligned series.
pub fn make_windows_from(
    inputs: Vec<Vec<f64>>,
    target: Vec<f64>,
    window_len: usize,
    rule: WindowRule,
) -> Result<WindowDataset> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("window inputs"));
    }
    let len = target.len();
    for s in &inputs {
        if s.len() != len {
            return Err(Error::DimensionMismatch {
                context: "window series",
                expected: len,
                actual: s.len(),
            });
        }
    }
    let count = rule.count(len, window_len)?;
    Ok(WindowDataset {
        inputs: Arc::new(inputs),
        target: Arc::new(target),
        window_len,
        starts: (0..count).collect(),
    })
}

/// The three-block layout: inputs probe_pre, conj_pre, conj_post.
pub fn make_windows(
    ts: &TraceSet,
    window_len: usize,
    target_stream: StreamId,
    rule: WindowRule,
) -> Result<WindowDataset> {
    let inputs = [&ts.probe_pre, &ts.conj_pre, &ts.conj_post]
        .iter()
        .map(|t| t.samples().to_vec())
        .collect();
    let target = ts.require(target_stream)?.samples().to_vec();
    make_windows_from(inputs, target, window_len, rule)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.64,
            val_frac: 0.16,
            test_frac: 0.20,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_frac, self.val_frac, self.test_frac];
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split", "fractions must lie in [0, 1] and sum to 1"));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes: validation and test are floored, the
    /// remainder goes to training.
    pub fn sizes(&self, count: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if count < 5 {
            return Err(Error::invalid("split", format!("{count} windows is too few to split")));
        }
        // the small offset keeps exact products such as 0.16 · 25 from
        // flooring one below
        let floor = |frac: f64| (count as f64 * frac + 1e-9).floor() as usize;
        let (val, test) = (floor(self.val_frac), floor(self.test_frac));
        Ok((count - val - test, val, test))
    }

    /// Index ranges of the three splits, in chronological order.
    pub fn ranges(&self, count: usize) -> Result<[Range<usize>; 3]> {
        let (tr, va, _) = self.sizes(count)?;
        Ok([0..tr, tr..tr + va, tr + va..count])
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: WindowDataset,
    pub val: WindowDataset,
    pub test: WindowDataset,
}

/// Contiguous chronological split: train earliest, test latest.
pub fn split_dataset(ds: &WindowDataset, spec: &SplitSpec) -> Result<Splits> {
    let [tr, va, te] = spec.ranges(ds.count())?;
    Ok(Splits {
        train: ds.subset(tr),
        val: ds.subset(va),
        test: ds.subset(te),
    })
}

/// Sample indices `0..n` grouped into batches, optionally shuffled with a
/// seeded permutation. The last batch may be short.
pub fn batch_iter(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut stream_rng(seed, streams::SHUFFLE));
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
