//! Plug-in mutual information from joint histograms, and its scan over
//! relative time shifts.

use std::io::Write;

use crate::error::{Error, Result};
use crate::trace::Trace;

pub const DEFAULT_BINS: usize = 100;

/// Equal-width bins spanning `[lo, hi]`; the top edge is inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinAxis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinAxis {
    pub fn spanning(x: &[f64], bins: usize, name: &'static str) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid("bins", format!("{bins} < 2")));
        }
        if x.is_empty() {
            return Err(Error::EmptyInput(name));
        }
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if !(hi > lo) {
            return Err(Error::DegenerateAxis(name));
        }
        Ok(Self { lo, hi, bins })
    }

    /// Bin index; values outside the span saturate into the end bins.
    #[inline]
    pub fn index(&self, x: f64) -> usize {
        let u = (x - self.lo) / (self.hi - self.lo) * self.bins as f64;
        if u <= 0.0 {
            0
        } else {
            (u as usize).min(self.bins - 1)
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        let mut e: Vec<f64> = (0..self.bins).map(|k| self.lo + w * k as f64).collect();
        e.push(self.hi);
        e
    }
}

/// Row-major `n_p × n_c` counts.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    pub counts: Vec<u64>,
    pub p_axis: BinAxis,
    pub c_axis: BinAxis,
    pub total: u64,
}

impl JointHistogram {
    pub fn n_p(&self) -> usize {
        self.p_axis.bins
    }

    pub fn n_c(&self) -> usize {
        self.c_axis.bins
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n_c() + j]
    }

    pub fn p_edges(&self) -> Vec<f64> {
        self.p_axis.edges()
    }

    pub fn c_edges(&self) -> Vec<f64> {
        self.c_axis.edges()
    }

    pub fn transpose(&self) -> JointHistogram {
        let (np, nc) = (self.n_p(), self.n_c());
        let mut counts = vec![0; np * nc];
        for i in 0..np {
            for j in 0..nc {
                counts[j * np + i] = self.counts[i * nc + j];
            }
        }
        JointHistogram {
            counts,
            p_axis: self.c_axis,
            c_axis: self.p_axis,
            total: self.total,
        }
    }

    /// Cosine similarity of the flattened count vectors.
    pub fn cosine_similarity(&self, other: &JointHistogram) -> Result<f64> {
        if self.counts.len() != other.counts.len() {
            return Err(Error::DimensionMismatch {
                context: "histogram comparison",
                expected: self.counts.len(),
                actual: other.counts.len(),
            });
        }
        let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for (&a, &b) in self.counts.iter().zip(&other.counts) {
            let (a, b) = (a as f64, b as f64);
            dot += a * b;
            aa += a * a;
            bb += b * b;
        }
        Ok(dot / (aa * bb).sqrt())
    }

    /// Long-form CSV: bin centres and counts for every cell.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let centre = |axis: &BinAxis, k: usize| {
            axis.lo + (axis.hi - axis.lo) * (k as f64 + 0.5) / axis.bins as f64
        };
        writeln!(w, "p_center,c_center,count")?;
        for i in 0..self.n_p() {
            for j in 0..self.n_c() {
                writeln!(
                    w,
                    "{:?},{:?},{}",
                    centre(&self.p_axis, i),
                    centre(&self.c_axis, j),
                    self.get(i, j)
                )?;
            }
        }
        Ok(())
    }
}

fn check_pair(p: &Trace, c: &Trace) -> Result<()> {
    if p.len() != c.len() || p.sample_rate_hz() != c.sample_rate_hz() {
        return Err(Error::Misaligned(format!(
            "probe has {} samples at {} Hz, conjugate {} at {} Hz",
            p.len(),
            p.sample_rate_hz(),
            c.len(),
            c.sample_rate_hz()
        )));
    }
    Ok(())
}

/// Each axis binned independently over its own `[min, max]`.
pub fn joint_histogram(p: &Trace, c: &Trace, n_p: usize, n_c: usize) -> Result<JointHistogram> {
    check_pair(p, c)?;
    histogram_slices(p.samples(), c.samples(), n_p, n_c)
}

/// Histogram on caller-supplied axes, for comparing two pairs cell by cell.
pub fn joint_histogram_on(
    p: &[f64],
    c: &[f64],
    p_axis: BinAxis,
    c_axis: BinAxis,
) -> Result<JointHistogram> {
    if p.len() != c.len() {
        return Err(Error::DimensionMismatch {
            context: "joint histogram",
            expected: p.len(),
            actual: c.len(),
        });
    }
    let nc = c_axis.bins;
    let mut counts = vec![0u64; p_axis.bins * nc];
    for (&x, &y) in p.iter().zip(c) {
        counts[p_axis.index(x) * nc + c_axis.index(y)] += 1;
    }
    Ok(JointHistogram {
        counts,
        p_axis,
        c_axis,
        total: p.len() as u64,
    })
}

fn histogram_slices(p: &[f64], c: &[f64], n_p: usize, n_c: usize) -> Result<JointHistogram> {
    let p_axis = BinAxis::spanning(p, n_p, "probe")?;
    let c_axis = BinAxis::spanning(c, n_c, "conjugate")?;
    joint_histogram_on(p, c, p_axis, c_axis)
}

/// Shannon mutual information in bits; empty cells contribute nothing.
pub fn mutual_information(h: &JointHistogram) -> f64 {
    if h.total == 0 {
        return 0.0;
    }
    let (np, nc) = (h.n_p(), h.n_c());
    let mut row = vec![0u64; np];
    let mut col = vec![0u64; nc];
    for i in 0..np {
        for j in 0..nc {
            let v = h.counts[i * nc + j];
            row[i] += v;
            col[j] += v;
        }
    }
    let n = h.total as f64;
    let mut mi = 0.0;
    for i in 0..np {
        for j in 0..nc {
            let v = h.counts[i * nc + j];
            if v > 0 {
                let v = v as f64;
                // P(p,c) / (P(p) P(c)) = v·n / (row·col)
                mi += v * (v * n / (row[i] as f64 * col[j] as f64)).log2();
            }
        }
    }
    mi / n
}

/// MI against relative shift. Positive shift pairs `p[t]` with `c[t + k]`,
/// i.e. the conjugate delayed relative to the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct MiCurve {
    pub shifts_s: Vec<f64>,
    pub mi_bits: Vec<f64>,
}

impl MiCurve {
    pub const SHIFT_CONVENTION: &'static str = "positive shift = conjugate delayed relative to probe";

    pub fn len(&self) -> usize {
        self.shifts_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts_s.is_empty()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# {}", Self::SHIFT_CONVENTION)?;
        writeln!(w, "shift_ns,mi_bits")?;
        for (s, m) in self.shifts_s.iter().zip(&self.mi_bits) {
            writeln!(w, "{:?},{:?}", s * 1e9, m)?;
        }
        Ok(())
    }
}

pub fn mi_timeshift_scan(
    p: &Trace,
    c: &Trace,
    max_shift_samples: usize,
    n_p: usize,
    n_c: usize,
) -> Result<MiCurve> {
    check_pair(p, c)?;
    let n = p.len();
    if 2 * max_shift_samples >= n {
        return Err(Error::invalid(
            "max_shift_samples",
            format!("{max_shift_samples} is not below half the length {n}"),
        ));
    }
    let dt = 1.0 / p.sample_rate_hz();
    let (ps, cs) = (p.samples(), c.samples());
    let m = max_shift_samples as isize;
    let mut shifts_s = Vec::with_capacity(2 * max_shift_samples + 1);
    let mut mi_bits = Vec::with_capacity(2 * max_shift_samples + 1);
    for k in -m..=m {
        let (pa, ca) = if k >= 0 {
            let k = k as usize;
            (&ps[..n - k], &cs[k..])
        } else {
            let k = (-k) as usize;
            (&ps[k..], &cs[..n - k])
        };
        let h = histogram_slices(pa, ca, n_p, n_c)?;
        shifts_s.push(k as f64 * dt);
        mi_bits.push(mutual_information(&h));
    }
    Ok(MiCurve { shifts_s, mi_bits })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiPeak {
    pub height_bits: f64,
    pub delay_s: f64,
}

/// Highest point; exact ties go to the smallest |shift|, then the earlier one.
pub fn peak_metrics(m: &MiCurve) -> Result<MiPeak> {
    if m.is_empty() {
        return Err(Error::EmptyInput("MI curve"));
    }
    let mut best = 0;
    for k in 1..m.len() {
        let (h, hb) = (m.mi_bits[k], m.mi_bits[best]);
        if h > hb || (h == hb && m.shifts_s[k].abs() < m.shifts_s[best].abs()) {
            best = k;
        }
    }
    Ok(MiPeak {
        height_bits: m.mi_bits[best].max(0.0),
        delay_s: m.shifts_s[best],
    })
}

pub fn mi_recovery_fraction(recovered: &MiPeak, original: &MiPeak) -> Result<f64> {
    if !(original.height_bits > 0.0) {
        return Err(Error::invalid("original", "MI peak height must be positive"));
    }
    Ok(100.0 * recovered.height_bits / original.height_bits)
}

/// Shannon entropy of a marginal, bits. Used to check `I(X;X) = H(X)`.
pub fn marginal_entropy(x: &[f64], bins: usize) -> Result<f64> {
    let axis = BinAxis::spanning(x, bins, "marginal")?;
    let mut counts = vec![0u64; bins];
    for &v in x {
        counts[axis.index(v)] += 1;
    }
    let n = x.len() as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n;
            -q * q.log2()
        })
        .sum())
}
