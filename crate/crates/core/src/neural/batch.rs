//! Batched forward and backward passes for one block over a set of windows.
//!
//! Rows are samples: at step `t` the matrix `A_t` holds `[h_{t-1}, x_t]` for
//! every sample of the batch, and the stacked gate pre-activations are
//! `A_t · Wᵀ + b`. Parameter gradients are accumulated with a single GEMM
//! over all steps at the end, so the reduction order is fixed.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2};

use super::activation::{sigmoid_in_place, tanh, tanh_in_place};
use super::block::LstmBlock;

/// Where each sample's window lives: `series[(start + t) * input + k]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WindowSource<'a> {
    pub series: &'a [f64],
    pub starts: &'a [usize],
    pub len: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockTape {
    steps: usize,
    batch: usize,
    /// `steps · batch × (hidden + input)`
    a: Vec<f64>,
    /// activated gates, `steps · batch × 4·hidden`
    gates: Vec<f64>,
    /// cell states including the zero initial state, `(steps + 1) · batch × hidden`
    c: Vec<f64>,
    /// `tanh(c_t)`, `steps · batch × hidden`
    tc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl BlockGrad {
    pub fn zeros_like(block: &LstmBlock) -> Self {
        Self {
            w: Array2::zeros(block.w.dim()),
            b: Array1::zeros(block.b.len()),
        }
    }
}

fn gather(block: &LstmBlock, src: &WindowSource<'_>, t: usize, h: &[f64], a_t: &mut [f64]) {
    let (hd, id) = (block.hidden_dim(), block.input_dim());
    let cols = hd + id;
    for (r, &start) in src.starts.iter().enumerate() {
        let row = &mut a_t[r * cols..(r + 1) * cols];
        row[..hd].copy_from_slice(&h[r * hd..(r + 1) * hd]);
        let x0 = (start + t) * id;
        row[hd..].copy_from_slice(&src.series[x0..x0 + id]);
    }
}

fn preactivate(block: &LstmBlock, a_t: &[f64], g_t: &mut [f64], batch: usize) {
    let cols = block.hidden_dim() + block.input_dim();
    let g4 = 4 * block.hidden_dim();
    let a_view = ArrayView2::from_shape((batch, cols), a_t).unwrap();
    let mut z = ArrayViewMut2::from_shape((batch, g4), g_t).unwrap();
    general_mat_mul(1.0, &a_view, &block.w.t(), 0.0, &mut z);
}

/// Activations and state update for one step, in place on `g_t`.
fn cell_update(
    block: &LstmBlock,
    g_t: &mut [f64],
    c_prev: &[f64],
    c_next: &mut [f64],
    tc_t: &mut [f64],
    h: &mut [f64],
) {
    let hd = block.hidden_dim();
    let g4 = 4 * hd;
    let bias = block.b.as_slice().unwrap();
    let rows = g_t.chunks_exact_mut(g4);
    let cp = c_prev.chunks_exact(hd);
    let cn = c_next.chunks_exact_mut(hd);
    let th = tc_t.chunks_exact_mut(hd);
    let hh = h.chunks_exact_mut(hd);
    for ((((z, cp), cn), th), hr) in rows.zip(cp).zip(cn).zip(th).zip(hh) {
        for (zk, bk) in z.iter_mut().zip(bias) {
            *zk += bk;
        }
        sigmoid_in_place(&mut z[..2 * hd]);
        tanh_in_place(&mut z[2 * hd..3 * hd]);
        sigmoid_in_place(&mut z[3 * hd..]);
        let (f, rest) = z.split_at(hd);
        let (i, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);
        for k in 0..hd {
            let cv = f[k] * cp[k] + i[k] * g[k];
            cn[k] = cv;
            th[k] = tanh(cv);
            hr[k] = o[k] * th[k];
        }
    }
}

impl BlockTape {
    pub(crate) fn empty() -> Self {
        Self {
            steps: 0,
            batch: 0,
            a: Vec::new(),
            gates: Vec::new(),
            c: Vec::new(),
            tc: Vec::new(),
        }
    }
}

/// Final hidden states (`batch × hidden`, row-major) without keeping a tape.
pub(crate) fn forward(block: &LstmBlock, src: WindowSource<'_>) -> Vec<f64> {
    let hd = block.hidden_dim();
    let cols = hd + block.input_dim();
    let (bsz, steps) = (src.starts.len(), src.len);
    let mut h = vec![0.0; bsz * hd];
    let mut a = vec![0.0; bsz * cols];
    let mut g = vec![0.0; bsz * 4 * hd];
    let mut c_prev = vec![0.0; bsz * hd];
    let mut c_next = vec![0.0; bsz * hd];
    let mut tc = vec![0.0; bsz * hd];
    for t in 0..steps {
        gather(block, &src, t, &h, &mut a);
        preactivate(block, &a, &mut g, bsz);
        cell_update(block, &mut g, &c_prev, &mut c_next, &mut tc, &mut h);
        std::mem::swap(&mut c_prev, &mut c_next);
    }
    h
}

/// Forward pass recording the tape into `tape`, reusing its buffers.
/// Final hidden states go to `h`.
pub(crate) fn forward_taped(
    block: &LstmBlock,
    src: WindowSource<'_>,
    tape: &mut BlockTape,
    h: &mut Vec<f64>,
) {
    let hd = block.hidden_dim();
    let cols = hd + block.input_dim();
    let (bsz, steps) = (src.starts.len(), src.len);
    let g4 = 4 * hd;

    tape.steps = steps;
    tape.batch = bsz;
    // every element below is overwritten before it is read, except the
    // initial cell state which is cleared explicitly
    tape.a.resize(steps * bsz * cols, 0.0);
    tape.gates.resize(steps * bsz * g4, 0.0);
    tape.c.resize((steps + 1) * bsz * hd, 0.0);
    tape.tc.resize(steps * bsz * hd, 0.0);
    tape.c[..bsz * hd].fill(0.0);
    h.clear();
    h.resize(bsz * hd, 0.0);

    for t in 0..steps {
        let a_t = &mut tape.a[t * bsz * cols..(t + 1) * bsz * cols];
        gather(block, &src, t, h, a_t);
        let g_t = &mut tape.gates[t * bsz * g4..(t + 1) * bsz * g4];
        preactivate(block, a_t, g_t, bsz);
        let (c_prev, c_next) = tape.c.split_at_mut((t + 1) * bsz * hd);
        cell_update(
            block,
            g_t,
            &c_prev[t * bsz * hd..],
            &mut c_next[..bsz * hd],
            &mut tape.tc[t * bsz * hd..(t + 1) * bsz * hd],
            h,
        );
    }
}

/// Backpropagation through time from `dh_last` (`batch × hidden`).
/// `dz` is scratch space; `grad` is overwritten.
pub(crate) fn backward(
    block: &LstmBlock,
    tape: &BlockTape,
    dh_last: &[f64],
    dz: &mut Vec<f64>,
    grad: &mut BlockGrad,
) {
    let hd = block.hidden_dim();
    let cols = hd + block.input_dim();
    let g4 = 4 * hd;
    let (bsz, steps) = (tape.batch, tape.steps);

    dz.resize(steps * bsz * g4, 0.0);
    let mut dh = dh_last.to_vec();
    let mut dc = vec![0.0; bsz * hd];
    let w_h = block.w.slice(s![.., ..hd]);

    for t in (0..steps).rev() {
        let gates = &tape.gates[t * bsz * g4..(t + 1) * bsz * g4];
        let c_prev = &tape.c[t * bsz * hd..(t + 1) * bsz * hd];
        let tc = &tape.tc[t * bsz * hd..(t + 1) * bsz * hd];
        let dz_t = &mut dz[t * bsz * g4..(t + 1) * bsz * g4];
        for r in 0..bsz {
            let gr = &gates[r * g4..(r + 1) * g4];
            let (f, rest) = gr.split_at(hd);
            let (i, rest) = rest.split_at(hd);
            let (g, o) = rest.split_at(hd);
            let cp = &c_prev[r * hd..(r + 1) * hd];
            let th = &tc[r * hd..(r + 1) * hd];
            let dhr = &dh[r * hd..(r + 1) * hd];
            let dcr = &mut dc[r * hd..(r + 1) * hd];
            let dzr = &mut dz_t[r * g4..(r + 1) * g4];
            let (dzf, rest) = dzr.split_at_mut(hd);
            let (dzi, rest) = rest.split_at_mut(hd);
            let (dzg, dzo) = rest.split_at_mut(hd);
            for k in 0..hd {
                let dct = dcr[k] + dhr[k] * o[k] * (1.0 - th[k] * th[k]);
                dzf[k] = dct * cp[k] * f[k] * (1.0 - f[k]);
                dzi[k] = dct * g[k] * i[k] * (1.0 - i[k]);
                dzg[k] = dct * i[k] * (1.0 - g[k] * g[k]);
                dzo[k] = dhr[k] * th[k] * o[k] * (1.0 - o[k]);
                dcr[k] = dct * f[k];
            }
        }
        if t > 0 {
            let dz_view = ArrayView2::from_shape((bsz, g4), &*dz_t).unwrap();
            let mut dh_view = ArrayViewMut2::from_shape((bsz, hd), &mut dh[..]).unwrap();
            general_mat_mul(1.0, &dz_view, &w_h, 0.0, &mut dh_view);
        }
    }

    let dz_all = ArrayView2::from_shape((steps * bsz, g4), &dz[..]).unwrap();
    let a_all = ArrayView2::from_shape((steps * bsz, cols), &tape.a[..]).unwrap();
    general_mat_mul(1.0, &dz_all.t(), &a_all, 0.0, &mut grad.w);
    grad.b.fill(0.0);
    for row in dz.chunks_exact(g4) {
        for (bk, v) in grad.b.iter_mut().zip(row) {
            *bk += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::block::lstm_forward;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn batched_forward_matches_scalar_reference() {
        let mut rng = stream_rng(9, 0);
        for (hd, id) in [(1, 1), (4, 1), (7, 2)] {
            let blk = LstmBlock::init(hd, id, true, &mut rng).unwrap();
            let series: Vec<f64> = (0..40 * id).map(|_| rng.random_range(-1.0..1.0)).collect();
            let starts = [0usize, 3, 17, 29];
            let len = 9;
            let src = WindowSource { series: &series, starts: &starts, len };
            let mut tape = BlockTape::empty();
            let mut h_tape = Vec::new();
            forward_taped(&blk, src, &mut tape, &mut h_tape);
            assert_eq!(h_tape, forward(&blk, src));
            // a second, smaller pass through the same tape must not see stale state
            forward_taped(&blk, WindowSource { starts: &starts[1..], ..src }, &mut tape, &mut h_tape);
            assert_eq!(h_tape, forward(&blk, WindowSource { starts: &starts[1..], ..src }));
            forward_taped(&blk, src, &mut tape, &mut h_tape);
            for (r, &s0) in starts.iter().enumerate() {
                let want = lstm_forward(&blk, &series[s0 * id..(s0 + len) * id]).unwrap();
                for k in 0..hd {
                    assert!((h_tape[r * hd + k] - want[k]).abs() < 1e-14);
                }
            }
        }
    }
}
