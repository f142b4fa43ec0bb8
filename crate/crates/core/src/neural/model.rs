use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array1;
use rand::Rng;

use super::batch::{self, BlockGrad, BlockTape, WindowSource};
use super::block::LstmBlock;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// How the pre-scatter hidden-state difference enters the combiner:
/// `h = h_conj_post + s·(h_conj_pre − h_probe_pre)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombinerSign {
    /// `s = +1`
    Prose,
    /// `s = −1`
    Alternative,
}

impl CombinerSign {
    pub fn sign(self) -> f64 {
        match self {
            CombinerSign::Prose => 1.0,
            CombinerSign::Alternative => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CombinerSign::Prose => "prose",
            CombinerSign::Alternative => "alternative",
        }
    }
}

impl std::str::FromStr for CombinerSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prose" | "plus" | "+" => Ok(CombinerSign::Prose),
            "alternative" | "minus" | "-" => Ok(CombinerSign::Alternative),
            other => Err(Error::invalid("combiner", format!("unknown convention {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Blocks for probe_pre, conj_pre and conj_post feeding the combiner.
    ThreeBlock(CombinerSign),
    /// One block on one stream, no combiner.
    SingleBlock,
}

pub const THREE_BLOCK_NAMES: [&str; 3] = ["block_probe_pre", "block_conj_pre", "block_conj_post"];
pub const SINGLE_BLOCK_NAMES: [&str; 1] = ["block_stream"];

impl Topology {
    pub fn stream_count(self) -> usize {
        self.block_names().len()
    }

    pub fn block_names(self) -> &'static [&'static str] {
        match self {
            Topology::ThreeBlock(_) => &THREE_BLOCK_NAMES,
            Topology::SingleBlock => &SINGLE_BLOCK_NAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub w: Array1<f64>,
    pub b: f64,
}

pub fn head_forward(head: &LinearHead, h: &[f64]) -> Result<f64> {
    if h.len() != head.w.len() {
        return Err(Error::DimensionMismatch {
            context: "linear head",
            expected: head.w.len(),
            actual: h.len(),
        });
    }
    Ok(head.w.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + head.b)
}

/// `h_conj_post + (h_conj_pre − h_probe_pre)`.
pub fn combine_hidden(h_probe_pre: &[f64], h_conj_pre: &[f64], h_conj_post: &[f64]) -> Result<Vec<f64>> {
    combine_hidden_signed(h_probe_pre, h_conj_pre, h_conj_post, CombinerSign::Prose)
}

pub fn combine_hidden_signed(
    h_probe_pre: &[f64],
    h_conj_pre: &[f64],
    h_conj_post: &[f64],
    sign: CombinerSign,
) -> Result<Vec<f64>> {
    let n = h_conj_post.len();
    for v in [h_probe_pre, h_conj_pre] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                context: "combiner",
                expected: n,
                actual: v.len(),
            });
        }
    }
    let s = sign.sign();
    Ok((0..n)
        .map(|k| h_conj_post[k] + s * (h_conj_pre[k] - h_probe_pre[k]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub topology: Topology,
    pub hidden: usize,
    pub input_dim: usize,
    pub window_len: usize,
    pub forget_bias_one: bool,
}

impl ModelSpec {
    pub fn three_block(hidden: usize, window_len: usize, sign: CombinerSign) -> Self {
        Self {
            topology: Topology::ThreeBlock(sign),
            hidden,
            input_dim: 1,
            window_len,
            forget_bias_one: true,
        }
    }

    pub fn single_block(hidden: usize, window_len: usize) -> Self {
        Self {
            topology: Topology::SingleBlock,
            ..Self::three_block(hidden, window_len, CombinerSign::Prose)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.input_dim == 0 || self.window_len == 0 {
            return Err(Error::invalid(
                "model",
                "hidden, input and window sizes must be positive",
            ));
        }
        Ok(())
    }
}

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

/// LSTM blocks, combiner and head. Each instance carries an identity and a
/// generation counter that advances whenever parameters are borrowed
/// mutably, so gradients are never taken against a stale forward pass.
#[derive(Debug)]
pub struct RecoveryModel {
    spec: ModelSpec,
    blocks: Vec<LstmBlock>,
    head: LinearHead,
    id: u64,
    generation: u64,
}

impl Clone for RecoveryModel {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec,
            blocks: self.blocks.clone(),
            head: self.head.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for RecoveryModel {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.blocks == other.blocks && self.head == other.head
    }
}

impl RecoveryModel {
    /// Seeded initialization; see [`LstmBlock::init`]. Head weights use the
    /// same ±1/√hidden range and a zero bias.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(seed, streams::INIT);
        let blocks = (0..spec.topology.stream_count())
            .map(|_| LstmBlock::init(spec.hidden, spec.input_dim, spec.forget_bias_one, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let a = 1.0 / (spec.hidden as f64).sqrt();
        let w = (0..spec.hidden).map(|_| rng.random_range(-a..=a)).collect();
        Self::from_parts(spec, blocks, LinearHead { w, b: 0.0 })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let blocks = (0..spec.topology.stream_count())
            .map(|_| LstmBlock::zeros(spec.hidden, spec.input_dim))
            .collect::<Result<Vec<_>>>()?;
        let head = LinearHead {
            w: Array1::zeros(spec.hidden),
            b: 0.0,
        };
        Self::from_parts(spec, blocks, head)
    }

    pub fn from_parts(spec: ModelSpec, blocks: Vec<LstmBlock>, head: LinearHead) -> Result<Self> {
        spec.validate()?;
        if blocks.len() != spec.topology.stream_count() {
            return Err(Error::DimensionMismatch {
                context: "block count",
                expected: spec.topology.stream_count(),
                actual: blocks.len(),
            });
        }
        for b in &blocks {
            if b.hidden_dim() != spec.hidden || b.input_dim() != spec.input_dim {
                return Err(Error::invalid(
                    "blocks",
                    "all blocks must share hidden and input dimensions",
                ));
            }
        }
        if head.w.len() != spec.hidden {
            return Err(Error::DimensionMismatch {
                context: "head weights",
                expected: spec.hidden,
                actual: head.w.len(),
            });
        }
        Ok(Self {
            spec,
            blocks,
            head,
            id: fresh_id(),
            generation: 0,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn topology(&self) -> Topology {
        self.spec.topology
    }

    pub fn hidden_dim(&self) -> usize {
        self.spec.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn window_len(&self) -> usize {
        self.spec.window_len
    }

    pub fn blocks(&self) -> &[LstmBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    pub fn blocks_mut(&mut self) -> &mut [LstmBlock] {
        self.generation += 1;
        &mut self.blocks
    }

    pub fn head_mut(&mut self) -> &mut LinearHead {
        self.generation += 1;
        &mut self.head
    }

    /// Every parameter tensor in a fixed order: per block `W` then `b`,
    /// then head `w`, then head `b`.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.push(b.w.as_slice_mut().unwrap());
            out.push(b.b.as_slice_mut().unwrap());
        }
        out.push(self.head.w.as_slice_mut().unwrap());
        out.push(std::slice::from_mut(&mut self.head.b));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.push(b.w.as_slice().unwrap());
            out.push(b.b.as_slice().unwrap());
        }
        out.push(self.head.w.as_slice().unwrap());
        out.push(std::slice::from_ref(&self.head.b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn sources<'a>(&self, series: &[&'a [f64]], starts: &'a [usize]) -> Result<Vec<WindowSource<'a>>> {
        let want = self.spec.topology.stream_count();
        if series.len() != want {
            return Err(Error::DimensionMismatch {
                context: "model input streams",
                expected: want,
                actual: series.len(),
            });
        }
        if starts.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let (w, id) = (self.spec.window_len, self.spec.input_dim);
        let last = starts.iter().copied().max().unwrap_or(0) + w;
        for s in series {
            if s.len() % id != 0 || s.len() / id < last {
                return Err(Error::DimensionMismatch {
                    context: "window length",
                    expected: last * id,
                    actual: s.len(),
                });
            }
        }
        Ok(series
            .iter()
            .map(|&s| WindowSource {
                series: s,
                starts,
                len: w,
            })
            .collect())
    }

    fn combine_rows(&self, hidden: &[Vec<f64>]) -> Vec<f64> {
        match self.spec.topology {
            Topology::SingleBlock => hidden[0].clone(),
            Topology::ThreeBlock(sign) => {
                let s = sign.sign();
                let (pp, cp, cq) = (&hidden[0], &hidden[1], &hidden[2]);
                (0..cq.len()).map(|k| cq[k] + s * (cp[k] - pp[k])).collect()
            }
        }
    }

    fn head_rows(&self, combined: &[f64]) -> Vec<f64> {
        combined
            .chunks_exact(self.spec.hidden)
            .map(|h| self.head.w.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.head.b)
            .collect()
    }

    /// Predictions for windows starting at `starts` in each input series,
    /// without retaining intermediate state.
    pub fn predict(&self, series: &[&[f64]], starts: &[usize]) -> Result<Vec<f64>> {
        let srcs = self.sources(series, starts)?;
        let hidden: Vec<Vec<f64>> = self
            .blocks
            .iter()
            .zip(srcs)
            .map(|(b, src)| batch::forward(b, src))
            .collect();
        Ok(self.head_rows(&self.combine_rows(&hidden)))
    }

    /// Forward pass that keeps everything the backward pass needs.
    pub fn forward_cached(&self, series: &[&[f64]], starts: &[usize]) -> Result<ForwardCache> {
        let mut cache = ForwardCache::empty();
        self.forward_cached_into(series, starts, &mut cache)?;
        Ok(cache)
    }

    /// As [`forward_cached`](Self::forward_cached), reusing the buffers of an
    /// existing cache.
    pub fn forward_cached_into(
        &self,
        series: &[&[f64]],
        starts: &[usize],
        cache: &mut ForwardCache,
    ) -> Result<()> {
        let srcs = self.sources(series, starts)?;
        let n = self.blocks.len();
        cache.tapes.resize_with(n, BlockTape::empty);
        cache.hidden.resize_with(n, Vec::new);
        for (((b, src), tape), h) in self
            .blocks
            .iter()
            .zip(srcs)
            .zip(cache.tapes.iter_mut())
            .zip(cache.hidden.iter_mut())
        {
            batch::forward_taped(b, src, tape, h);
        }
        cache.combined = self.combine_rows(&cache.hidden);
        cache.preds = self.head_rows(&cache.combined);
        cache.model_id = self.id;
        cache.generation = self.generation;
        cache.batch = starts.len();
        Ok(())
    }
}

/// State retained between a forward pass and its backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    model_id: u64,
    generation: u64,
    batch: usize,
    hidden: Vec<Vec<f64>>,
    combined: Vec<f64>,
    tapes: Vec<BlockTape>,
    scratch: Vec<f64>,
    pub preds: Vec<f64>,
}

impl ForwardCache {
    /// A cache holding no pass; backward on it is rejected as stale.
    pub fn empty() -> Self {
        Self {
            model_id: 0,
            generation: 0,
            batch: 0,
            hidden: Vec::new(),
            combined: Vec::new(),
            tapes: Vec::new(),
            scratch: Vec::new(),
            preds: Vec::new(),
        }
    }
}

/// Gradients in the same layout as [`RecoveryModel::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<BlockGrad>,
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

impl Gradients {
    pub fn zeros_like(model: &RecoveryModel) -> Self {
        Self {
            blocks: model.blocks.iter().map(BlockGrad::zeros_like).collect(),
            head_w: Array1::zeros(model.spec.hidden),
            head_b: 0.0,
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.push(b.w.as_slice().unwrap());
            out.push(b.b.as_slice().unwrap());
        }
        out.push(self.head_w.as_slice().unwrap());
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.push(b.w.as_slice_mut().unwrap());
            out.push(b.b.as_slice_mut().unwrap());
        }
        out.push(self.head_w.as_slice_mut().unwrap());
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

/// Single-window prediction. `windows` holds one slice per input stream,
/// each `window_len · input_dim` long.
pub fn model_forward(model: &RecoveryModel, windows: &[&[f64]]) -> Result<f64> {
    check_single(model, windows)?;
    Ok(model.predict(windows, &[0])?[0])
}

/// Single-window prediction plus the cache for [`model_backward`].
pub fn model_forward_cached(model: &RecoveryModel, windows: &[&[f64]]) -> Result<ForwardCache> {
    check_single(model, windows)?;
    model.forward_cached(windows, &[0])
}

fn check_single(model: &RecoveryModel, windows: &[&[f64]]) -> Result<()> {
    let want = model.window_len() * model.input_dim();
    for w in windows {
        if w.len() != want {
            return Err(Error::DimensionMismatch {
                context: "model window",
                expected: want,
                actual: w.len(),
            });
        }
    }
    Ok(())
}

/// Exact gradients of `Σ_b dloss_dpred[b] · pred[b]` with respect to every
/// parameter.
pub fn model_backward(
    model: &RecoveryModel,
    cache: &ForwardCache,
    dloss_dpred: &[f64],
) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(model);
    let mut scratch = Vec::new();
    backward_impl(model, cache, dloss_dpred, &mut scratch, &mut grads)?;
    Ok(grads)
}

/// As [`model_backward`], overwriting `grads` and reusing the cache's
/// scratch space.
pub fn model_backward_into(
    model: &RecoveryModel,
    cache: &mut ForwardCache,
    dloss_dpred: &[f64],
    grads: &mut Gradients,
) -> Result<()> {
    let mut scratch = std::mem::take(&mut cache.scratch);
    let out = backward_impl(model, cache, dloss_dpred, &mut scratch, grads);
    cache.scratch = scratch;
    out
}

fn backward_impl(
    model: &RecoveryModel,
    cache: &ForwardCache,
    dloss_dpred: &[f64],
    scratch: &mut Vec<f64>,
    grads: &mut Gradients,
) -> Result<()> {
    if cache.model_id != model.id {
        return Err(Error::StaleCache("cache belongs to a different model"));
    }
    if cache.generation != model.generation {
        return Err(Error::StaleCache("parameters changed since the forward pass"));
    }
    if dloss_dpred.len() != cache.batch {
        return Err(Error::DimensionMismatch {
            context: "prediction gradient",
            expected: cache.batch,
            actual: dloss_dpred.len(),
        });
    }
    if grads.blocks.len() != model.blocks.len() || grads.head_w.len() != model.spec.hidden {
        return Err(Error::DimensionMismatch {
            context: "gradient buffers",
            expected: model.param_count(),
            actual: grads.tensors().iter().map(|t| t.len()).sum(),
        });
    }
    let hd = model.spec.hidden;

    grads.head_w.fill(0.0);
    grads.head_b = 0.0;
    let mut dcomb = vec![0.0; cache.batch * hd];
    for (r, &d) in dloss_dpred.iter().enumerate() {
        let h = &cache.combined[r * hd..(r + 1) * hd];
        for k in 0..hd {
            grads.head_w[k] += d * h[k];
            dcomb[r * hd + k] = d * model.head.w[k];
        }
        grads.head_b += d;
    }

    let upstream: Vec<Vec<f64>> = match model.spec.topology {
        Topology::SingleBlock => vec![dcomb],
        Topology::ThreeBlock(sign) => {
            let s = sign.sign();
            vec![
                dcomb.iter().map(|v| -s * v).collect(),
                dcomb.iter().map(|v| s * v).collect(),
                dcomb,
            ]
        }
    };
    for (((b, tape), dh), g) in model
        .blocks
        .iter()
        .zip(&cache.tapes)
        .zip(&upstream)
        .zip(grads.blocks.iter_mut())
    {
        batch::backward(b, tape, dh, scratch, g);
    }
    Ok(())
}
