use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use super::adam::{adam_step, AdamState};
use super::data::{
    make_windows, normalize, split_dataset, Affine, NormParams, SplitSpec, Splits, WindowDataset, WindowRule,
};
use super::loss::LossKind;
use crate::error::{Error, Result};
use crate::neural::{
    model_backward_into, Checkpoint, CombinerSign, ForwardCache, Gradients, ModelSpec, RecoveryModel, Section,
};
use crate::rng::derive_seed;
use crate::trace::{validate_traceset, StreamId, Trace, TraceSet};

/// Windows evaluated per call when only predictions are needed.
const EVAL_CHUNK: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub window_len: usize,
    pub hidden_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub combiner: CombinerSign,
    pub forget_bias_one: bool,
    /// Rescale the global gradient norm down to this value when exceeded.
    pub clip_norm: Option<f64>,
    pub window_rule: WindowRule,
    pub split: SplitSpec,
    /// Skip the range checks below.
    pub allow_out_of_range: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            window_len: 50,
            hidden_len: 32,
            batch_size: 500,
            epochs: 100,
            learning_rate: 0.001,
            loss: LossKind::Mse,
            seed: 0,
            combiner: CombinerSign::Prose,
            forget_bias_one: true,
            clip_norm: None,
            window_rule: WindowRule::DropLast,
            split: SplitSpec::default(),
            allow_out_of_range: false,
        }
    }
}

impl Hyperparams {
    pub const WINDOW_RANGE: (usize, usize) = (2, 100);
    pub const HIDDEN_RANGE: (usize, usize) = (2, 64);
    pub const BATCH_RANGE: (usize, usize) = (100, 1000);
    pub const EPOCH_RANGE: (usize, usize) = (10, 100);
    pub const LR_RANGE: (f64, f64) = (0.001, 0.1);

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.window_len == 0 || self.hidden_len == 0 || self.batch_size == 0 {
            return Err(Error::invalid("hyperparams", "window, hidden and batch sizes must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive and finite"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip_norm", "must be positive"));
            }
        }
        if self.allow_out_of_range {
            return Ok(());
        }
        let in_range = |name: &'static str, v: usize, (lo, hi): (usize, usize)| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{v} outside [{lo}, {hi}]")))
            }
        };
        in_range("window_len", self.window_len, Self::WINDOW_RANGE)?;
        in_range("hidden_len", self.hidden_len, Self::HIDDEN_RANGE)?;
        in_range("batch_size", self.batch_size, Self::BATCH_RANGE)?;
        in_range("epochs", self.epochs, Self::EPOCH_RANGE)?;
        let (lo, hi) = Self::LR_RANGE;
        if !(lo..=hi).contains(&self.learning_rate) {
            return Err(Error::invalid(
                "learning_rate",
                format!("{} outside [{lo}, {hi}]", self.learning_rate),
            ));
        }
        Ok(())
    }

    pub fn three_block_spec(&self) -> ModelSpec {
        ModelSpec {
            forget_bias_one: self.forget_bias_one,
            ..ModelSpec::three_block(self.hidden_len, self.window_len, self.combiner)
        }
    }

    pub fn single_block_spec(&self) -> ModelSpec {
        ModelSpec {
            forget_bias_one: self.forget_bias_one,
            ..ModelSpec::single_block(self.hidden_len, self.window_len)
        }
    }

    /// Flat `train.*` entries for a checkpoint header.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(format!("train.{k}"), v);
        };
        put("window_len", self.window_len.to_string());
        put("hidden_len", self.hidden_len.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("loss", self.loss.name().into());
        put("seed", self.seed.to_string());
        put("combiner", self.combiner.name().into());
        put("forget_bias_one", self.forget_bias_one.to_string());
        put("clip_norm", self.clip_norm.map_or("none".into(), |c| c.to_string()));
        put("window_rule", self.window_rule.name().into());
        put(
            "split",
            format!("{},{},{}", self.split.train_frac, self.split.val_frac, self.split.test_frac),
        );
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub loss: LossKind,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub test_loss: f64,
    pub wall_time_s: f64,
}

impl TrainingReport {
    /// `epoch,train_loss,val_loss`, one row per epoch. Wall time is left
    /// out so the file is reproducible.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss")?;
        for (e, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            writeln!(w, "{},{t},{v}", e + 1)?;
        }
        Ok(())
    }

    /// `|train − val| / val` at the last epoch.
    pub fn final_gap(&self) -> Option<f64> {
        let (t, v) = (*self.train_loss.last()?, *self.val_loss.last()?);
        Some((t - v).abs() / v)
    }
}

/// Predictions for every window of `ds`, in order.
pub fn predict_dataset(model: &RecoveryModel, ds: &WindowDataset) -> Result<Vec<f64>> {
    let series = ds.series();
    let mut out = Vec::with_capacity(ds.count());
    for chunk in ds.starts().chunks(EVAL_CHUNK) {
        out.extend(model.predict(&series, chunk)?);
    }
    Ok(out)
}

/// Mean loss over all of `ds` with the parameters untouched.
pub fn dataset_loss(model: &RecoveryModel, ds: &WindowDataset, kind: LossKind) -> Result<f64> {
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = predict_dataset(model, ds)?;
    Ok(kind.eval(&pred, &ds.targets())?.0)
}

/// The epoch → batch → step loop over prepared splits.
pub fn fit(spec: ModelSpec, splits: &Splits, hp: &Hyperparams) -> Result<(RecoveryModel, TrainingReport)> {
    hp.validate()?;
    if splits.train.window_len() != spec.window_len {
        return Err(Error::DimensionMismatch {
            context: "dataset window length",
            expected: spec.window_len,
            actual: splits.train.window_len(),
        });
    }
    let clock = Instant::now();
    let mut model = RecoveryModel::new(spec, hp.seed)?;
    let mut adam = AdamState::for_tensors(&model.tensors());
    let mut grads = Gradients::zeros_like(&model);
    let mut cache = ForwardCache::empty();
    let train = &splits.train;
    let series = train.series();
    let mut train_curve = Vec::with_capacity(hp.epochs);
    let mut val_curve = Vec::with_capacity(hp.epochs);

    for epoch in 1..=hp.epochs {
        let batches = super::data::batch_iter(
            train.count(),
            hp.batch_size,
            true,
            derive_seed(hp.seed, epoch as u64),
        )?;
        let mut sum = 0.0;
        let mut seen = 0usize;
        let mut starts = Vec::with_capacity(hp.batch_size);
        let mut target = Vec::with_capacity(hp.batch_size);
        for (bi, idx) in batches.iter().enumerate() {
            starts.clear();
            starts.extend(idx.iter().map(|&i| train.starts()[i]));
            target.clear();
            target.extend(idx.iter().map(|&i| train.target(i)));

            model.forward_cached_into(&series, &starts, &mut cache)?;
            let (loss, dpred) = hp.loss.eval(&cache.preds, &target)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            model_backward_into(&model, &mut cache, &dpred, &mut grads)?;
            if let Some(c) = hp.clip_norm {
                let n = grads.global_norm();
                if n > c {
                    grads.scale(c / n);
                }
            }
            adam_step(&mut model.tensors_mut(), &grads.tensors(), &mut adam, hp.learning_rate)?;
            sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let train_loss = sum / seen as f64;
        let val_loss = dataset_loss(&model, &splits.val, hp.loss)?;
        // a batch index one past the last training batch marks validation
        if !val_loss.is_finite() && !splits.val.is_empty() {
            return Err(Error::NonFiniteLoss { epoch, batch: batches.len() });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        train_curve.push(train_loss);
        val_curve.push(val_loss);
    }

    let test_loss = dataset_loss(&model, &splits.test, hp.loss)?;
    let report = TrainingReport {
        loss: hp.loss,
        train_loss: train_curve,
        val_loss: val_curve,
        test_loss,
        wall_time_s: clock.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: RecoveryModel,
    pub norm: NormParams,
    pub report: TrainingReport,
}

impl TrainingOutcome {
    /// Model, normalization and hyperparameters in one container.
    pub fn checkpoint(&self, hp: &Hyperparams) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone());
        ck.meta.extend(hp.to_meta());
        attach_norm(&mut ck, &self.norm);
        ck
    }
}

/// Train the three-block model to predict `probe_truth` from the two
/// pre-scatter streams and the disrupted conjugate.
pub fn run_training(ts: &TraceSet, hp: &Hyperparams) -> Result<TrainingOutcome> {
    hp.validate()?;
    validate_traceset(ts).map_err(|v| {
        Error::Misaligned(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
    })?;
    ts.require(StreamId::ProbeTruth)?;
    let (normed, norm) = normalize(ts)?;
    let ds = make_windows(&normed, hp.window_len, StreamId::ProbeTruth, hp.window_rule)?;
    let splits = split_dataset(&ds, &hp.split)?;
    let (model, report) = fit(hp.three_block_spec(), &splits, hp)?;
    Ok(TrainingOutcome { model, norm, report })
}

/// Test-split predictions placed on the original time axis:
/// `trace[k]` estimates the target at sample `offset + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub trace: Trace,
    pub offset: usize,
}

/// Predict the test windows of already normalized input series and map the
/// predictions back through `out`.
pub fn reconstruct_series(
    model: &RecoveryModel,
    inputs: &[&[f64]],
    out: Affine,
    sample_rate_hz: f64,
    rule: WindowRule,
    split: &SplitSpec,
) -> Result<Reconstruction> {
    let len = inputs.first().map_or(0, |s| s.len());
    let w = model.window_len();
    let count = rule.count(len, w)?;
    let [_, _, test] = split.ranges(count)?;
    let starts: Vec<usize> = test.clone().collect();
    let mut pred = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(EVAL_CHUNK) {
        pred.extend(model.predict(inputs, chunk)?.into_iter().map(|y| out.invert(y)));
    }
    Ok(Reconstruction {
        trace: Trace::new(pred, sample_rate_hz, "probe_reconstructed")?,
        offset: test.start + w,
    })
}

/// Reconstruct the probe over the test split of `ts` using the
/// normalization fitted at training time.
pub fn reconstruct(
    model: &RecoveryModel,
    ts: &TraceSet,
    norm: &NormParams,
    rule: WindowRule,
    split: &SplitSpec,
) -> Result<Reconstruction> {
    let map = |id: StreamId, t: &Trace| -> Result<Vec<f64>> {
        let a = norm.get(id)?;
        Ok(t.samples().iter().map(|&x| a.apply(x)).collect())
    };
    let inputs = [
        map(StreamId::ProbePre, &ts.probe_pre)?,
        map(StreamId::ConjPre, &ts.conj_pre)?,
        map(StreamId::ConjPost, &ts.conj_post)?,
    ];
    let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    reconstruct_series(
        model,
        &refs,
        norm.get(StreamId::ProbeTruth)?,
        ts.sample_rate_hz(),
        rule,
        split,
    )
}

const NORM_SECTION: &str = "norm.affine";
const NORM_STREAMS_KEY: &str = "norm.streams";

/// Store `norm` as an extra `[n, 2]` section of `(lo, span)` rows plus the
/// stream names in the header.
pub fn attach_norm(ck: &mut Checkpoint, norm: &NormParams) {
    let names: Vec<&str> = norm.streams.iter().map(|(id, _)| id.name()).collect();
    ck.meta.insert(NORM_STREAMS_KEY.into(), names.join(","));
    ck.extra.retain(|s| s.name != NORM_SECTION);
    ck.extra.push(Section {
        name: NORM_SECTION.into(),
        dims: vec![norm.streams.len(), 2],
        data: norm.streams.iter().flat_map(|(_, a)| [a.lo, a.span]).collect(),
    });
}

pub fn read_norm(ck: &Checkpoint) -> Result<NormParams> {
    let missing = || Error::MalformedHeader("checkpoint carries no normalization".into());
    let names = ck.meta.get(NORM_STREAMS_KEY).ok_or_else(missing)?;
    let sec = ck.extra(NORM_SECTION).ok_or_else(missing)?;
    let ids = names
        .split(',')
        .map(|n| {
            StreamId::ALL
                .into_iter()
                .find(|id| id.name() == n)
                .ok_or_else(|| Error::MalformedHeader(format!("unknown stream {n:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if sec.data.len() != 2 * ids.len() {
        return Err(Error::MalformedHeader("normalization section size".into()));
    }
    Ok(NormParams {
        streams: ids
            .into_iter()
            .zip(sec.data.chunks_exact(2))
            .map(|(id, c)| (id, Affine { lo: c[0], span: c[1] }))
            .collect(),
    })
}
