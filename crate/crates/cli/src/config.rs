//! Sectioned `key = value` configuration.
//!
//! ```text
//! # comment
//! [train]
//! epochs = 20
//! ```
//!
//! Keys are addressed as `section.key`. Later assignments win, so files
//! are applied first and command-line overrides after them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qcorr_core::dsp::{BandSpec, WelchParams};
use qcorr_core::eval::EvalOptions;
use qcorr_core::rng::derive_seed;
use qcorr_core::sim::ScenarioParams;
use qcorr_core::trace::{DigitizationSpec, TraceFormat};
use qcorr_core::training::Hyperparams;

use crate::CliError;

pub const SEED_ENV: &str = "QCORR_SEED";

/// Salt separating the held-out evaluation recording from the training one.
const EVAL_SALT: u64 = 0xE7A1;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scenario: ScenarioParams,
    pub hp: Hyperparams,
    /// Length of the separate recording used by `evaluate`.
    pub eval_length: usize,
    pub eval: EvalOptions,
    /// Joint-histogram bins for `verify`.
    pub verify_bins: usize,
    pub out_dir: PathBuf,
    pub format: TraceFormat,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenario: ScenarioParams::default(),
            hp: Hyperparams::default(),
            eval_length: 1_000_000,
            eval: EvalOptions::default(),
            verify_bins: qcorr_core::info::DEFAULT_BINS,
            out_dir: PathBuf::from("out"),
            format: TraceFormat::Binary,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>, CliError> {
    if v == "none" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn core_err(key: &str, e: qcorr_core::Error) -> CliError {
    CliError::Config(format!("{key}: {e}"))
}

impl PipelineConfig {
    /// Defaults, then `file` if given, then `overrides` in order, then the
    /// seed environment variable.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(p) = file {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.set("global.seed", s.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            self.set(&key, v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let pair = &mut self.scenario.pair;
        let sc = &mut self.scenario.scatterer;
        let hp = &mut self.hp;
        match key {
            "global.seed" => self.seed = parse(key, v)?,
            "paths.out_dir" => self.out_dir = PathBuf::from(v),
            "paths.format" => self.format = v.parse().map_err(|e| core_err(key, e))?,

            "sim.length" => pair.length = parse(key, v)?,
            "sim.squeezing_db" => pair.squeezing_db = parse(key, v)?,
            "sim.mean_probe" => pair.mean_probe = parse(key, v)?,
            "sim.mean_conj" => pair.mean_conj = parse(key, v)?,
            "sim.correlation_bandwidth_hz" => pair.correlation_bandwidth_hz = parse(key, v)?,
            "sim.sample_rate_hz" => pair.sample_rate_hz = parse(key, v)?,
            "sim.shared_rms" => pair.shared_rms = parse(key, v)?,
            "sim.detector_bandwidth_hz" => pair.detector_bandwidth_hz = parse_opt(key, v)?,
            "sim.shot_noise_var_per_level" => pair.shot_noise_var_per_level = parse(key, v)?,
            "sim.bits" => {
                pair.digitization = match parse_opt::<u32>(key, v)? {
                    Some(b) => Some(DigitizationSpec::new(b).map_err(|e| core_err(key, e))?),
                    None => None,
                }
            }

            "scatterer.transmission" => sc.transmission = parse(key, v)?,
            "scatterer.smoothing_tau_s" => sc.smoothing_tau_s = parse(key, v)?,
            "scatterer.electronic_noise_rms" => sc.electronic_noise_rms = parse(key, v)?,
            "scatterer.delay_samples" => sc.delay_samples = parse(key, v)?,

            "band.lo_hz" => {
                pair.band.f_lo_hz = parse(key, v)?;
                self.eval.band = pair.band;
            }
            "band.hi_hz" => {
                pair.band.f_hi_hz = parse(key, v)?;
                self.eval.band = pair.band;
            }

            "train.window_len" => hp.window_len = parse(key, v)?,
            "train.hidden_len" => hp.hidden_len = parse(key, v)?,
            "train.batch_size" => hp.batch_size = parse(key, v)?,
            "train.epochs" => hp.epochs = parse(key, v)?,
            "train.learning_rate" => hp.learning_rate = parse(key, v)?,
            "train.loss" => hp.loss = v.parse().map_err(|e| core_err(key, e))?,
            "train.combiner" => hp.combiner = v.parse().map_err(|e| core_err(key, e))?,
            "train.forget_bias_one" => hp.forget_bias_one = parse_bool(key, v)?,
            "train.clip_norm" => hp.clip_norm = parse_opt(key, v)?,
            "train.window_rule" => hp.window_rule = v.parse().map_err(|e| core_err(key, e))?,
            "train.allow_out_of_range" => hp.allow_out_of_range = parse_bool(key, v)?,
            "train.train_frac" => hp.split.train_frac = parse(key, v)?,
            "train.val_frac" => hp.split.val_frac = parse(key, v)?,
            "train.test_frac" => hp.split.test_frac = parse(key, v)?,

            "eval.length" => self.eval_length = parse(key, v)?,
            "eval.bins" => self.eval.bins = parse(key, v)?,
            "eval.max_shift_samples" => self.eval.max_shift_samples = parse(key, v)?,
            "eval.segment_length" => self.eval.welch.segment_length = parse(key, v)?,
            "eval.overlap" => self.eval.welch.overlap_fraction = parse(key, v)?,
            "eval.filter_before_mi" => self.eval.filter_before_mi = parse_bool(key, v)?,

            "verify.bins" => self.verify_bins = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let e = |what: &str, err: qcorr_core::Error| CliError::Config(format!("{what}: {err}"));
        BandSpec::new(self.scenario.pair.band.f_lo_hz, self.scenario.pair.band.f_hi_hz)
            .map_err(|x| e("band", x))?;
        self.training_scenario().pair.validate().map_err(|x| e("sim", x))?;
        self.scenario.scatterer.validate().map_err(|x| e("scatterer", x))?;
        self.hyperparams().validate().map_err(|x| e("train", x))?;
        self.eval.welch.validate().map_err(|x| e("eval", x))?;
        if self.eval.bins < 2 || self.verify_bins < 2 {
            return Err(CliError::Config("histogram bins must be at least 2".into()));
        }
        if self.eval_length == 0 {
            return Err(CliError::Config("eval.length must be positive".into()));
        }
        Ok(())
    }

    pub fn training_scenario(&self) -> ScenarioParams {
        let mut s = self.scenario.clone();
        s.pair.seed = self.seed;
        s
    }

    /// A fresh recording with the same physics, never seen in training.
    pub fn evaluation_scenario(&self) -> ScenarioParams {
        let mut s = self.scenario.clone();
        s.pair.seed = derive_seed(self.seed, EVAL_SALT);
        s.pair.length = self.eval_length;
        s
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            seed: self.seed,
            ..self.hp.clone()
        }
    }

    pub fn welch(&self) -> WelchParams {
        self.eval.welch
    }

    /// The effective configuration in the same format it is read from.
    pub fn to_text(&self) -> String {
        let p = &self.scenario.pair;
        let s = &self.scenario.scatterer;
        let hp = &self.hp;
        let opt = |o: Option<f64>| o.map_or("none".to_string(), |x| x.to_string());
        let mut t = String::new();
        let _ = write!(
            t,
            "[global]\nseed = {}\n\n[paths]\nout_dir = {}\nformat = {}\n\n",
            self.seed,
            self.out_dir.display(),
            match self.format {
                TraceFormat::Csv => "csv",
                TraceFormat::Binary => "binary",
            }
        );
        let _ = write!(
            t,
            "[sim]\nlength = {}\nsqueezing_db = {}\nmean_probe = {}\nmean_conj = {}\n\
             correlation_bandwidth_hz = {}\nsample_rate_hz = {}\nshared_rms = {}\n\
             detector_bandwidth_hz = {}\nshot_noise_var_per_level = {}\nbits = {}\n\n",
            p.length,
            p.squeezing_db,
            p.mean_probe,
            p.mean_conj,
            p.correlation_bandwidth_hz,
            p.sample_rate_hz,
            p.shared_rms,
            opt(p.detector_bandwidth_hz),
            p.shot_noise_var_per_level,
            p.digitization.map_or("none".to_string(), |d| d.bits().to_string()),
        );
        let _ = write!(
            t,
            "[scatterer]\ntransmission = {}\nsmoothing_tau_s = {}\nelectronic_noise_rms = {}\ndelay_samples = {}\n\n",
            s.transmission, s.smoothing_tau_s, s.electronic_noise_rms, s.delay_samples
        );
        let _ = write!(t, "[band]\nlo_hz = {}\nhi_hz = {}\n\n", p.band.f_lo_hz, p.band.f_hi_hz);
        let _ = write!(
            t,
            "[train]\nwindow_len = {}\nhidden_len = {}\nbatch_size = {}\nepochs = {}\nlearning_rate = {}\n\
             loss = {}\ncombiner = {}\nforget_bias_one = {}\nclip_norm = {}\nwindow_rule = {}\n\
             allow_out_of_range = {}\ntrain_frac = {}\nval_frac = {}\ntest_frac = {}\n\n",
            hp.window_len,
            hp.hidden_len,
            hp.batch_size,
            hp.epochs,
            hp.learning_rate,
            hp.loss.name(),
            hp.combiner.name(),
            hp.forget_bias_one,
            opt(hp.clip_norm),
            hp.window_rule.name(),
            hp.allow_out_of_range,
            hp.split.train_frac,
            hp.split.val_frac,
            hp.split.test_frac,
        );
        let e = &self.eval;
        let _ = write!(
            t,
            "[eval]\nlength = {}\nbins = {}\nmax_shift_samples = {}\nsegment_length = {}\noverlap = {}\n\
             filter_before_mi = {}\n\n[verify]\nbins = {}\n",
            self.eval_length,
            e.bins,
            e.max_shift_samples,
            e.welch.segment_length,
            e.welch.overlap_fraction,
            e.filter_before_mi,
            self.verify_bins,
        );
        t
    }
}

/// Split `--section.key=value` arguments into pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    args.iter()
        .map(|a| {
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| CliError::Config(format!("override {a:?} must start with --")))?;
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {a:?} must be --key=value")))?;
            Ok((k.to_string(), v.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let mut c = PipelineConfig::default();
        c.apply_text("# top\n[train]\nepochs = 12 # short\nloss = mae\n\n[sim]\nbits = none\n")
            .unwrap();
        assert_eq!(c.hp.epochs, 12);
        assert_eq!(c.hp.loss, qcorr_core::training::LossKind::Mae);
        assert!(c.scenario.pair.digitization.is_none());
    }

    #[test]
    fn last_writer_wins() {
        let mut c = PipelineConfig::default();
        c.apply_text("[train]\nepochs = 12\nepochs = 20\n").unwrap();
        c.set("train.epochs", "30").unwrap();
        assert_eq!(c.hp.epochs, 30);
    }

    #[test]
    fn errors_are_config_errors() {
        let mut c = PipelineConfig::default();
        assert!(matches!(c.set("train.nope", "1"), Err(CliError::Config(_))));
        assert!(matches!(c.set("train.epochs", "many"), Err(CliError::Config(_))));
        assert!(matches!(c.apply_text("[train]\nepochs\n"), Err(CliError::Config(_))));
        c.set("train.epochs", "500").unwrap();
        assert!(c.validate().is_err());
        c.set("train.allow_out_of_range", "true").unwrap();
        assert!(c.validate().is_ok());
    }

    #[test]
    fn dumped_text_reads_back() {
        let mut c = PipelineConfig::default();
        c.set("train.clip_norm", "2.5").unwrap();
        c.set("sim.detector_bandwidth_hz", "none").unwrap();
        c.set("global.seed", "77").unwrap();
        let mut d = PipelineConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn override_syntax() {
        let o = parse_overrides(&["--train.epochs=3".into(), "--paths.out_dir=/x=y".into()]).unwrap();
        assert_eq!(o[1], ("paths.out_dir".into(), "/x=y".into()));
        assert!(parse_overrides(&["train.epochs=3".into()]).is_err());
        assert!(parse_overrides(&["--train.epochs".into()]).is_err());
    }

    #[test]
    fn evaluation_recording_differs_from_training() {
        let c = PipelineConfig::default();
        assert_ne!(c.training_scenario().pair.seed, c.evaluation_scenario().pair.seed);
        assert_eq!(c.evaluation_scenario().pair.length, 1_000_000);
    }
}
