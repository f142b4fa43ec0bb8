use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qcorr_core::dsp::inband_power_ratio;
use qcorr_core::eval::{evaluate_recovery, verify_single_stream, RecoveryEvaluation, Verification};
use qcorr_core::neural::Checkpoint;
use qcorr_core::sim::simulate_scenario;
use qcorr_core::trace::{load_trace, save_trace, StreamId, Trace, TraceFormat, TraceSet};
use qcorr_core::training::{read_norm, run_training, TrainingOutcome};

use crate::config::PipelineConfig;
use crate::CliError;

/// Where each artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub format: TraceFormat,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            root: cfg.out_dir.clone(),
            format: cfg.format,
        }
    }

    pub fn train_traces(&self) -> PathBuf {
        self.root.join("traces").join("train")
    }

    pub fn eval_traces(&self) -> PathBuf {
        self.root.join("traces").join("eval")
    }

    pub fn trace_file(&self, dir: &Path, name: &str) -> PathBuf {
        let ext = match self.format {
            TraceFormat::Csv => "csv",
            TraceFormat::Binary => "qtr",
        };
        dir.join(format!("{name}.{ext}"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.qckp")
    }

    pub fn loss_csv(&self) -> PathBuf {
        self.root.join("loss.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn curves(&self) -> PathBuf {
        self.root.join("curves")
    }

    pub fn verify_dir(&self) -> PathBuf {
        self.root.join("verify")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn require_root(layout: &Layout) -> Result<(), CliError> {
    if layout.root.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{}: output directory does not exist",
            layout.root.display()
        )))
    }
}

fn make_dir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

const SQL_NAMES: [&str; 2] = ["sql_probe", "sql_conj"];

fn save_set(layout: &Layout, dir: &Path, ts: &TraceSet, sql: (&Trace, &Trace)) -> Result<(), CliError> {
    make_dir(dir)?;
    for (id, t) in ts.streams() {
        save_trace(t, layout.trace_file(dir, id.name()), layout.format)?;
    }
    save_trace(sql.0, layout.trace_file(dir, SQL_NAMES[0]), layout.format)?;
    save_trace(sql.1, layout.trace_file(dir, SQL_NAMES[1]), layout.format)?;
    Ok(())
}

fn load_set(layout: &Layout, dir: &Path) -> Result<(TraceSet, (Trace, Trace)), CliError> {
    let load = |name: &str| -> Result<Trace, CliError> {
        let p = layout.trace_file(dir, name);
        if !p.exists() {
            return Err(CliError::Data(format!("{}: missing; run `simulate` first", p.display())));
        }
        Ok(load_trace(&p, layout.format)?)
    };
    let optional = |name: &str| -> Result<Option<Trace>, CliError> {
        if layout.trace_file(dir, name).exists() {
            load(name).map(Some)
        } else {
            Ok(None)
        }
    };
    let ts = TraceSet {
        probe_pre: load(StreamId::ProbePre.name())?,
        conj_pre: load(StreamId::ConjPre.name())?,
        conj_post: load(StreamId::ConjPost.name())?,
        probe_truth: optional(StreamId::ProbeTruth.name())?,
        probe_disrupted: optional(StreamId::ProbeDisrupted.name())?,
    };
    Ok((ts, (load(SQL_NAMES[0])?, load(SQL_NAMES[1])?)))
}

/// In-band noise of each probe/conjugate pairing relative to the SQL pair.
fn inband_ratios(
    ts: &TraceSet,
    sql: (&Trace, &Trace),
    cfg: &PipelineConfig,
) -> Result<Vec<(&'static str, f64)>, CliError> {
    let band = cfg.eval.band;
    let w = cfg.welch();
    let mut out = vec![("pre", inband_power_ratio(&ts.probe_pre, &ts.conj_pre, sql, w, band)?)];
    if let Some(t) = &ts.probe_truth {
        out.push(("truth", inband_power_ratio(t, &ts.conj_post, sql, w, band)?));
    }
    if let Some(t) = &ts.probe_disrupted {
        out.push(("disrupted", inband_power_ratio(t, &ts.conj_post, sql, w, band)?));
    }
    Ok(out)
}

/// Write the training and evaluation recordings. Returns the in-band
/// variance ratios of the training recording, which are also printed.
pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<Vec<(&'static str, f64)>, CliError> {
    let layout = Layout::new(cfg);
    require_root(&layout)?;
    write_file(&layout.root.join("config.txt"), |w| w.write_all(cfg.to_text().as_bytes()))?;

    let train = simulate_scenario(&cfg.training_scenario())?;
    save_set(&layout, &layout.train_traces(), &train.traces, (&train.sql.0, &train.sql.1))?;
    let ratios = inband_ratios(&train.traces, (&train.sql.0, &train.sql.1), cfg)?;
    for (name, r) in &ratios {
        println!("inband_ratio.{name}={r}");
    }
    log::info!("wrote training recording to {}", layout.train_traces().display());

    let eval = simulate_scenario(&cfg.evaluation_scenario())?;
    save_set(&layout, &layout.eval_traces(), &eval.traces, (&eval.sql.0, &eval.sql.1))?;
    log::info!("wrote evaluation recording to {}", layout.eval_traces().display());
    Ok(ratios)
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainingOutcome, CliError> {
    let layout = Layout::new(cfg);
    require_root(&layout)?;
    let (ts, _) = load_set(&layout, &layout.train_traces())?;
    let hp = cfg.hyperparams();
    log::info!(
        "training {} epochs on {} samples ({} combiner, {} loss)",
        hp.epochs,
        ts.len(),
        hp.combiner.name(),
        hp.loss.name()
    );
    let out = run_training(&ts, &hp)?;
    out.checkpoint(&hp).save(layout.checkpoint())?;
    write_file(&layout.loss_csv(), |w| out.report.write_csv(w))?;
    log::info!(
        "trained in {:.1} s; test loss {:.6e}",
        out.report.wall_time_s,
        out.report.test_loss
    );
    Ok(out)
}

pub fn cmd_evaluate(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> Result<RecoveryEvaluation, CliError> {
    let layout = Layout::new(cfg);
    require_root(&layout)?;
    let ck_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.checkpoint());
    if !ck_path.exists() {
        return Err(CliError::Data(format!("{}: checkpoint not found", ck_path.display())));
    }
    let ck = Checkpoint::load(&ck_path)?;
    let norm = read_norm(&ck)?;
    let hp = cfg.hyperparams();
    if ck.model.window_len() != hp.window_len {
        return Err(CliError::Config(format!(
            "checkpoint window length {} differs from train.window_len {}",
            ck.model.window_len(),
            hp.window_len
        )));
    }
    let (ts, sql) = load_set(&layout, &layout.eval_traces())?;
    let ev = evaluate_recovery(&ts, (&sql.0, &sql.1), &ck.model, &norm, &hp, &cfg.eval)?;

    write_file(&layout.report(), |w| ev.write_report(w))?;
    let curves = layout.curves();
    make_dir(&curves)?;
    for (name, c) in ev.curves() {
        write_file(&curves.join(format!("mi_{name}.csv")), |w| c.write_csv(w))?;
    }
    for (name, s) in ev.spectra() {
        write_file(&curves.join(format!("spectrum_{name}.csv")), |w| s.write_csv(w))?;
    }
    save_trace(
        &ev.reconstruction.trace,
        layout.trace_file(&layout.eval_traces(), "probe_reconstructed"),
        layout.format,
    )?;
    print!("{}", ev.report);
    Ok(ev)
}

pub fn cmd_verify(cfg: &PipelineConfig) -> Result<Verification, CliError> {
    let layout = Layout::new(cfg);
    require_root(&layout)?;
    let (ts, _) = load_set(&layout, &layout.train_traces())?;
    let v = verify_single_stream(&ts, &cfg.hyperparams(), cfg.verify_bins)?;
    let dir = layout.verify_dir();
    make_dir(&dir)?;
    save_trace(&v.probe.trace, dir.join("probe_reconstructed.csv"), TraceFormat::Csv)?;
    save_trace(&v.conj.trace, dir.join("conj_reconstructed.csv"), TraceFormat::Csv)?;
    write_file(&dir.join("hist_original.csv"), |w| v.hist_original.write_csv(w))?;
    write_file(&dir.join("hist_reconstructed.csv"), |w| v.hist_reconstructed.write_csv(w))?;
    write_file(&dir.join("loss_probe.csv"), |w| v.probe_report.write_csv(w))?;
    write_file(&dir.join("loss_conj.csv"), |w| v.conj_report.write_csv(w))?;
    let summary = format!(
        "offset={}\npearson_probe={}\npearson_conj={}\ncosine_similarity={}\n",
        v.probe.offset, v.pearson_probe, v.pearson_conj, v.cosine_similarity
    );
    write_file(&dir.join("summary.txt"), |w| w.write_all(summary.as_bytes()))?;
    print!("{summary}");
    Ok(v)
}

fn read_kv(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Comparison table from the stored report and, if present, the
/// verification summary.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<String, CliError> {
    let layout = Layout::new(cfg);
    let report = read_kv(&layout.report())?;
    let get = |k: &str| report.iter().find(|(a, _)| a == k).map(|(_, v)| v.as_str());
    let mut t = String::new();
    t.push_str("metric,value,hardware_baseline\n");
    for (k, v) in &report {
        if k.starts_with("hardware_") {
            continue;
        }
        let base = match k.as_str() {
            "mi_recovery_pct" => get("hardware_mi_recovery_pct").unwrap_or(""),
            "peak_delay_ns" => get("hardware_peak_delay_ns").unwrap_or(""),
            _ => "",
        };
        t.push_str(&format!("{k},{v},{base}\n"));
    }
    let vs = layout.verify_dir().join("summary.txt");
    if vs.exists() {
        for (k, v) in read_kv(&vs)? {
            t.push_str(&format!("verify.{k},{v},\n"));
        }
    }
    write_file(&layout.summary(), |w| w.write_all(t.as_bytes()))?;
    print!("{t}");
    Ok(t)
}

/// simulate → train → evaluate.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<RecoveryEvaluation, CliError> {
    cmd_simulate(cfg)?;
    cmd_train(cfg)?;
    cmd_evaluate(cfg, None)
}
