//! The generate, train, test, verify and report stages behind the CLI.
//!
//! Every stage resolves a [`Config`], writes its artifacts and a
//! [`RunManifest`] tying the metrics to the digests of its inputs.

mod config;
mod manifest;

pub use config::{Config, KEYS};
pub use manifest::{digest_file, FileDigest, RunManifest};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::constitutive::{MaterialParams, PARAM_NAMES};
use crate::datagen::{generate_dataset, load_dataset, save_dataset, split_dataset, Dataset, Sample};
use crate::element_test::{run_test, write_series_csv, write_two_column_csv, StressSeries};
use crate::error::{Error, Result};
use crate::nn::{sample_loss, train, write_history_csv, Checkpoint, ParamScaler, TrainData};
use crate::pca::{fit, stack_rows};

/// Stamped into every verification artifact.
pub const FORWARD_MODEL_NOTE: &str =
    "forward model: oedometric element test at a single material point";

/// How a re-simulated series is compared with the reference series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RelNorm {
    /// `sqrt(mean_k ((s_k - p_k) / s_k)^2)`: each step is normalized by its own stress.
    #[default]
    Pointwise,
    /// `|s - p|_2 / |s|_2`.
    Global,
}

impl RelNorm {
    pub fn name(self) -> &'static str {
        match self {
            RelNorm::Pointwise => "pointwise",
            RelNorm::Global => "global",
        }
    }
}

impl fmt::Display for RelNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointwise" => Ok(RelNorm::Pointwise),
            "global" => Ok(RelNorm::Global),
            _ => Err(Error::Config(format!("unknown rel_norm `{s}` (pointwise, global)"))),
        }
    }
}

fn check_series(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// `(s_k - p_k) / s_k` at every step.
pub fn error_trace(truth: &[f64], pred: &[f64]) -> Result<Vec<f64>> {
    check_series(truth, pred)?;
    truth
        .iter()
        .zip(pred)
        .enumerate()
        .map(|(k, (s, p))| {
            if *s == 0.0 {
                Err(Error::ZeroTarget { index: k })
            } else {
                Ok((s - p) / s)
            }
        })
        .collect()
}

pub fn relative_error(truth: &[f64], pred: &[f64], norm: RelNorm) -> Result<f64> {
    check_series(truth, pred)?;
    match norm {
        RelNorm::Pointwise => {
            let trace = error_trace(truth, pred)?;
            Ok((trace.iter().map(|e| e * e).sum::<f64>() / trace.len() as f64).sqrt())
        }
        RelNorm::Global => {
            let den = truth.iter().map(|s| s * s).sum::<f64>().sqrt();
            if den == 0.0 {
                return Err(Error::ZeroTarget { index: 0 });
            }
            let num = truth.iter().zip(pred).map(|(s, p)| (s - p).powi(2)).sum::<f64>().sqrt();
            Ok(num / den)
        }
    }
}

/// `path` with its extension replaced by `suffix` (`data.bin` to `data.manifest.json`).
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_file<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))
}

/// Fails when any id occurs in both sets.
pub fn check_no_leakage(
    train_ids: impl IntoIterator<Item = usize>,
    test_ids: impl IntoIterator<Item = usize>,
) -> Result<()> {
    let train: BTreeSet<usize> = train_ids.into_iter().collect();
    let count = test_ids.into_iter().filter(|id| train.contains(id)).count();
    if count > 0 {
        return Err(Error::SplitLeakage { count });
    }
    Ok(())
}

fn ids(ds: &Dataset) -> impl Iterator<Item = usize> + '_ {
    ds.samples.iter().map(|s| s.id)
}

fn split(cfg: &Config, ds: &Dataset) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_dataset(ds, cfg.train_fraction()?)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "train_fraction {} leaves an empty split of {} samples",
            cfg.train_fraction()?,
            ds.len()
        )));
    }
    check_no_leakage(ids(&train), ids(&test))?;
    Ok((train, test))
}

fn series_matrix(samples: &[Sample]) -> Result<nalgebra::DMatrix<f64>> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.series.values.as_slice()).collect();
    stack_rows(&rows)
}

fn check_compatible(ckpt: &Checkpoint, ds: &Dataset) -> Result<()> {
    if ckpt.pca.d() != ds.n_steps() {
        return Err(Error::format(format!(
            "model expects series of length {}, dataset has {}",
            ckpt.pca.d(),
            ds.n_steps()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct GenSummary {
    pub path: PathBuf,
    pub n: usize,
    pub d: usize,
    pub drawn: usize,
    pub rejected: usize,
    pub seed: u64,
    pub seconds: f64,
}

impl fmt::Display for GenSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "wrote {} samples of length {} to {} (seed {}, {} of {} draws rejected, {:.1} s)",
            self.n,
            self.d,
            self.path.display(),
            self.seed,
            self.rejected,
            self.drawn,
            self.seconds
        )
    }
}

/// Generates a dataset at `out` and its manifest next to it.
pub fn cmd_gen(cfg: &Config, out: &Path) -> Result<GenSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let (ds, stats) = generate_dataset(
        cfg.n_samples()?,
        &cfg.bounds()?,
        &cfg.init()?,
        &cfg.schedule()?,
        cfg.seed()?,
        cfg.workers()?,
    )?;
    drop(create(out)?);
    save_dataset(&ds, out)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut m = RunManifest::new("gen", cfg);
    m.add_output("dataset", out)?;
    m.timings_s.insert("gen".into(), seconds);
    m.metric("n_samples", ds.len() as f64);
    m.metric("n_steps", ds.n_steps() as f64);
    m.metric("draws", stats.drawn as f64);
    m.metric("rejected", stats.rejected as f64);
    m.save(&sidecar(out, "manifest.json"))?;
    Ok(GenSummary {
        path: out.to_path_buf(),
        n: ds.len(),
        d: ds.n_steps(),
        drawn: stats.drawn,
        rejected: stats.rejected,
        seed: ds.seed,
        seconds,
    })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub path: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub pca_reconstruction_error: f64,
    pub initial_test_loss: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_per_param: Vec<f64>,
    pub seconds: f64,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "trained on {} samples ({} held out) for {} epochs in {:.1} s; checkpoint {}",
            self.n_train,
            self.n_test,
            self.epochs_run,
            self.seconds,
            self.path.display()
        )?;
        writeln!(f, "pca reconstruction error (train): {:.3e}", self.pca_reconstruction_error)?;
        writeln!(
            f,
            "loss: train {:.4e}, held-out {:.4e} (initial {:.4e})",
            self.train_loss, self.test_loss, self.initial_test_loss
        )?;
        let parts: Vec<String> = PARAM_NAMES
            .iter()
            .zip(&self.test_per_param)
            .map(|(n, v)| format!("{n} {v:.3e}"))
            .collect();
        write!(f, "held-out per parameter: {}", parts.join(", "))
    }
}

/// Fits PCA and the network on the training split; writes checkpoint, loss history and manifest.
pub fn cmd_train(cfg: &Config, data: &Path, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = load_dataset(data)?;
    let data_digest = digest_file(data)?;
    let (train_ds, test_ds) = split(cfg, &ds)?;

    let start = Instant::now();
    let rows = series_matrix(&train_ds.samples)?;
    let opts = cfg.pca_options()?;
    if opts.k > ds.n_steps() || opts.k > train_ds.len() {
        return Err(Error::format(format!(
            "dataset with {} training series of length {} cannot support pca_k = {}",
            train_ds.len(),
            ds.n_steps(),
            opts.k
        )));
    }
    let pca = fit(&rows, &opts)?;
    let recon = pca.reconstruction_error(&rows)?;
    let pca_seconds = start.elapsed().as_secs_f64();

    let scaler = ParamScaler::for_mode(cfg.scaling()?, &ds.bounds)?;
    let to_data = |d: &Dataset| -> Result<TrainData> {
        let coeffs = pca.transform_rows(&series_matrix(&d.samples)?)?;
        let params: Vec<MaterialParams> = d.samples.iter().map(|s| s.params).collect();
        TrainData::new(&coeffs, &params, &scaler)
    };
    let tcfg = cfg.train_config()?;
    let start = Instant::now();
    let outcome = train(&tcfg, &to_data(&train_ds)?, Some(&to_data(&test_ds)?), &scaler)?;
    let train_seconds = start.elapsed().as_secs_f64();

    let last = outcome.last().clone();
    let first = outcome.history[0].clone();
    let ckpt = Checkpoint {
        pca,
        model: outcome.model,
        scaler,
        seed: tcfg.seed,
        meta: BTreeMap::from([
            ("dataset_sha256".to_string(), data_digest.sha256.clone()),
            ("n_train".to_string(), train_ds.len().to_string()),
            ("objective".to_string(), tcfg.objective.to_string()),
            ("scaling".to_string(), cfg.scaling()?.to_string()),
        ]),
    };
    drop(create(out)?);
    ckpt.save(out)?;
    let history_path = sidecar(out, "history.csv");
    write_file(&history_path, |w| write_history_csv(w, &outcome.history))?;

    let mut m = RunManifest::new("train", cfg);
    m.add_input("dataset", data)?;
    m.add_output("checkpoint", out)?;
    m.add_output("history", &history_path)?;
    m.timings_s.insert("pca".into(), pca_seconds);
    m.timings_s.insert("train".into(), train_seconds);
    let test = last.test.clone().unwrap_or_default();
    m.metric("n_train", train_ds.len() as f64);
    m.metric("n_test", test_ds.len() as f64);
    m.metric("epochs_run", last.epoch as f64);
    m.metric("pca_reconstruction_error", recon);
    m.metric(
        "pca_singular_ratio",
        ckpt.pca.singular_values[ckpt.pca.k() - 1] / ckpt.pca.singular_values[0],
    );
    m.metric("initial_test_loss", first.test_mean().unwrap_or(f64::NAN));
    m.metric("train_loss", last.train_mean());
    m.metric("test_loss", last.test_mean().unwrap_or(f64::NAN));
    for (n, v) in PARAM_NAMES.iter().zip(&test) {
        m.metric(format!("test_{n}"), *v);
    }
    if ckpt.pca.is_rank_deficient() {
        m.notes.push("pca basis is numerically rank deficient; trailing coefficients carry round-off only".into());
    }
    if outcome.stopped_early {
        m.notes.push(format!("stopped early after epoch {}", last.epoch));
    }
    m.metrics.retain(|_, v| v.is_finite());
    m.save(&sidecar(out, "manifest.json"))?;

    Ok(TrainSummary {
        path: out.to_path_buf(),
        n_train: train_ds.len(),
        n_test: test_ds.len(),
        epochs_run: last.epoch,
        pca_reconstruction_error: recon,
        initial_test_loss: first.test_mean().unwrap_or(f64::NAN),
        train_loss: last.train_mean(),
        test_loss: last.test_mean().unwrap_or(f64::NAN),
        test_per_param: test,
        seconds: pca_seconds + train_seconds,
    })
}

/// Relative errors of predicted against true parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean over samples, per parameter.
    pub per_param: Vec<f64>,
    /// Mean sample loss (the test loss).
    pub mean: f64,
    /// `(id, truth, prediction, sample loss)`.
    pub rows: Vec<(usize, MaterialParams, MaterialParams, f64)>,
}

pub fn evaluate_predictions(samples: &[Sample], preds: &[MaterialParams]) -> Result<Evaluation> {
    if samples.len() != preds.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: preds.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut per_param = vec![0.0; 7];
    let mut rows = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(preds) {
        let (t, q) = (s.params.to_array(), p.to_array());
        for l in 0..7 {
            per_param[l] += (q[l] - t[l]).abs() / t[l].abs();
        }
        rows.push((s.id, s.params, *p, sample_loss(&q, &t)?));
    }
    let n = samples.len() as f64;
    per_param.iter_mut().for_each(|v| *v /= n);
    let mean = rows.iter().map(|r| r.3).sum::<f64>() / n;
    Ok(Evaluation {
        per_param,
        mean,
        rows,
    })
}

/// Ids the checkpoint was trained on, if it was trained on this very file.
fn trained_ids(ckpt: &Checkpoint, data: &Path) -> Result<Option<std::ops::Range<usize>>> {
    let (Some(sha), Some(n)) = (ckpt.meta.get("dataset_sha256"), ckpt.meta.get("n_train")) else {
        return Ok(None);
    };
    if *sha != digest_file(data)?.sha256 {
        return Ok(None);
    }
    let n: usize = n
        .parse()
        .map_err(|_| Error::format(format!("checkpoint has malformed n_train `{n}`")))?;
    Ok(Some(0..n))
}

#[derive(Clone, Debug)]
pub struct TestSummary {
    pub out_dir: PathBuf,
    pub n_test: usize,
    pub evaluation: Evaluation,
    pub train_loss: f64,
}

impl fmt::Display for TestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "test loss over {} held-out samples: {:.4e} (train {:.4e})",
            self.n_test, self.evaluation.mean, self.train_loss
        )?;
        for (n, v) in PARAM_NAMES.iter().zip(&self.evaluation.per_param) {
            writeln!(f, "  {n:>4}: {v:.4e}")?;
        }
        write!(f, "reports in {}", self.out_dir.display())
    }
}

/// Evaluates a checkpoint on the held-out split.
pub fn cmd_test(cfg: &Config, data: &Path, model: &Path, out_dir: &Path) -> Result<TestSummary> {
    cfg.validate()?;
    let ds = load_dataset(data)?;
    let ckpt = Checkpoint::load(model)?;
    check_compatible(&ckpt, &ds)?;
    let (train_ds, test_ds) = split(cfg, &ds)?;
    let mut notes = Vec::new();
    match trained_ids(&ckpt, data)? {
        Some(trained) => check_no_leakage(trained, ids(&test_ds))?,
        None => {
            let msg = "checkpoint was trained on a different dataset file; id leakage check covers the configured split only";
            log::warn!("{msg}");
            notes.push(msg.to_string());
        }
    }

    let start = Instant::now();
    let preds = ckpt.predict_batch(&series_matrix(&test_ds.samples)?)?;
    let evaluation = evaluate_predictions(&test_ds.samples, &preds)?;
    let train_preds = ckpt.predict_batch(&series_matrix(&train_ds.samples)?)?;
    let train_loss = evaluate_predictions(&train_ds.samples, &train_preds)?.mean;
    let seconds = start.elapsed().as_secs_f64();

    let report_path = out_dir.join("test_report.csv");
    write_file(&report_path, |w| {
        writeln!(w, "# held-out samples: {}", test_ds.len())?;
        writeln!(w, "# param,mean_relative_error")?;
        for (n, v) in PARAM_NAMES.iter().zip(&evaluation.per_param) {
            writeln!(w, "{n},{v:.16e}")?;
        }
        writeln!(w, "mean,{:.16e}", evaluation.mean)
    })?;
    let pred_path = out_dir.join("predictions.csv");
    write_file(&pred_path, |w| {
        let mut header = vec!["id".to_string()];
        header.extend(PARAM_NAMES.iter().map(|n| format!("{n}_true")));
        header.extend(PARAM_NAMES.iter().map(|n| format!("{n}_pred")));
        header.push("sample_loss".into());
        writeln!(w, "# {}", header.join(","))?;
        for (id, t, p, l) in &evaluation.rows {
            let vals = t.to_array().into_iter().chain(p.to_array()).chain([*l]);
            writeln!(w, "{id},{}", fmt_row(vals))?;
        }
        Ok(())
    })?;

    let mut m = RunManifest::new("test", cfg);
    m.add_input("dataset", data)?;
    m.add_input("checkpoint", model)?;
    m.add_output("report", &report_path)?;
    m.add_output("predictions", &pred_path)?;
    m.timings_s.insert("test".into(), seconds);
    m.metric("n_test", test_ds.len() as f64);
    m.metric("test_loss", evaluation.mean);
    m.metric("train_loss", train_loss);
    for (n, v) in PARAM_NAMES.iter().zip(&evaluation.per_param) {
        m.metric(format!("test_{n}"), *v);
    }
    m.notes = notes;
    m.save(&out_dir.join("test.manifest.json"))?;
    Ok(TestSummary {
        out_dir: out_dir.to_path_buf(),
        n_test: test_ds.len(),
        evaluation,
        train_loss,
    })
}

/// Seeded choice of `count` distinct positions out of `n`, ascending.
pub fn pick_samples(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut picked = rand::seq::index::sample(&mut rng, n, count.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyRow {
    pub id: usize,
    pub truth: MaterialParams,
    pub predicted: MaterialParams,
    pub param_loss: f64,
    /// `None` when the forward run on the predicted parameters diverged.
    pub pointwise: Option<f64>,
    pub global: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct VerifySummary {
    pub out_dir: PathBuf,
    pub rows: Vec<VerifyRow>,
    pub headline: RelNorm,
    pub mean_pointwise: f64,
    pub mean_global: f64,
}

impl VerifySummary {
    /// Average verification error under the configured norm.
    pub fn mean(&self) -> f64 {
        match self.headline {
            RelNorm::Pointwise => self.mean_pointwise,
            RelNorm::Global => self.mean_global,
        }
    }

    pub fn n_diverged(&self) -> usize {
        self.rows.iter().filter(|r| r.pointwise.is_none()).count()
    }
}

impl fmt::Display for VerifySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{FORWARD_MODEL_NOTE}")?;
        for r in &self.rows {
            match (r.pointwise, r.global) {
                (Some(p), Some(g)) => writeln!(
                    f,
                    "  sample {:>5}: E pointwise {p:.4e}, global {g:.4e} (parameter loss {:.4e})",
                    r.id, r.param_loss
                )?,
                _ => writeln!(f, "  sample {:>5}: {}", r.id, r.status)?,
            }
        }
        write!(
            f,
            "average E ({}) over {} samples: {:.4e}; outputs in {}",
            self.headline,
            self.rows.len() - self.n_diverged(),
            self.mean(),
            self.out_dir.display()
        )
    }
}

/// Errors of re-simulating `sample` with `predicted` parameters, with the re-simulated series.
pub fn verify_sample(
    sample: &Sample,
    predicted: &MaterialParams,
    ds: &Dataset,
) -> Result<(f64, f64, StressSeries)> {
    let series = run_test(predicted, &ds.init, &ds.schedule)?;
    let truth = &sample.series.values;
    Ok((
        relative_error(truth, &series.values, RelNorm::Pointwise)?,
        relative_error(truth, &series.values, RelNorm::Global)?,
        series,
    ))
}

/// Re-simulates selected held-out samples with identified parameters.
///
/// `ids` picks samples by id; otherwise `verify_samples` are drawn with the config seed.
pub fn cmd_verify(
    cfg: &Config,
    data: &Path,
    model: &Path,
    out_dir: &Path,
    ids: Option<&[usize]>,
) -> Result<VerifySummary> {
    cfg.validate()?;
    let ds = load_dataset(data)?;
    let ckpt = Checkpoint::load(model)?;
    check_compatible(&ckpt, &ds)?;
    let (_, test_ds) = split(cfg, &ds)?;
    let chosen: Vec<Sample> = match ids {
        Some(ids) => ids
            .iter()
            .map(|id| {
                test_ds.samples.iter().find(|s| s.id == *id).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("sample {id} is not in the held-out split"))
                })
            })
            .collect::<Result<_>>()?,
        None => pick_samples(test_ds.len(), cfg.verify_samples()?, cfg.seed()?)
            .into_iter()
            .map(|i| test_ds.samples[i].clone())
            .collect(),
    };
    if chosen.is_empty() {
        return Err(Error::InvalidArgument("no samples selected for verification".into()));
    }

    let start = Instant::now();
    let preds = ckpt.predict_batch(&series_matrix(&chosen)?)?;
    let runs: Vec<Result<(f64, f64, StressSeries)>> = thread_pool(cfg.workers()?)?.install(|| {
        chosen
            .par_iter()
            .zip(preds.par_iter())
            .map(|(s, p)| verify_sample(s, p, &ds))
            .collect()
    });
    let seconds = start.elapsed().as_secs_f64();

    let mut rows = Vec::with_capacity(chosen.len());
    for ((s, p), run) in chosen.iter().zip(&preds).zip(runs) {
        let param_loss = sample_loss(&p.to_array(), &s.params.to_array())?;
        let mut row = VerifyRow {
            id: s.id,
            truth: s.params,
            predicted: *p,
            param_loss,
            pointwise: None,
            global: None,
            status: "ok".into(),
        };
        match run {
            Ok((pw, gl, series)) => {
                row.pointwise = Some(pw);
                row.global = Some(gl);
                write_overlay(out_dir, s, &series)?;
            }
            Err(Error::Diverged { step, reason }) => {
                log::warn!("sample {}: forward run on predicted parameters diverged at step {step}: {reason}", s.id);
                row.status = format!("diverged at step {step}: {reason}");
            }
            Err(e) => return Err(e),
        }
        rows.push(row);
    }
    let mean_of = |f: fn(&VerifyRow) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let summary = VerifySummary {
        out_dir: out_dir.to_path_buf(),
        headline: cfg.rel_norm()?,
        mean_pointwise: mean_of(|r| r.pointwise),
        mean_global: mean_of(|r| r.global),
        rows,
    };

    let report_path = out_dir.join("verify_report.csv");
    write_file(&report_path, |w| {
        writeln!(w, "# {FORWARD_MODEL_NOTE}")?;
        writeln!(w, "# headline norm: {}", summary.headline)?;
        writeln!(w, "# id,param_loss,E_pointwise,E_global,status")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        for r in &summary.rows {
            writeln!(
                w,
                "{},{:.16e},{},{},{}",
                r.id,
                r.param_loss,
                opt(r.pointwise),
                opt(r.global),
                r.status.replace(',', ";")
            )?;
        }
        writeln!(
            w,
            "mean,,{:.16e},{:.16e},",
            summary.mean_pointwise, summary.mean_global
        )
    })?;

    let mut m = RunManifest::new("verify", cfg);
    m.add_input("dataset", data)?;
    m.add_input("checkpoint", model)?;
    m.add_output("report", &report_path)?;
    m.timings_s.insert("verify".into(), seconds);
    m.metric("n_verified", (summary.rows.len() - summary.n_diverged()) as f64);
    m.metric("n_diverged", summary.n_diverged() as f64);
    m.metric("verify_E", summary.mean());
    m.metric("verify_E_pointwise", summary.mean_pointwise);
    m.metric("verify_E_global", summary.mean_global);
    // Unnormalized sum over steps, i.e. the pointwise RMS times sqrt(d).
    m.metric(
        "verify_E_pointwise_l2",
        summary.mean_pointwise * (ds.n_steps() as f64).sqrt(),
    );
    m.metrics.retain(|_, v| v.is_finite());
    m.notes.push(FORWARD_MODEL_NOTE.into());
    m.notes.push(format!(
        "samples: {}",
        summary.rows.iter().map(|r| r.id.to_string()).collect::<Vec<_>>().join(" ")
    ));
    m.save(&out_dir.join("verify.manifest.json"))?;
    Ok(summary)
}

/// Reference and re-simulated curves plus the pointwise error trace of one sample.
fn write_overlay(out_dir: &Path, sample: &Sample, predicted: &StressSeries) -> Result<()> {
    let id = sample.id;
    write_file(&out_dir.join(format!("sample_{id}_true.csv")), |w| {
        write_series_csv(w, &sample.series)
    })?;
    write_file(&out_dir.join(format!("sample_{id}_pred.csv")), |w| {
        write_series_csv(w, predicted)
    })?;
    let trace = error_trace(&sample.series.values, &predicted.values)?;
    let rows: Vec<(f64, f64)> = trace
        .iter()
        .enumerate()
        .map(|(k, e)| ((k + 1) as f64 * predicted.dt, e.abs()))
        .collect();
    write_file(&out_dir.join(format!("sample_{id}_error.csv")), |w| {
        write_two_column_csv(w, "t,rel_error", rows.iter().copied())
    })
}

/// Metrics of several manifests side by side.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub labels: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl Report {
    /// Second minus first, when exactly two runs are compared.
    fn diff(&self, values: &[Option<f64>]) -> Option<Option<f64>> {
        (values.len() == 2).then(|| values[0].zip(values[1]).map(|(a, b)| b - a))
    }

    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
        let mut header = vec!["metric".to_string()];
        header.extend(self.labels.iter().cloned());
        if self.labels.len() == 2 {
            header.push("diff".into());
        }
        let mut table = vec![header];
        for (name, values) in &self.rows {
            let mut line = vec![name.clone()];
            line.extend(values.iter().map(|v| cell(*v)));
            if let Some(d) = self.diff(values) {
                line.push(cell(d));
            }
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        table
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&widths)
                    .map(|(s, w)| format!("{s:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["metric".to_string()];
        header.extend(self.labels.iter().cloned());
        if self.labels.len() == 2 {
            header.push("diff".into());
        }
        writeln!(out, "# {}", header.join(","))?;
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        for (name, values) in &self.rows {
            let mut line = vec![name.clone()];
            line.extend(values.iter().map(|v| cell(*v)));
            if let Some(d) = self.diff(values) {
                line.push(cell(d));
            }
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Merges the metrics of one or more manifests.
pub fn cmd_report(paths: &[PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one manifest".into()));
    }
    let manifests = paths
        .iter()
        .map(|p| RunManifest::load(p))
        .collect::<Result<Vec<_>>>()?;
    let labels = paths
        .iter()
        .zip(&manifests)
        .map(|(p, m)| {
            let stem = p.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            format!("{}:{stem}", m.stage)
        })
        .collect();
    let names: BTreeSet<&String> = manifests.iter().flat_map(|m| m.metrics.keys()).collect();
    let rows = names
        .into_iter()
        .map(|n| (n.clone(), manifests.iter().map(|m| m.metrics.get(n).copied()).collect()))
        .collect();
    Ok(Report { labels, rows })
}
