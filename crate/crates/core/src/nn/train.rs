//! Mini-batch training loop, evaluation and inference.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, Activation, AdamConfig, AdamState, FcnModel, Objective, ParamScaler, DEFAULT_HIDDEN};
use crate::constitutive::{MaterialParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::pca::PcaModel;

/// Columns beyond this are evaluated in chunks.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub adam: AdamConfig,
    /// Learning rate factor applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without improvement of the mean training error.
    pub patience: Option<usize>,
    pub seed: u64,
    pub objective: Objective,
    /// Shift and scale each input coefficient to zero mean, unit variance over the training set.
    pub standardize_inputs: bool,
    /// Start the output bias at the mean training target.
    pub output_bias_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            activation: Activation::Selu,
            adam: AdamConfig::default(),
            lr_decay: 0.5,
            lr_decay_every: 100,
            batch_size: 64,
            epochs: 500,
            patience: None,
            seed: 0,
            objective: Objective::Componentwise,
            standardize_inputs: true,
            output_bias_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.patience == Some(0) {
            return bad("patience must be positive");
        }
        Ok(())
    }

    pub fn layer_sizes(&self, n_inputs: usize, n_outputs: usize) -> Vec<usize> {
        let mut s = vec![n_inputs];
        s.extend(&self.hidden);
        s.push(n_outputs);
        s
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = epoch.saturating_sub(1) / self.lr_decay_every;
        self.adam.lr * self.lr_decay.powi(drops as i32)
    }
}

/// Inputs and targets as matrix columns, one column per sample.
#[derive(Clone, Debug)]
pub struct TrainData {
    /// `k x n` PCA coefficients.
    pub inputs: DMatrix<f64>,
    /// `7 x n` scaled targets.
    pub targets: DMatrix<f64>,
    /// `7 x n` targets in physical units.
    pub physical: DMatrix<f64>,
}

impl TrainData {
    /// `coeffs` is `n x k` (one row per sample), as returned by [`PcaModel::transform_rows`].
    pub fn new(coeffs: &DMatrix<f64>, params: &[MaterialParams], scaler: &ParamScaler) -> Result<Self> {
        if coeffs.nrows() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: coeffs.nrows(),
            });
        }
        let n = params.len();
        let mut targets = DMatrix::zeros(7, n);
        let mut physical = DMatrix::zeros(7, n);
        for (j, p) in params.iter().enumerate() {
            targets.set_column(j, &DVector::from_row_slice(&scaler.apply(p)));
            physical.set_column(j, &DVector::from_row_slice(&p.to_array()));
        }
        Ok(Self {
            inputs: coeffs.transpose(),
            targets,
            physical,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-parameter mean relative errors in physical units after an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub lr: f64,
    /// Mean minibatch objective over the epoch; the full-set objective at epoch 0.
    pub objective: f64,
    pub train: Vec<f64>,
    pub test: Option<Vec<f64>>,
}

impl EpochRecord {
    pub fn train_mean(&self) -> f64 {
        mean(&self.train)
    }

    pub fn test_mean(&self) -> Option<f64> {
        self.test.as_deref().map(mean)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FcnModel,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn last(&self) -> &EpochRecord {
        self.history.last().expect("history always holds the initial record")
    }
}

fn forward_chunked(model: &FcnModel, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = inputs.ncols();
    let mut out = DMatrix::zeros(model.n_outputs(), n);
    let mut start = 0;
    while start < n {
        let width = EVAL_CHUNK.min(n - start);
        let chunk = model.forward_batch(&inputs.columns(start, width).clone_owned())?;
        out.columns_mut(start, width).copy_from(&chunk);
        start += width;
    }
    Ok(out)
}

/// Per-parameter mean relative error of unscaled predictions against physical targets.
pub fn evaluate_per_param(model: &FcnModel, data: &TrainData, scaler: &ParamScaler) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scaled = forward_chunked(model, &data.inputs)?;
    let mut preds = DMatrix::zeros(7, data.len());
    for j in 0..data.len() {
        let p = scaler.unapply(scaled.column(j).as_slice())?;
        preds.set_column(j, &DVector::from_row_slice(&p.to_array()));
    }
    super::per_param_errors(&preds, &data.physical)
}

fn initial_model(cfg: &TrainConfig, data: &TrainData) -> Result<FcnModel> {
    let sizes = cfg.layer_sizes(data.inputs.nrows(), data.targets.nrows());
    let mut model = FcnModel::initialized(&sizes, cfg.activation, cfg.seed)?;
    if cfg.standardize_inputs {
        let n = data.len() as f64;
        for (i, row) in data.inputs.row_iter().enumerate() {
            let mu = row.sum() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            model.input_shift[i] = mu;
            model.input_scale[i] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
    }
    if cfg.output_bias_init {
        let last = model.layers.last_mut().unwrap();
        last.bias = data.targets.column_mean();
    }
    Ok(model)
}

/// Trains a fresh network. `held_out` is only evaluated, never fitted.
pub fn train(
    cfg: &TrainConfig,
    data: &TrainData,
    held_out: Option<&TrainData>,
    scaler: &ParamScaler,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(h) = held_out {
        if h.inputs.nrows() != data.inputs.nrows() {
            return Err(Error::DimensionMismatch {
                expected: data.inputs.nrows(),
                got: h.inputs.nrows(),
            });
        }
    }
    let mut model = initial_model(cfg, data)?;
    let record = |model: &FcnModel, epoch: usize, lr: f64, objective: f64| -> Result<EpochRecord> {
        Ok(EpochRecord {
            epoch,
            lr,
            objective,
            train: evaluate_per_param(model, data, scaler)?,
            test: held_out.map(|h| evaluate_per_param(model, h, scaler)).transpose()?,
        })
    };
    let init_obj = cfg.objective.batch_value(&forward_chunked(&model, &data.inputs)?, &data.targets)?;
    let mut history = vec![record(&model, 0, cfg.adam.lr, init_obj)?];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = AdamState::new(&model);
    // held-out data is never used for model selection
    let mut best = (history[0].train_mean(), 0usize);
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let step_cfg = AdamConfig {
            lr: cfg.lr_at(epoch),
            ..cfg.adam
        };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let x = data.inputs.select_columns(idx);
            let y = data.targets.select_columns(idx);
            let (loss, grads) = model.backward(&x, &y, cfg.objective)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            adam_step(&mut model, &grads, &mut adam, &step_cfg);
            total += loss;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let rec = record(&model, epoch, step_cfg.lr, total / batches as f64)?;
        log::debug!(
            "epoch {epoch}: objective {:.4e} train {:.4e} test {:?}",
            rec.objective,
            rec.train_mean(),
            rec.test_mean()
        );
        if epoch % 10 == 0 || epoch == cfg.epochs {
            log::info!(
                "epoch {epoch}/{}: train {:.4e} test {}",
                cfg.epochs,
                rec.train_mean(),
                rec.test_mean().map_or("-".to_string(), |v| format!("{v:.4e}"))
            );
        }
        let m = rec.train_mean();
        history.push(rec);
        if m < best.0 {
            best = (m, epoch);
        } else if let Some(p) = cfg.patience {
            if epoch - best.1 >= p {
                log::info!("stopping after epoch {epoch}: no improvement since epoch {}", best.1);
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        stopped_early,
    })
}

/// Parameters identified from one stress series.
pub fn predict(
    model: &FcnModel,
    pca: &PcaModel,
    scaler: &ParamScaler,
    series: &[f64],
) -> Result<MaterialParams> {
    let coeffs = pca.transform(series)?;
    scaler.unapply(&model.forward(&coeffs)?)
}

/// Parameters identified from every row of `series` (`n x d`).
pub fn predict_batch(
    model: &FcnModel,
    pca: &PcaModel,
    scaler: &ParamScaler,
    series: &DMatrix<f64>,
) -> Result<Vec<MaterialParams>> {
    let coeffs = pca.transform_rows(series)?.transpose();
    let out = forward_chunked(model, &coeffs)?;
    out.column_iter().map(|c| scaler.unapply(c.as_slice())).collect()
}

/// One row per epoch: `epoch,lr,objective`, then per-parameter train and test errors with means.
pub fn write_history_csv<W: Write>(mut out: W, history: &[EpochRecord]) -> std::io::Result<()> {
    let mut header = vec!["epoch".to_string(), "lr".into(), "objective".into()];
    for split in ["train", "test"] {
        header.extend(PARAM_NAMES.iter().map(|n| format!("{split}_{n}")));
        header.push(format!("{split}_mean"));
    }
    writeln!(out, "# {}", header.join(","))?;
    for r in history {
        let mut row = vec![r.epoch.to_string(), format!("{:e}", r.lr), format!("{:.8e}", r.objective)];
        row.extend(r.train.iter().map(|v| format!("{v:.8e}")));
        row.push(format!("{:.8e}", r.train_mean()));
        match &r.test {
            Some(t) => {
                row.extend(t.iter().map(|v| format!("{v:.8e}")));
                row.push(format!("{:.8e}", mean(t)));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 8)),
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
