//! Layered `key = value` configuration: built-in defaults, then files, then overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::datagen::ParamBounds;
use crate::element_test::{InitialState, LoadingSchedule};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, Objective, ScalingMode, TrainConfig};
use crate::pca::PcaOptions;

use super::RelNorm;

/// Every recognized key with its default value and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "1", "master seed for sampling, PCA sketch, training and verification picks"),
    ("n_samples", "6000", "number of generated parameter-series pairs"),
    ("workers", "0", "worker threads for generation and verification (0 = all cores)"),
    ("piston_rate", "-0.001", "piston velocity in m/s during loading"),
    ("sample_height", "0.1", "sample height in m"),
    ("dt", "0.0015", "recording time step in s"),
    ("n_steps", "675", "recorded steps per series"),
    ("loading_fraction", "0.65", "fraction of steps spent loading"),
    ("substeps", "10", "RK4 substeps per recorded step"),
    ("init_stress", "-1.0", "initial isotropic stress in kPa"),
    ("init_void_ratio", "0.66", "initial void ratio"),
    ("c2_bounds", "five_percent", "c2 sampling interval: five_percent or table"),
    ("train_fraction", "0.75", "leading fraction of samples used for training"),
    ("pca_k", "50", "number of principal components"),
    ("pca_oversampling", "10", "extra sketch columns of the randomized SVD"),
    ("pca_power_iters", "2", "power iterations of the randomized SVD"),
    ("pca_centered", "true", "subtract the training mean before projecting"),
    ("hidden", "500,1000,2000,1000,500", "hidden layer widths"),
    ("activation", "selu", "relu, softplus or selu"),
    ("objective", "componentwise", "training objective: componentwise or vector"),
    ("scaling", "magnitude", "target scaling: none, magnitude or minmax"),
    ("standardize_inputs", "true", "standardize PCA coefficients over the training set"),
    ("output_bias_init", "true", "start the output bias at the mean scaled target"),
    ("learning_rate", "0.001", "initial Adam step size"),
    ("lr_decay", "0.5", "learning rate factor per decay period"),
    ("lr_decay_every", "100", "epochs per decay period"),
    ("batch_size", "64", "minibatch size"),
    ("epochs", "500", "epoch budget"),
    ("patience", "0", "stop after this many epochs without training improvement (0 = off)"),
    ("adam_beta1", "0.9", "Adam first moment decay"),
    ("adam_beta2", "0.999", "Adam second moment decay"),
    ("adam_eps", "1e-8", "Adam denominator offset"),
    ("verify_samples", "4", "test samples re-simulated during verification"),
    ("rel_norm", "pointwise", "headline verification error: pointwise or global"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k.trim(), v)
    }

    /// Merges `key = value` lines; `#` starts a comment.
    pub fn merge_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected `key = value`", i + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_str(&text, &path.display().to_string())
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("cannot parse `{key} = {raw}`")))
    }

    /// Parses enum-like values whose `FromStr` already reports a config error.
    fn get_named<T: FromStr<Err = Error>>(&self, key: &str) -> Result<T> {
        self.values[key].parse()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn n_samples(&self) -> Result<usize> {
        let n: usize = self.get("n_samples")?;
        if n == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        Ok(n)
    }

    pub fn workers(&self) -> Result<usize> {
        self.get("workers")
    }

    pub fn schedule(&self) -> Result<LoadingSchedule> {
        let s = LoadingSchedule {
            piston_rate: self.get("piston_rate")?,
            sample_height: self.get("sample_height")?,
            dt: self.get("dt")?,
            n_steps: self.get("n_steps")?,
            loading_fraction: self.get("loading_fraction")?,
            substeps: self.get("substeps")?,
        };
        s.validate().map_err(to_config)?;
        Ok(s)
    }

    pub fn init(&self) -> Result<InitialState> {
        let s = InitialState {
            isotropic_stress: self.get("init_stress")?,
            void_ratio: self.get("init_void_ratio")?,
        };
        s.validate().map_err(to_config)?;
        Ok(s)
    }

    pub fn bounds(&self) -> Result<ParamBounds> {
        match self.values["c2_bounds"].as_str() {
            "five_percent" => Ok(ParamBounds::default()),
            "table" => Ok(ParamBounds::table_literal()),
            other => Err(Error::Config(format!(
                "unknown c2_bounds `{other}` (five_percent, table)"
            ))),
        }
    }

    pub fn train_fraction(&self) -> Result<f64> {
        let f: f64 = self.get("train_fraction")?;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("train_fraction = {f} must lie in (0, 1)")));
        }
        Ok(f)
    }

    pub fn pca_options(&self) -> Result<PcaOptions> {
        Ok(PcaOptions {
            k: self.get("pca_k")?,
            oversampling: self.get("pca_oversampling")?,
            power_iters: self.get("pca_power_iters")?,
            seed: self.seed()?,
            centered: self.get("pca_centered")?,
        })
    }

    pub fn scaling(&self) -> Result<ScalingMode> {
        self.get_named("scaling")
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let hidden = self.values["hidden"]
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("cannot parse hidden = {}", self.values["hidden"])))?;
        let patience: usize = self.get("patience")?;
        let cfg = TrainConfig {
            hidden,
            activation: self.get_named::<Activation>("activation")?,
            adam: AdamConfig {
                lr: self.get("learning_rate")?,
                beta1: self.get("adam_beta1")?,
                beta2: self.get("adam_beta2")?,
                eps: self.get("adam_eps")?,
            },
            lr_decay: self.get("lr_decay")?,
            lr_decay_every: self.get("lr_decay_every")?,
            batch_size: self.get("batch_size")?,
            epochs: self.get("epochs")?,
            patience: (patience > 0).then_some(patience),
            seed: self.seed()?,
            objective: self.get_named::<Objective>("objective")?,
            standardize_inputs: self.get("standardize_inputs")?,
            output_bias_init: self.get("output_bias_init")?,
        };
        cfg.validate().map_err(to_config)?;
        Ok(cfg)
    }

    pub fn verify_samples(&self) -> Result<usize> {
        self.get("verify_samples")
    }

    pub fn rel_norm(&self) -> Result<RelNorm> {
        self.get_named("rel_norm")
    }

    /// Resolves every typed view once so errors surface before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.n_samples()?;
        self.workers()?;
        self.schedule()?;
        self.init()?;
        self.bounds()?;
        self.train_fraction()?;
        self.pca_options()?;
        self.scaling()?;
        self.train_config()?;
        self.verify_samples()?;
        self.rel_norm()?;
        Ok(())
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}
