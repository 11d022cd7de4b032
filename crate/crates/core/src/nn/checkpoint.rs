//! Everything needed for inference in one file: PCA basis, network and target scaler.
//!
//! The `fcn` section carries the scaler and training seed in its header.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{predict, predict_batch, Activation, FcnModel, Layer, ParamScaler};
use crate::constitutive::MaterialParams;
use crate::container::{self, Section};
use crate::error::{Error, Result};
use crate::pca::PcaModel;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub pca: PcaModel,
    pub model: FcnModel,
    pub scaler: ParamScaler,
    /// Seed the network was initialized and shuffled with.
    pub seed: u64,
    /// Free-form provenance, stored as `meta.<key>` header entries.
    pub meta: BTreeMap<String, String>,
}

impl FcnModel {
    pub fn to_section(&self) -> Section {
        let mut s = Section::new("fcn");
        let sizes: Vec<String> = self.layer_sizes().iter().map(|v| v.to_string()).collect();
        s.set("layer_sizes", sizes.join(","));
        s.set("activation", self.activation);
        s.set(
            "layout",
            "input_shift[n0],input_scale[n0],then per layer weights[out*in] row-major,bias[out]",
        );
        s.values.extend(self.input_shift.iter());
        s.values.extend(self.input_scale.iter());
        for l in &self.layers {
            for row in l.weights.row_iter() {
                s.values.extend(row.iter());
            }
            s.values.extend(l.bias.iter());
        }
        s
    }

    pub fn from_section(s: &Section) -> Result<Self> {
        s.check_version()?;
        let sizes: Vec<usize> = s.require_list("layer_sizes")?;
        let activation: Activation = s
            .require::<String>("activation")?
            .parse()
            .map_err(|e: Error| Error::format(e.to_string()))?;
        let mut model = FcnModel::zeros(&sizes, activation).map_err(|e| Error::format(e.to_string()))?;
        let expected = 2 * sizes[0] + model.n_parameters();
        if s.values.len() != expected {
            return Err(Error::format(format!(
                "fcn payload has {} values, expected {expected}",
                s.values.len()
            )));
        }
        let mut rest = s.values.as_slice();
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        model.input_shift = DVector::from_column_slice(take(sizes[0]));
        model.input_scale = DVector::from_column_slice(take(sizes[0]));
        for (l, w) in model.layers.iter_mut().zip(sizes.windows(2)) {
            *l = Layer {
                weights: DMatrix::from_row_slice(w[1], w[0], take(w[0] * w[1])),
                bias: DVector::from_column_slice(take(w[1])),
            };
        }
        Ok(model)
    }
}

impl Checkpoint {
    pub fn predict(&self, series: &[f64]) -> Result<MaterialParams> {
        predict(&self.model, &self.pca, &self.scaler, series)
    }

    /// Batched [`Checkpoint::predict`] over the rows of an `n x d` matrix.
    pub fn predict_batch(&self, series: &DMatrix<f64>) -> Result<Vec<MaterialParams>> {
        predict_batch(&self.model, &self.pca, &self.scaler, series)
    }

    pub fn to_sections(&self) -> Vec<Section> {
        let mut fcn = self.model.to_section();
        fcn.set_f64_list("scale", &self.scaler.scale);
        fcn.set_f64_list("offset", &self.scaler.offset);
        fcn.set("seed", self.seed);
        for (k, v) in &self.meta {
            fcn.set(&format!("meta.{k}"), v);
        }
        vec![self.pca.to_section(), fcn]
    }

    pub fn from_sections(sections: &[Section]) -> Result<Self> {
        let pca = PcaModel::from_section(container::find(sections, "pca")?)?;
        let fcn = container::find(sections, "fcn")?;
        let model = FcnModel::from_section(fcn)?;
        let scaler = ParamScaler::from_header(fcn)?;
        let seed = fcn.require("seed")?;
        let meta = fcn
            .entries()
            .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.to_string())))
            .collect();
        if model.n_inputs() != pca.k() || model.n_outputs() != 7 {
            return Err(Error::format(format!(
                "network maps {} -> {} but the PCA basis has {} components",
                model.n_inputs(),
                model.n_outputs(),
                pca.k()
            )));
        }
        Ok(Self {
            pca,
            model,
            scaler,
            seed,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::save(path, &self.to_sections())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_sections(&container::load(path)?)
    }
}
