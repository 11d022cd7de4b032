//! Per-parameter affine map between physical and network target units.

use std::fmt;
use std::str::FromStr;

use crate::constitutive::{MaterialParams, PARAM_NAMES};
use crate::container::Section;
use crate::datagen::ParamBounds;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScalingMode {
    /// Identity.
    None,
    /// Fixed factors bringing every parameter to magnitude ~1e3.
    #[default]
    Magnitude,
    /// Maps each sampling interval onto `[1, 2]`.
    MinMax,
}

impl ScalingMode {
    pub fn name(self) -> &'static str {
        match self {
            ScalingMode::None => "none",
            ScalingMode::Magnitude => "magnitude",
            ScalingMode::MinMax => "minmax",
        }
    }
}

impl fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScalingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ScalingMode::None),
            "magnitude" => Ok(ScalingMode::Magnitude),
            "minmax" => Ok(ScalingMode::MinMax),
            _ => Err(Error::Config(format!(
                "unknown scaling `{s}` (none, magnitude, minmax)"
            ))),
        }
    }
}

/// `scaled = (mu - offset) * scale`, componentwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamScaler {
    pub scale: [f64; 7],
    pub offset: [f64; 7],
}

impl ParamScaler {
    pub const MAGNITUDE: [f64; 7] = [1000.0, 1000.0, 1000.0, 1.0, 1.0, 1.0, 1000.0];

    pub fn identity() -> Self {
        Self {
            scale: [1.0; 7],
            offset: [0.0; 7],
        }
    }

    pub fn magnitude() -> Self {
        Self {
            scale: Self::MAGNITUDE,
            offset: [0.0; 7],
        }
    }

    pub fn min_max(bounds: &ParamBounds) -> Result<Self> {
        bounds.validate()?;
        let mut s = Self::identity();
        for i in 0..7 {
            let width = bounds.upper[i] - bounds.lower[i];
            if width <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "min-max scaling needs a nonempty interval for {}",
                    PARAM_NAMES[i]
                )));
            }
            s.scale[i] = 1.0 / width;
            s.offset[i] = bounds.lower[i] - width;
        }
        Ok(s)
    }

    pub fn for_mode(mode: ScalingMode, bounds: &ParamBounds) -> Result<Self> {
        match mode {
            ScalingMode::None => Ok(Self::identity()),
            ScalingMode::Magnitude => Ok(Self::magnitude()),
            ScalingMode::MinMax => Self::min_max(bounds),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..7 {
            if !(self.scale[i].is_finite() && self.scale[i] > 0.0 && self.offset[i].is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "scaler entry for {} is not a positive finite affine map",
                    PARAM_NAMES[i]
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&self, p: &MaterialParams) -> [f64; 7] {
        let a = p.to_array();
        std::array::from_fn(|i| (a[i] - self.offset[i]) * self.scale[i])
    }

    pub fn unapply(&self, scaled: &[f64]) -> Result<MaterialParams> {
        if scaled.len() != 7 {
            return Err(Error::DimensionMismatch {
                expected: 7,
                got: scaled.len(),
            });
        }
        Ok(MaterialParams::from_array(std::array::from_fn(|i| {
            scaled[i] / self.scale[i] + self.offset[i]
        })))
    }

    /// Reads the `scale` and `offset` header lists of `s`.
    pub fn from_header(s: &Section) -> Result<Self> {
        let scale: Vec<f64> = s.require_list("scale")?;
        let offset: Vec<f64> = s.require_list("offset")?;
        let to7 = |v: Vec<f64>| -> Result<[f64; 7]> {
            let n = v.len();
            v.try_into()
                .map_err(|_| Error::format(format!("scaler list has {n} entries, expected 7")))
        };
        let out = Self {
            scale: to7(scale)?,
            offset: to7(offset)?,
        };
        out.validate()?;
        Ok(out)
    }
}
