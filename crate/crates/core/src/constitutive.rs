//! Barodesy rate equations for sand at a single material point.
//!
//! Stresses are in kPa with compression negative. The stress rate is
//!
//! ```text
//! dS/dt = W S - S W + h_b(σ) (f_b R⁰ + g_b S⁰) |D|
//! de/dt = (1 + e) tr(D)
//! ```
//!
//! with `σ = |S|`, `R = tr(D⁰) I + c1 exp(c2 D⁰)`, `h_b = σ^c3`,
//! `f_b = c4 tr(D⁰) + c5 (e - e_c) + c6`, `g_b = -c6` and the critical void
//! ratio `e_c = (1 + e_c0) exp(σ^(1-c3) / (c4 (1 - c3))) - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{SkewTensor3, SymTensor3, EPS_NORM};

pub const PARAM_NAMES: [&str; 7] = ["c1", "c2", "c3", "c4", "c5", "c6", "ec0"];

/// The seven barodesy material constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub ec0: f64,
}

impl MaterialParams {
    /// Hostun sand.
    pub const HOSTUN: MaterialParams = MaterialParams {
        c1: -1.7637,
        c2: -1.0249,
        c3: 0.5517,
        c4: -1174.0,
        c5: -4175.0,
        c6: 2218.0,
        ec0: 0.8703,
    };

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            c1: a[0],
            c2: a[1],
            c3: a[2],
            c4: a[3],
            c5: a[4],
            c6: a[5],
            ec0: a[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.c1, self.c2, self.c3, self.c4, self.c5, self.c6, self.ec0,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.to_array().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "{} is not finite",
                PARAM_NAMES[i]
            )));
        }
        if !(self.c3 > 0.0 && self.c3 < 1.0) {
            return Err(Error::InvalidParams(format!(
                "c3 = {} must lie in (0, 1)",
                self.c3
            )));
        }
        if self.c4 == 0.0 {
            return Err(Error::InvalidParams("c4 must be nonzero".into()));
        }
        Ok(())
    }
}

/// Stress and void ratio at a material point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialState {
    pub stress: SymTensor3,
    pub void_ratio: f64,
}

impl MaterialState {
    pub fn validate(&self) -> Result<()> {
        let n = self.stress.norm();
        if !(n > EPS_NORM) {
            return Err(Error::NormTooSmall { norm: n });
        }
        if !(self.void_ratio > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "void ratio {} must be positive",
                self.void_ratio
            )));
        }
        Ok(())
    }
}

/// Time derivative of a [`MaterialState`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateRate {
    pub stress: SymTensor3,
    pub void_ratio: f64,
}

/// Critical void ratio at stress norm `sigma`.
pub fn critical_void_ratio(sigma: f64, p: &MaterialParams) -> Result<f64> {
    if p.c3 >= 1.0 {
        return Err(Error::InvalidParams(format!("c3 = {} must be < 1", p.c3)));
    }
    if p.c4 == 0.0 {
        return Err(Error::InvalidParams("c4 must be nonzero".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stress norm {sigma} must be positive"
        )));
    }
    let one_minus = 1.0 - p.c3;
    Ok((1.0 + p.ec0) * (sigma.powf(one_minus) / (p.c4 * one_minus)).exp() - 1.0)
}

/// `R = tr(D⁰) I + c1 exp(c2 D⁰)` for a unit stretching direction `d0`.
pub fn response_tensor(d0: &SymTensor3, p: &MaterialParams) -> SymTensor3 {
    SymTensor3::identity() * d0.trace() + (*d0 * p.c2).exp() * p.c1
}

/// Constitutive part `H(S, D, e)`; zero when `|D| <= EPS_NORM`.
pub fn stress_response(
    stress: &SymTensor3,
    void_ratio: f64,
    d: &SymTensor3,
    p: &MaterialParams,
) -> Result<SymTensor3> {
    let d_norm = d.norm();
    if d_norm <= EPS_NORM {
        return Ok(SymTensor3::zero());
    }
    let sigma = stress.norm();
    let s0 = stress.normalize()?;
    let d0 = *d * (1.0 / d_norm);
    let r0 = response_tensor(&d0, p).normalize()?;
    let ec = critical_void_ratio(sigma, p)?;
    let hb = sigma.powf(p.c3);
    let fb = p.c4 * d0.trace() + p.c5 * (void_ratio - ec) + p.c6;
    let gb = -p.c6;
    Ok((r0 * fb + s0 * gb) * (hb * d_norm))
}

/// Right-hand side of the barodesy system for prescribed stretching and spin.
pub fn barodesy_rhs(
    state: &MaterialState,
    d: &SymTensor3,
    w: &SkewTensor3,
    p: &MaterialParams,
) -> Result<StateRate> {
    let sigma = state.stress.norm();
    if !(sigma > EPS_NORM) {
        return Err(Error::NormTooSmall { norm: sigma });
    }
    let h = stress_response(&state.stress, state.void_ratio, d, p)?;
    Ok(StateRate {
        stress: w.commutator(&state.stress) + h,
        void_ratio: (1.0 + state.void_ratio) * d.trace(),
    })
}
