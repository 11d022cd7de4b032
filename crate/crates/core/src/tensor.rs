//! Small fixed-size tensors for single material point computations.
//!
//! Symmetric tensors store six components and skew tensors three, so
//! (anti)symmetry holds by construction.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Degeneracy threshold for stress and stretching norms.
pub const EPS_NORM: f64 = 1e-12;

/// Symmetric second order tensor in 3D.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymTensor3 {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub yz: f64,
    pub xz: f64,
}

/// Antisymmetric second order tensor in 3D.
///
/// `xy` is the (1,2) entry; the (2,1) entry is `-xy`, and likewise for `yz`, `xz`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SkewTensor3 {
    pub xy: f64,
    pub yz: f64,
    pub xz: f64,
}

pub type Mat3 = [[f64; 3]; 3];

impl SymTensor3 {
    pub const fn zero() -> Self {
        Self::diag(0.0, 0.0, 0.0)
    }

    pub const fn identity() -> Self {
        Self::diag(1.0, 1.0, 1.0)
    }

    pub const fn diag(xx: f64, yy: f64, zz: f64) -> Self {
        Self {
            xx,
            yy,
            zz,
            xy: 0.0,
            yz: 0.0,
            xz: 0.0,
        }
    }

    /// Builds a tensor from the upper triangle of `m`.
    pub fn from_upper(m: &Mat3) -> Self {
        Self {
            xx: m[0][0],
            yy: m[1][1],
            zz: m[2][2],
            xy: m[0][1],
            yz: m[1][2],
            xz: m[0][2],
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    /// `sqrt(tr(T T))`, the full contraction norm (off-diagonals count twice).
    pub fn norm(&self) -> f64 {
        let diag = self.xx * self.xx + self.yy * self.yy + self.zz * self.zz;
        let off = self.xy * self.xy + self.yz * self.yz + self.xz * self.xz;
        (diag + 2.0 * off).sqrt()
    }

    /// Returns `T / |T|`, failing when `|T| <= EPS_NORM`.
    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > EPS_NORM) {
            return Err(Error::NormTooSmall { norm: n });
        }
        Ok(*self * (1.0 / n))
    }

    pub fn max_off_diagonal(&self) -> f64 {
        self.xy.abs().max(self.yz.abs()).max(self.xz.abs())
    }

    pub fn is_finite(&self) -> bool {
        [self.xx, self.yy, self.zz, self.xy, self.yz, self.xz]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Eigenvalues and eigenvectors (as columns) by cyclic Jacobi rotations.
    ///
    /// Diagonal input is returned unchanged with the identity basis.
    pub fn eigen(&self) -> ([f64; 3], Mat3) {
        let mut a = self.to_matrix();
        let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for _sweep in 0..50 {
            let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
            let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
            if off == 0.0 || off <= f64::EPSILON * 1e-3 * scale {
                break;
            }
            for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
        ([a[0][0], a[1][1], a[2][2]], v)
    }

    /// Matrix exponential through `exp(Q L Q^T) = Q exp(L) Q^T`.
    pub fn exp(&self) -> Self {
        let (lambda, q) = self.eigen();
        let e = lambda.map(f64::exp);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                out[i][j] = (0..3).map(|k| q[i][k] * e[k] * q[j][k]).sum();
            }
        }
        Self::from_upper(&out)
    }
}

// Applies the Jacobi rotation in the (p, q) plane that annihilates a[p][q].
fn rotate(a: &mut Mat3, v: &mut Mat3, p: usize, q: usize, c: f64, s: f64) {
    let r = 3 - p - q;
    let app = a[p][p];
    let aqq = a[q][q];
    let apq = a[p][q];
    a[p][p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
    a[q][q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
    a[p][q] = 0.0;
    a[q][p] = 0.0;
    let arp = a[r][p];
    let arq = a[r][q];
    a[r][p] = c * arp - s * arq;
    a[p][r] = a[r][p];
    a[r][q] = s * arp + c * arq;
    a[q][r] = a[r][q];
    for row in v.iter_mut() {
        let vp = row[p];
        let vq = row[q];
        row[p] = c * vp - s * vq;
        row[q] = s * vp + c * vq;
    }
}

impl SkewTensor3 {
    pub const fn zero() -> Self {
        Self {
            xy: 0.0,
            yz: 0.0,
            xz: 0.0,
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        [
            [0.0, self.xy, self.xz],
            [-self.xy, 0.0, self.yz],
            [-self.xz, -self.yz, 0.0],
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.xy == 0.0 && self.yz == 0.0 && self.xz == 0.0
    }

    /// Spin term `W S - S W`, symmetric whenever `S` is.
    pub fn commutator(&self, s: &SymTensor3) -> SymTensor3 {
        if self.is_zero() {
            return SymTensor3::zero();
        }
        let w = self.to_matrix();
        let sm = s.to_matrix();
        let ws = matmul(&w, &sm);
        let sw = matmul(&sm, &w);
        let mut d = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = ws[i][j] - sw[i][j];
            }
        }
        SymTensor3::from_upper(&d)
    }
}

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

impl Add for SymTensor3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            xx: self.xx + o.xx,
            yy: self.yy + o.yy,
            zz: self.zz + o.zz,
            xy: self.xy + o.xy,
            yz: self.yz + o.yz,
            xz: self.xz + o.xz,
        }
    }
}

impl AddAssign for SymTensor3 {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for SymTensor3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for SymTensor3 {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl Mul<f64> for SymTensor3 {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self {
            xx: self.xx * k,
            yy: self.yy * k,
            zz: self.zz * k,
            xy: self.xy * k,
            yz: self.yz * k,
            xz: self.xz * k,
        }
    }
}
