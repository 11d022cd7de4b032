//! Principal component reduction of stress series by randomized SVD.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::container::Section;
use crate::error::{Error, Result};

/// Ratio `s[k-1] / s[0]` below which a fit is flagged as rank deficient.
pub const RANK_DEFICIENT_RATIO: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcaOptions {
    pub k: usize,
    pub oversampling: usize,
    pub power_iters: usize,
    pub seed: u64,
    /// Subtract the column mean before projecting. When false the stored
    /// mean is zero and coefficients are raw inner products.
    pub centered: bool,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            k: 50,
            oversampling: 10,
            power_iters: 2,
            seed: 0,
            centered: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `k x d`, orthonormal rows.
    pub components: DMatrix<f64>,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub centered: bool,
}

/// Orthonormal basis of the column space of `m` (thin Q factor).
fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Randomized rank-`k` SVD of the row-stacked series in `data` (`n x d`).
pub fn fit(data: &DMatrix<f64>, opts: &PcaOptions) -> Result<PcaModel> {
    let (n, d) = data.shape();
    let k = opts.k;
    if k == 0 || k > n || k > d {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {k} components to {n} samples of length {d}"
        )));
    }
    let mean = if opts.centered {
        data.row_mean().transpose()
    } else {
        DVector::zeros(d)
    };
    let mut a = data.clone();
    for mut row in a.row_iter_mut() {
        row -= mean.transpose();
    }

    let l = (k + opts.oversampling).min(n).min(d);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega = DMatrix::from_fn(d, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(&a * omega);
    for _ in 0..opts.power_iters {
        let z = orthonormalize(a.tr_mul(&q));
        q = orthonormalize(&a * z);
    }
    let b = q.tr_mul(&a);
    let svd = b.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InvalidArgument("SVD of the projected matrix failed".into()))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut components = DMatrix::zeros(k, d);
    let mut singular_values = Vec::with_capacity(k);
    for (row, &src) in order.iter().take(k).enumerate() {
        let mut v = v_t.row(src).clone_owned();
        // sign convention: the largest magnitude entry is positive
        let imax = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        components.set_row(row, &v);
        singular_values.push(svd.singular_values[src]);
    }
    let model = PcaModel {
        mean,
        components,
        singular_values,
        centered: opts.centered,
    };
    if model.is_rank_deficient() {
        log::warn!(
            "PCA rank deficient: s[{}]/s[0] = {:e}",
            k - 1,
            model.singular_values[k - 1] / model.singular_values[0]
        );
    }
    Ok(model)
}

/// Stacks equally long series into an `n x d` matrix.
pub fn stack_rows(rows: &[&[f64]]) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, |r| r.len());
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

impl PcaModel {
    pub fn d(&self) -> usize {
        self.components.ncols()
    }

    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn is_rank_deficient(&self) -> bool {
        let s0 = self.singular_values[0];
        s0 == 0.0 || self.singular_values[self.k() - 1] / s0 < RANK_DEFICIENT_RATIO
    }

    pub fn transform(&self, series: &[f64]) -> Result<Vec<f64>> {
        if series.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: series.len(),
            });
        }
        let x = DVector::from_column_slice(series) - &self.mean;
        Ok((&self.components * x).as_slice().to_vec())
    }

    /// Coefficients for every row of `data` (`n x d` to `n x k`).
    pub fn transform_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: data.ncols(),
            });
        }
        let mut a = data.clone();
        for mut row in a.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(a * self.components.transpose())
    }

    pub fn inverse_transform(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                got: coeffs.len(),
            });
        }
        let c = DVector::from_column_slice(coeffs);
        Ok((self.components.tr_mul(&c) + &self.mean).as_slice().to_vec())
    }

    /// `|X - X_hat|_F / |X - mean|_F` over the rows of `data`.
    pub fn reconstruction_error(&self, data: &DMatrix<f64>) -> Result<f64> {
        let coeffs = self.transform_rows(data)?;
        let mut num = 0.0;
        let mut den = 0.0;
        let recon = coeffs * &self.components;
        for i in 0..data.nrows() {
            for j in 0..data.ncols() {
                let centered = data[(i, j)] - self.mean[j];
                num += (centered - recon[(i, j)]).powi(2);
                den += centered * centered;
            }
        }
        Ok((num / den).sqrt())
    }

    /// Largest deviation of the Gram matrix of the components from identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = &self.components * self.components.transpose();
        let id = DMatrix::<f64>::identity(self.k(), self.k());
        (g - id).amax()
    }

    pub fn to_section(&self) -> Section {
        let mut s = Section::new("pca");
        s.set("d", self.d());
        s.set("k", self.k());
        s.set("centered", self.centered);
        s.set("layout", "mean[d],singular_values[k],components[k*d] row-major");
        s.values = self.mean.iter().copied().collect();
        s.values.extend_from_slice(&self.singular_values);
        for row in self.components.row_iter() {
            s.values.extend(row.iter());
        }
        s
    }

    pub fn from_section(s: &Section) -> Result<Self> {
        s.check_version()?;
        let d: usize = s.require("d")?;
        let k: usize = s.require("k")?;
        let centered: bool = s.require("centered")?;
        if s.values.len() != d + k + k * d {
            return Err(Error::format(format!(
                "pca payload has {} values, expected {}",
                s.values.len(),
                d + k + k * d
            )));
        }
        let (mean, rest) = s.values.split_at(d);
        let (sv, comps) = rest.split_at(k);
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            components: DMatrix::from_row_slice(k, d, comps),
            singular_values: sv.to_vec(),
            centered,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    // rows = offset + sum_j c_ij basis_j with a 3-dimensional basis
    fn affine_rank3(n: usize, d: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let basis = random_matrix(3, d, 8);
        let offset = DVector::from_fn(d, |j, _| (j as f64 * 0.1).sin() * 5.0);
        DMatrix::from_fn(n, d, |_, j| offset[j]) + DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-3.0..3.0)) * basis
    }

    #[test]
    fn exact_low_rank_is_reconstructed() {
        let x = affine_rank3(40, 30);
        let m = fit(&x, &PcaOptions { k: 3, ..Default::default() }).unwrap();
        assert!(m.reconstruction_error(&x).unwrap() <= 1e-10);
        assert!(m.orthonormality_defect() <= 1e-10);
        for r in 0..x.nrows() {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            let back = m.inverse_transform(&m.transform(&row).unwrap()).unwrap();
            for (a, b) in row.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn mean_maps_to_zero_and_back() {
        let x = random_matrix(30, 12, 1);
        let m = fit(&x, &PcaOptions { k: 4, ..Default::default() }).unwrap();
        let mean: Vec<f64> = m.mean.iter().copied().collect();
        assert!(m.transform(&mean).unwrap().iter().all(|c| c.abs() <= 1e-14));
        assert_eq!(m.inverse_transform(&[0.0; 4]).unwrap(), mean);

        let a1: Vec<f64> = mean.iter().zip(m.components.row(0).iter()).map(|(a, b)| a + b).collect();
        let c = m.transform(&a1).unwrap();
        assert!((c[0] - 1.0).abs() <= 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() <= 1e-12));
        let back = m.inverse_transform(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(back.iter().zip(&a1).all(|(x, y)| (x - y).abs() <= 1e-14));
    }

    #[test]
    fn uncentered_mode_keeps_zero_mean() {
        let x = random_matrix(20, 8, 2).add_scalar(3.0);
        let m = fit(&x, &PcaOptions { k: 2, centered: false, ..Default::default() }).unwrap();
        assert!(m.mean.iter().all(|&v| v == 0.0));
        let row: Vec<f64> = x.row(0).iter().copied().collect();
        let c = m.transform(&row).unwrap();
        let raw: f64 = m.components.row(0).iter().zip(&row).map(|(a, b)| a * b).sum();
        assert!((c[0] - raw).abs() <= 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let x = random_matrix(10, 6, 3);
        let m = fit(&x, &PcaOptions { k: 2, ..Default::default() }).unwrap();
        assert!(matches!(m.transform(&[0.0; 5]), Err(Error::DimensionMismatch { expected: 6, got: 5 })));
        assert!(matches!(m.inverse_transform(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
        assert!(fit(&x, &PcaOptions { k: 11, ..Default::default() }).is_err());
        assert!(fit(&x, &PcaOptions { k: 0, ..Default::default() }).is_err());
    }

    // random orthogonal factors around a geometrically decaying spectrum
    fn decaying_spectrum(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let r = n.min(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows, cols| DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
        let u = gauss(n, r).qr().q();
        let v = gauss(d, r).qr().q();
        let s = DMatrix::from_diagonal(&DVector::from_fn(r, |i, _| 100.0 * 0.5f64.powi(i as i32)));
        u * s * v.transpose()
    }

    fn dense_centered_singular_values(x: &DMatrix<f64>) -> Vec<f64> {
        let mut centered = x.clone();
        let mean = x.row_mean();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let mut dense: Vec<f64> = centered.singular_values().iter().copied().collect();
        dense.sort_by(|a, b| b.total_cmp(a));
        dense
    }

    #[test]
    fn singular_values_match_dense_svd() {
        for (n, d, seed) in [(200, 100, 1u64), (60, 80, 2), (150, 40, 3)] {
            let x = decaying_spectrum(n, d, seed);
            let k = 10;
            let m = fit(&x, &PcaOptions { k, seed, ..Default::default() }).unwrap();
            let dense = dense_centered_singular_values(&x);
            for i in 0..k {
                assert!((m.singular_values[i] - dense[i]).abs() <= 1e-6 * dense[i], "{n}x{d} s{i}");
            }
        }
    }

    #[test]
    fn full_width_sketch_is_exact_on_flat_spectra() {
        let x = random_matrix(50, 30, 5);
        let m = fit(&x, &PcaOptions { k: 20, ..Default::default() }).unwrap();
        let dense = dense_centered_singular_values(&x);
        for i in 0..20 {
            assert!((m.singular_values[i] - dense[i]).abs() <= 1e-10 * dense[0]);
        }
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let x = affine_rank3(30, 20);
        let m = fit(&x, &PcaOptions { k: 5, ..Default::default() }).unwrap();
        assert!(m.is_rank_deficient());
        let m = fit(&x, &PcaOptions { k: 3, ..Default::default() }).unwrap();
        assert!(!m.is_rank_deficient());
    }

    #[test]
    fn section_round_trip() {
        let x = random_matrix(15, 9, 4);
        let m = fit(&x, &PcaOptions { k: 3, ..Default::default() }).unwrap();
        assert_eq!(PcaModel::from_section(&m.to_section()).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn projection_properties(seed in 0u64..1000, k in 1usize..6) {
            let x = random_matrix(25, 10, seed);
            let m = fit(&x, &PcaOptions { k, seed, ..Default::default() }).unwrap();
            prop_assert!(m.orthonormality_defect() <= 1e-10);
            prop_assert!(m.singular_values.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(m.singular_values.iter().all(|&s| s >= 0.0));
            let probe = random_matrix(1, 10, seed + 1);
            let row: Vec<f64> = probe.iter().copied().collect();
            let c = m.transform(&row).unwrap();
            let recon = m.inverse_transform(&c).unwrap();
            let c2 = m.transform(&recon).unwrap();
            for (a, b) in c.iter().zip(&c2) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
            let resid: f64 = row.iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dev: f64 = row.iter().zip(m.mean.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(resid <= dev + 1e-12);
        }
    }
}
