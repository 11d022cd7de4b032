//! Uniform parameter sampling and batch generation of labeled stress series.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::constitutive::{MaterialParams, PARAM_NAMES};
use crate::container::{self, Section};
use crate::element_test::{run_test, InitialState, LoadingSchedule, StressSeries};
use crate::error::{Error, Result};

/// Attempts per sample before generation gives up on that sample.
const MAX_ATTEMPTS_PER_SAMPLE: usize = 100;

/// Componentwise sampling interval for the seven parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBounds {
    pub lower: [f64; 7],
    pub upper: [f64; 7],
}

impl Default for ParamBounds {
    /// Hostun base values +-5 %.
    fn default() -> Self {
        Self {
            lower: [-1.8519, -1.0761, 0.5241, -1232.7, -4383.8, 2107.1, 0.8268],
            upper: [-1.6755, -0.9737, 0.5793, -1115.3, -3966.3, 2328.9, 0.9138],
        }
    }
}

impl ParamBounds {
    /// Default bounds but with the c2 interval spanned by the printed table
    /// entries -0.1076 and -0.9737.
    pub fn table_literal() -> Self {
        let mut b = Self::default();
        b.lower[1] = -0.9737;
        b.upper[1] = -0.1076;
        b
    }

    /// A single point; sampling always returns `p`.
    pub fn point(p: &MaterialParams) -> Self {
        Self {
            lower: p.to_array(),
            upper: p.to_array(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..7 {
            let (l, u) = (self.lower[i], self.upper[i]);
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(Error::InvalidArgument(format!(
                    "bounds for {}: [{l}, {u}] is not an interval",
                    PARAM_NAMES[i]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &MaterialParams) -> bool {
        let a = p.to_array();
        (0..7).all(|i| a[i] >= self.lower[i] && a[i] <= self.upper[i])
    }
}

/// Draws each component independently and uniformly from its interval.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, bounds: &ParamBounds) -> MaterialParams {
    let mut a = [0.0; 7];
    for (i, v) in a.iter_mut().enumerate() {
        let (l, u) = (bounds.lower[i], bounds.upper[i]);
        let x = l + (u - l) * rng.gen::<f64>();
        *v = x.clamp(l, u);
    }
    MaterialParams::from_array(a)
}

/// Independent stream for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Position in generation order; unique within a dataset.
    pub id: usize,
    pub params: MaterialParams,
    pub series: StressSeries,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub schedule: LoadingSchedule,
    pub init: InitialState,
    pub seed: u64,
    pub bounds: ParamBounds,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenStats {
    pub drawn: usize,
    pub rejected: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.schedule.n_steps
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_steps();
        for s in &self.samples {
            if s.series.values.len() != d {
                return Err(Error::format(format!(
                    "sample {} has {} steps, expected {d}",
                    s.id,
                    s.series.values.len()
                )));
            }
            if !self.bounds.contains(&s.params) {
                return Err(Error::format(format!("sample {} lies outside the bounds", s.id)));
            }
        }
        Ok(())
    }

    /// Row-major `n x d` stress matrix.
    pub fn series_rows(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.series.values.as_slice()).collect()
    }

    fn subset(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            samples,
            schedule: self.schedule,
            init: self.init,
            seed: self.seed,
            bounds: self.bounds,
        }
    }
}

fn generate_one(
    seed: u64,
    index: usize,
    bounds: &ParamBounds,
    init: &InitialState,
    schedule: &LoadingSchedule,
) -> Result<(Sample, usize)> {
    let mut rng = sample_rng(seed, index as u64);
    let mut rejected = 0;
    loop {
        let params = sample_params(&mut rng, bounds);
        match run_test(&params, init, schedule) {
            Ok(series) => {
                return Ok((
                    Sample {
                        id: index,
                        params,
                        series,
                    },
                    rejected,
                ))
            }
            Err(Error::Diverged { step, reason }) => {
                log::debug!("sample {index}: draw diverged at step {step}: {reason}");
                rejected += 1;
                if rejected >= MAX_ATTEMPTS_PER_SAMPLE {
                    return Err(Error::TooManyRejections {
                        rejected,
                        drawn: rejected,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Generates `n` labeled series; the result depends on `seed` only, not on `workers`.
pub fn generate_dataset(
    n: usize,
    bounds: &ParamBounds,
    init: &InitialState,
    schedule: &LoadingSchedule,
    seed: u64,
    workers: usize,
) -> Result<(Dataset, GenStats)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    bounds.validate()?;
    init.validate()?;
    schedule.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(Sample, usize)>> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| generate_one(seed, i, bounds, init, schedule))
            .collect()
    });
    let mut samples = Vec::with_capacity(n);
    let mut stats = GenStats::default();
    for r in results {
        match r {
            Ok((s, rej)) => {
                stats.rejected += rej;
                stats.drawn += rej + 1;
                samples.push(s);
            }
            Err(Error::TooManyRejections { rejected, .. }) => {
                stats.rejected += rejected;
                stats.drawn += rejected;
            }
            Err(e) => return Err(e),
        }
    }
    if samples.len() < n || stats.rejected * 10 > stats.drawn {
        return Err(Error::TooManyRejections {
            rejected: stats.rejected,
            drawn: stats.drawn,
        });
    }
    let ds = Dataset {
        samples,
        schedule: *schedule,
        init: *init,
        seed,
        bounds: *bounds,
    };
    Ok((ds, stats))
}

/// First `floor(n * train_fraction)` samples train, the rest test.
pub fn split_dataset(ds: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n_train = (ds.len() as f64 * train_fraction).floor() as usize;
    let (a, b) = ds.samples.split_at(n_train);
    Ok((ds.subset(a.to_vec()), ds.subset(b.to_vec())))
}

pub fn dataset_section(ds: &Dataset) -> Section {
    let mut s = Section::new("dataset");
    s.set("n_samples", ds.len());
    s.set("n_steps", ds.n_steps());
    s.set_f64("dt", ds.schedule.dt);
    s.set("seed", ds.seed);
    s.set_f64("piston_rate", ds.schedule.piston_rate);
    s.set_f64("sample_height", ds.schedule.sample_height);
    s.set_f64("loading_fraction", ds.schedule.loading_fraction);
    s.set("substeps", ds.schedule.substeps);
    s.set_f64("init_stress", ds.init.isotropic_stress);
    s.set_f64("init_void_ratio", ds.init.void_ratio);
    s.set_f64_list("bounds_lower", &ds.bounds.lower);
    s.set_f64_list("bounds_upper", &ds.bounds.upper);
    s.set("record", "c1,c2,c3,c4,c5,c6,ec0,neg_sigma1[n_steps]");
    s.values = Vec::with_capacity(ds.len() * (7 + ds.n_steps()));
    for sample in &ds.samples {
        s.values.extend_from_slice(&sample.params.to_array());
        s.values.extend_from_slice(&sample.series.values);
    }
    s
}

fn array7(v: Vec<f64>, key: &str) -> Result<[f64; 7]> {
    v.try_into()
        .map_err(|v: Vec<f64>| Error::format(format!("`{key}` has {} entries, expected 7", v.len())))
}

pub fn dataset_from_section(s: &Section) -> Result<Dataset> {
    s.check_version()?;
    let n: usize = s.require("n_samples")?;
    let d: usize = s.require("n_steps")?;
    let schedule = LoadingSchedule {
        piston_rate: s.require("piston_rate")?,
        sample_height: s.require("sample_height")?,
        dt: s.require("dt")?,
        n_steps: d,
        loading_fraction: s.require("loading_fraction")?,
        substeps: s.require("substeps")?,
    };
    let init = InitialState {
        isotropic_stress: s.require("init_stress")?,
        void_ratio: s.require("init_void_ratio")?,
    };
    let bounds = ParamBounds {
        lower: array7(s.require_list("bounds_lower")?, "bounds_lower")?,
        upper: array7(s.require_list("bounds_upper")?, "bounds_upper")?,
    };
    let record = 7 + d;
    if s.values.len() != n * record {
        return Err(Error::format(format!(
            "dataset payload has {} values, expected {n} records of {record} (n_steps = {d})",
            s.values.len()
        )));
    }
    let samples = s
        .values
        .chunks_exact(record)
        .enumerate()
        .map(|(id, chunk)| {
            let params = MaterialParams::from_array(chunk[..7].try_into().unwrap());
            Sample {
                id,
                params,
                series: StressSeries {
                    values: chunk[7..].to_vec(),
                    dt: schedule.dt,
                    params: Some(params),
                },
            }
        })
        .collect();
    let ds = Dataset {
        samples,
        schedule,
        init,
        seed: s.require("seed")?,
        bounds,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    container::save(path, &[dataset_section(ds)])
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let sections = container::load(path)?;
    dataset_from_section(container::find(&sections, "dataset")?)
}

/// Plain CSV: one row per sample, parameters then the stress series.
pub fn export_csv<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    let mut header: Vec<String> = PARAM_NAMES.iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.n_steps()).map(|k| format!("s{k}")));
    writeln!(out, "# {}", header.join(","))?;
    for s in &ds.samples {
        let row: Vec<String> = s
            .params
            .to_array()
            .iter()
            .chain(&s.series.values)
            .map(|v| format!("{v:.16e}"))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_schedule() -> LoadingSchedule {
        LoadingSchedule {
            n_steps: 40,
            substeps: 2,
            ..Default::default()
        }
    }

    #[test]
    fn default_bounds_are_plus_minus_five_percent() {
        let b = ParamBounds::default();
        b.validate().unwrap();
        let base = MaterialParams::HOSTUN.to_array();
        for i in 0..7 {
            let (lo, hi) = if base[i] < 0.0 { (1.05, 0.95) } else { (0.95, 1.05) };
            assert!((b.lower[i] - lo * base[i]).abs() <= 1e-4 * base[i].abs(), "{i}");
            assert!((b.upper[i] - hi * base[i]).abs() <= 1e-4 * base[i].abs(), "{i}");
        }
        assert_eq!(b.lower[0], -1.8519);
        assert_eq!(b.upper[0], -1.6755);
        assert_eq!(b.lower[6], 0.8268);
        assert_eq!(b.upper[6], 0.9138);
        ParamBounds::table_literal().validate().unwrap();
    }

    #[test]
    fn degenerate_bounds_return_the_point() {
        let b = ParamBounds::point(&MaterialParams::HOSTUN);
        let mut rng = sample_rng(3, 0);
        for _ in 0..10 {
            assert_eq!(sample_params(&mut rng, &b), MaterialParams::HOSTUN);
        }
    }

    #[test]
    fn inverted_bounds_rejected() {
        let mut b = ParamBounds::default();
        b.lower[2] = 0.6;
        assert!(b.validate().is_err());
    }

    #[test]
    fn samples_are_uniform_and_contained() {
        let b = ParamBounds::default();
        let mut rng = sample_rng(11, 0);
        let n = 20_000;
        let draws: Vec<_> = (0..n).map(|_| sample_params(&mut rng, &b)).collect();
        assert!(draws.iter().all(|p| b.contains(p)));
        for i in 0..7 {
            let width = b.upper[i] - b.lower[i];
            let mean = draws.iter().map(|p| p.to_array()[i]).sum::<f64>() / n as f64;
            let mid = 0.5 * (b.lower[i] + b.upper[i]);
            let stderr = width / 12f64.sqrt() / (n as f64).sqrt();
            assert!((mean - mid).abs() <= 3.0 * stderr, "{}: {mean} vs {mid}", PARAM_NAMES[i]);
        }
    }

    #[test]
    fn generation_is_independent_of_worker_count() {
        let s = short_schedule();
        let init = InitialState::default();
        let b = ParamBounds::default();
        let (a, sa) = generate_dataset(10, &b, &init, &s, 5, 1).unwrap();
        let (c, sc) = generate_dataset(10, &b, &init, &s, 5, 8).unwrap();
        assert_eq!(a, c);
        assert_eq!(sa, sc);
        assert_eq!(sa.drawn, 10);
        let (other, _) = generate_dataset(10, &b, &init, &s, 6, 1).unwrap();
        assert_ne!(a.samples[0].params, other.samples[0].params);
    }

    #[test]
    fn split_sizes() {
        let s = short_schedule();
        let (ds, _) =
            generate_dataset(4, &ParamBounds::default(), &InitialState::default(), &s, 1, 1)
                .unwrap();
        let (tr, te) = split_dataset(&ds, 0.75).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 1));
        assert_eq!(te.samples[0].id, 3);
        assert!(split_dataset(&ds, 1.0).is_err());
        assert!(split_dataset(&ds, 0.0).is_err());
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let (ds, _) = generate_dataset(
            3,
            &ParamBounds::default(),
            &InitialState::default(),
            &short_schedule(),
            9,
            1,
        )
        .unwrap();
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));

        // header claims a different series length than the payload holds
        let mut sec = dataset_section(&ds);
        sec.set("n_steps", 41);
        container::save(&path, &[sec]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));

        assert!(matches!(
            load_dataset(&dir.path().join("missing.bin")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_export_has_one_row_per_sample() {
        let (ds, _) = generate_dataset(
            2,
            &ParamBounds::default(),
            &InitialState::default(),
            &short_schedule(),
            2,
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        export_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("# c1,c2"));
        assert_eq!(lines[1].split(',').count(), 47);
    }
}
