//! Time-series data model: index splits, observation matrices, analytic
//! signals with Gaussian noise, and duplicate-free datasets.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, GaussianStream};
use crate::scalar::Scalar;

const NOISE_STREAM: u64 = 0x006e_6f69_7365;
const SPLIT_STREAM: u64 = 0x0073_706c_6974;
const MAX_RESAMPLES: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Inputs are the first `N_x` points, outputs the remaining suffix.
    Forecast,
    /// Inputs are a seeded uniformly random `N_x`-subset.
    Imputation,
}

/// Disjoint input/output index lists covering `0..N` (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    pub n_points: usize,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl IndexSets {
    pub fn n_input(&self) -> usize {
        self.input.len()
    }

    pub fn n_output(&self) -> usize {
        self.output.len()
    }

    /// Checks disjointness, coverage, ordering and non-emptiness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n_points];
        for list in [&self.input, &self.output] {
            if list.is_empty() {
                return Err(Error::InvalidConfig("empty index set".into()));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig("index set not strictly ascending".into()));
            }
            for &i in list.iter() {
                if i >= self.n_points || seen[i] {
                    return Err(Error::InvalidConfig(format!("index {i} repeated or out of range")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig("index sets do not cover [N]".into()));
        }
        Ok(())
    }
}

pub fn make_index_sets(
    n_points: usize,
    n_input: usize,
    mode: SplitMode,
    seed: u64,
) -> Result<IndexSets> {
    if n_input == 0 || n_input >= n_points {
        return Err(Error::InvalidConfig(format!(
            "N_x = {n_input} must lie in 1..={} for N = {n_points}",
            n_points.saturating_sub(1)
        )));
    }
    let mut input: Vec<usize> = match mode {
        SplitMode::Forecast => (0..n_input).collect(),
        SplitMode::Imputation => {
            let mut pool: Vec<usize> = (0..n_points).collect();
            let mut g = GaussianStream::new(seed, SPLIT_STREAM);
            for k in 0..n_input {
                let j = k + g.index(n_points - k);
                pool.swap(k, j);
            }
            pool.truncate(n_input);
            pool
        }
    };
    input.sort_unstable();
    let mut is_input = vec![false; n_points];
    for &i in &input {
        is_input[i] = true;
    }
    let output = (0..n_points).filter(|&i| !is_input[i]).collect();
    let sets = IndexSets {
        n_points,
        input,
        output,
    };
    sets.validate()?;
    Ok(sets)
}

/// One-hot row-selection matrix `M(I)`, one row per index.
pub fn observation_matrix<T: Scalar>(indices: &[usize], n_points: usize) -> Result<Matrix<T>> {
    let mut seen = vec![false; n_points];
    for &i in indices {
        if i >= n_points {
            return Err(Error::InvalidInput(format!("index {i} out of range for N = {n_points}")));
        }
        if seen[i] {
            return Err(Error::InvalidInput(format!("duplicate index {i}")));
        }
        seen[i] = true;
    }
    if indices.is_empty() {
        return Err(Error::InvalidInput("empty index list".into()));
    }
    Ok(Matrix::from_fn(indices.len(), n_points, |r, c| {
        if indices[r] == c {
            T::one()
        } else {
            T::zero()
        }
    }))
}

pub fn select<T: Copy>(values: &[T], indices: &[usize]) -> Vec<T> {
    indices.iter().map(|&i| values[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SineComponent<T> {
    pub amplitude: T,
    /// Angular frequency (radians per unit time).
    pub frequency: T,
    #[serde(default)]
    pub phase: T,
}

/// Analytic signal families with known Lipschitz constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SignalFamily<T> {
    Constant {
        value: T,
    },
    LinearRamp {
        slope: T,
        #[serde(default)]
        intercept: T,
    },
    SineMixture {
        components: Vec<SineComponent<T>>,
    },
    /// `level + slope · (1 − e^{−rate·t}) / rate`.
    DampedTrend {
        level: T,
        slope: T,
        rate: T,
    },
}

impl<T: Scalar> SignalFamily<T> {
    fn eval(&self, t: T) -> T {
        match self {
            Self::Constant { value } => *value,
            Self::LinearRamp { slope, intercept } => *slope * t + *intercept,
            Self::SineMixture { components } => components
                .iter()
                .map(|c| c.amplitude * (c.frequency * t + c.phase).sin())
                .sum(),
            Self::DampedTrend { level, slope, rate } => {
                *level + *slope * (-(-*rate * t).exp_m1()) / *rate
            }
        }
    }

    fn lipschitz(&self) -> T {
        match self {
            Self::Constant { .. } => T::zero(),
            Self::LinearRamp { slope, .. } => slope.abs(),
            Self::SineMixture { components } => components
                .iter()
                .map(|c| (c.amplitude * c.frequency).abs())
                .sum(),
            Self::DampedTrend { slope, .. } => slope.abs(),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: &T| v.is_finite();
        let ok = match self {
            Self::Constant { value } => finite(value),
            Self::LinearRamp { slope, intercept } => finite(slope) && finite(intercept),
            Self::SineMixture { components } => {
                !components.is_empty()
                    && components
                        .iter()
                        .all(|c| finite(&c.amplitude) && finite(&c.frequency) && finite(&c.phase))
            }
            Self::DampedTrend { level, slope, rate } => {
                finite(level) && finite(slope) && rate.is_finite() && *rate > T::zero()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid signal parameters: {self:?}")))
        }
    }
}

/// A signal `g` rescaled so that `|g(τΔ)| ≤ √N` on the sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SignalSpec<T> {
    pub family: SignalFamily<T>,
    pub scale: T,
    pub lipschitz_l0: T,
    pub amplitude_bound: T,
}

impl<T: Scalar> SignalSpec<T> {
    pub fn new(family: SignalFamily<T>, n_points: usize, delta: T) -> Result<Self> {
        family.validate()?;
        check_delta(delta)?;
        let bound = T::from_count(n_points).sqrt();
        let peak = (1..=n_points)
            .map(|tau| family.eval(T::from_count(tau) * delta).abs())
            .fold(T::zero(), T::max);
        let scale = if peak > bound { bound / peak } else { T::one() };
        Ok(Self {
            lipschitz_l0: scale * family.lipschitz(),
            family,
            scale,
            amplitude_bound: bound,
        })
    }

    /// Sine with unit amplitude and unit angular frequency: 1-Lipschitz.
    pub fn unit_sine(n_points: usize, delta: T) -> Result<Self> {
        Self::new(
            SignalFamily::SineMixture {
                components: vec![SineComponent {
                    amplitude: T::one(),
                    frequency: T::one(),
                    phase: T::zero(),
                }],
            },
            n_points,
            delta,
        )
    }

    pub fn eval(&self, t: T) -> T {
        self.scale * self.family.eval(t)
    }

    /// Noise-free samples `g(τΔ)`, τ = 1..=N.
    pub fn grid(&self, n_points: usize, delta: T) -> Vec<T> {
        (1..=n_points)
            .map(|tau| self.eval(T::from_count(tau) * delta))
            .collect()
    }

    /// Largest finite-difference slope on the grid.
    pub fn measured_slope(&self, n_points: usize, delta: T) -> T {
        self.grid(n_points, delta)
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / delta)
            .fold(T::zero(), T::max)
    }
}

fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if delta.is_finite() && delta > T::zero() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("sampling step Δ = {delta} must be > 0")))
    }
}

/// `f = [f_x, f_y]` with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SeriesSample<T> {
    pub f: Vec<T>,
    pub f_x: Vec<T>,
    pub f_y: Vec<T>,
    pub signal: SignalSpec<T>,
    pub delta: T,
    pub noise_variance: T,
    pub seed: u64,
}

impl<T: Scalar> SeriesSample<T> {
    /// Builds the split views of `f`.
    pub fn from_values(
        f: Vec<T>,
        sets: &IndexSets,
        signal: SignalSpec<T>,
        delta: T,
        noise_variance: T,
        seed: u64,
    ) -> Result<Self> {
        if f.len() != sets.n_points {
            return Err(Error::shape(sets.n_points, f.len()));
        }
        if !crate::scalar::all_finite(&f) {
            return Err(Error::InvalidInput("non-finite series".into()));
        }
        Ok(Self {
            f_x: select(&f, &sets.input),
            f_y: select(&f, &sets.output),
            f,
            signal,
            delta,
            noise_variance,
            seed,
        })
    }
}

/// `f_τ = g(τΔ) + ξ_τ`, `ξ_τ ~ N(0, v)` drawn from `seed`.
pub fn sample_series<T: Scalar>(
    signal: &SignalSpec<T>,
    delta: T,
    noise_variance: T,
    n_points: usize,
    sets: &IndexSets,
    seed: u64,
) -> Result<SeriesSample<T>> {
    check_delta(delta)?;
    if !(noise_variance.is_finite() && noise_variance >= T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "noise variance v = {noise_variance} must be >= 0"
        )));
    }
    if sets.n_points != n_points {
        return Err(Error::shape(
            format!("index sets over N = {n_points}"),
            format!("N = {}", sets.n_points),
        ));
    }
    let mut f = signal.grid(n_points, delta);
    if noise_variance > T::zero() {
        let sd = noise_variance.sqrt();
        let mut g = GaussianStream::new(seed, NOISE_STREAM);
        for v in &mut f {
            *v += sd * g.next_value::<T>();
        }
    }
    SeriesSample::from_values(f, sets, signal.clone(), delta, noise_variance, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    pub index_sets: IndexSets,
    pub samples: Vec<SeriesSample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.index_sets.n_points
    }

    /// Distinct signal specs in first-appearance order.
    pub fn signals(&self) -> Vec<SignalSpec<T>> {
        let mut out: Vec<SignalSpec<T>> = Vec::new();
        for s in &self.samples {
            if !out.contains(&s.signal) {
                out.push(s.signal.clone());
            }
        }
        out
    }

    /// Fresh noisy draws `f̃ = g(τΔ) + ξ` of the dataset's signals, cycling
    /// through the samples.
    pub fn resample(&self, noise_variance: T, count: usize, seed: u64) -> Result<Vec<SeriesSample<T>>> {
        if self.is_empty() {
            return Err(Error::InvalidInput("cannot resample an empty dataset".into()));
        }
        (0..count)
            .map(|k| {
                let src = &self.samples[k % self.samples.len()];
                sample_series(
                    &src.signal,
                    src.delta,
                    noise_variance,
                    self.n_points(),
                    &self.index_sets,
                    derive_seed(seed, &[k as u64]),
                )
            })
            .collect()
    }

    /// Like [`Dataset::resample`] but in mirrored pairs: draw `2j + 1` is
    /// `2 g(τΔ) − f̃` for draw `2j`, so the noise enters as `±ξ`.
    pub fn resample_antithetic(&self, noise_variance: T, count: usize, seed: u64) -> Result<Vec<SeriesSample<T>>> {
        if self.is_empty() {
            return Err(Error::InvalidInput("cannot resample an empty dataset".into()));
        }
        let mut out = Vec::with_capacity(count);
        for j in 0..count.div_ceil(2) {
            let src = &self.samples[j % self.samples.len()];
            let s = sample_series(
                &src.signal,
                src.delta,
                noise_variance,
                self.n_points(),
                &self.index_sets,
                derive_seed(seed, &[j as u64]),
            )?;
            let clean = src.signal.grid(self.n_points(), src.delta);
            let mirrored: Vec<T> = clean.iter().zip(&s.f).map(|(g, f)| *g + *g - *f).collect();
            out.push(s.clone());
            if out.len() < count {
                out.push(SeriesSample::from_values(
                    mirrored,
                    &self.index_sets,
                    s.signal.clone(),
                    s.delta,
                    noise_variance,
                    s.seed,
                )?);
            }
        }
        Ok(out)
    }

    pub fn mean_output(&self) -> Vec<T> {
        let ny = self.index_sets.n_output();
        let mut acc = vec![T::zero(); ny];
        for s in &self.samples {
            crate::scalar::axpy(T::one(), &s.f_y, &mut acc);
        }
        let n = T::from_count(self.samples.len().max(1));
        acc.into_iter().map(|v| v / n).collect()
    }

    /// `series_id,tau,value,is_input`, τ 1-based.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["series_id", "tau", "value", "is_input"])?;
        let mut is_input = vec![false; self.n_points()];
        for &i in &self.index_sets.input {
            is_input[i] = true;
        }
        for (id, s) in self.samples.iter().enumerate() {
            for (i, v) in s.f.iter().enumerate() {
                w.write_record([
                    id.to_string(),
                    (i + 1).to_string(),
                    format!("{v:e}"),
                    u8::from(is_input[i]).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// JSON sidecar: index sets plus per-sample provenance.
    pub fn write_sidecar<W: Write>(&self, writer: W) -> Result<()> {
        let meta = DatasetMeta {
            index_sets: self.index_sets.clone(),
            samples: self
                .samples
                .iter()
                .enumerate()
                .map(|(series_id, s)| SampleMeta {
                    series_id,
                    signal: s.signal.clone(),
                    delta: s.delta,
                    noise_variance: s.noise_variance,
                    seed: s.seed,
                })
                .collect(),
        };
        serde_json::to_writer_pretty(writer, &meta)?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv) + [`write_sidecar`](Self::write_sidecar).
    pub fn read<R1: Read, R2: Read>(csv_reader: R1, sidecar: R2) -> Result<Self> {
        let meta: DatasetMeta<T> = serde_json::from_reader(sidecar)?;
        meta.index_sets.validate()?;
        let n = meta.index_sets.n_points;
        let mut values: Vec<Vec<Option<T>>> = vec![vec![None; n]; meta.samples.len()];
        let mut r = csv::Reader::from_reader(csv_reader);
        for rec in r.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<&str> {
                rec.get(k)
                    .ok_or_else(|| Error::Io(format!("short CSV record: {rec:?}")))
            };
            let id: usize = parse(0)?.parse().map_err(|e| Error::Io(format!("{e}")))?;
            let tau: usize = parse(1)?.parse().map_err(|e| Error::Io(format!("{e}")))?;
            let v: f64 = parse(2)?.parse().map_err(|e| Error::Io(format!("{e}")))?;
            if id >= values.len() || tau == 0 || tau > n {
                return Err(Error::Io(format!("record out of range: {rec:?}")));
            }
            values[id][tau - 1] = Some(T::lit(v));
        }
        let samples = meta
            .samples
            .into_iter()
            .zip(values)
            .map(|(m, vals)| {
                let f: Option<Vec<T>> = vals.into_iter().collect();
                let f = f.ok_or_else(|| Error::Io(format!("series {} incomplete", m.series_id)))?;
                SeriesSample::from_values(f, &meta.index_sets, m.signal, m.delta, m.noise_variance, m.seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            index_sets: meta.index_sets,
            samples,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct SampleMeta<T> {
    series_id: usize,
    signal: SignalSpec<T>,
    delta: T,
    noise_variance: T,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct DatasetMeta<T> {
    index_sets: IndexSets,
    samples: Vec<SampleMeta<T>>,
}

/// `per_signal` draws of every signal; equal series are redrawn (v > 0) or
/// rejected (v = 0).
pub fn make_dataset<T: Scalar>(
    signals: &[SignalSpec<T>],
    per_signal: usize,
    delta: T,
    noise_variance: T,
    n_points: usize,
    sets: &IndexSets,
    seed: u64,
) -> Result<Dataset<T>> {
    if signals.is_empty() {
        return Err(Error::InvalidConfig("empty signal list".into()));
    }
    if per_signal == 0 {
        return Err(Error::InvalidConfig("per_signal must be >= 1".into()));
    }
    let mut samples: Vec<SeriesSample<T>> = Vec::with_capacity(signals.len() * per_signal);
    for (i, signal) in signals.iter().enumerate() {
        for j in 0..per_signal {
            let mut attempt = 0;
            loop {
                let s = derive_seed(seed, &[i as u64, j as u64, attempt]);
                let sample = sample_series(signal, delta, noise_variance, n_points, sets, s)?;
                match samples.iter().position(|o| o.f == sample.f) {
                    None => {
                        samples.push(sample);
                        break;
                    }
                    Some(first) if noise_variance == T::zero() || attempt + 1 >= MAX_RESAMPLES => {
                        return Err(Error::DuplicateSeries {
                            first,
                            second: samples.len(),
                        });
                    }
                    Some(_) => attempt += 1,
                }
            }
        }
    }
    Ok(Dataset {
        index_sets: sets.clone(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(slope: f64, n: usize, delta: f64) -> SignalSpec<f64> {
        SignalSpec::new(
            SignalFamily::LinearRamp {
                slope,
                intercept: 0.0,
            },
            n,
            delta,
        )
        .unwrap()
    }

    #[test]
    fn forecast_splits() {
        let s = make_index_sets(4, 3, SplitMode::Forecast, 0).unwrap();
        assert_eq!(s.input, vec![0, 1, 2]);
        assert_eq!(s.output, vec![3]);
        let s = make_index_sets(2, 1, SplitMode::Forecast, 0).unwrap();
        assert_eq!((s.input, s.output), (vec![0], vec![1]));
    }

    #[test]
    fn imputation_split_is_seeded() {
        let a = make_index_sets(4, 2, SplitMode::Imputation, 5).unwrap();
        let b = make_index_sets(4, 2, SplitMode::Imputation, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.input.len(), 2);
        a.validate().unwrap();
    }

    #[test]
    fn split_range_errors() {
        assert!(make_index_sets(4, 0, SplitMode::Forecast, 0).is_err());
        assert!(make_index_sets(4, 4, SplitMode::Forecast, 0).is_err());
    }

    #[test]
    fn observation_matrix_examples() {
        let m: Matrix<f64> = observation_matrix(&[0, 1, 2], 3).unwrap();
        assert_eq!(m, Matrix::identity(3));
        let m: Matrix<f64> = observation_matrix(&[1], 3).unwrap();
        assert_eq!(m.row(0), &[0.0, 1.0, 0.0]);
        assert!(observation_matrix::<f64>(&[1, 1], 3).is_err());
        assert!(observation_matrix::<f64>(&[3], 3).is_err());
    }

    #[test]
    fn noise_free_samples() {
        let sets = make_index_sets(8, 6, SplitMode::Forecast, 0).unwrap();
        let c = SignalSpec::new(SignalFamily::Constant { value: 1.5 }, 8, 0.1).unwrap();
        let s = sample_series(&c, 0.1, 0.0, 8, &sets, 3).unwrap();
        assert!(s.f.iter().all(|&v| v == 1.5));
        let r = ramp(0.7, 8, 0.1);
        let s = sample_series(&r, 0.1, 0.0, 8, &sets, 3).unwrap();
        for (i, v) in s.f.iter().enumerate() {
            assert_eq!(*v, 0.7 * ((i + 1) as f64 * 0.1));
        }
    }

    #[test]
    fn noisy_sample_mean_is_centered() {
        let sets = make_index_sets(32, 24, SplitMode::Forecast, 0).unwrap();
        let sig = SignalSpec::unit_sine(32, std::f64::consts::TAU / 32.0).unwrap();
        let s = sample_series(&sig, sig_delta(), 0.01, 32, &sets, 9).unwrap();
        let g = sig.grid(32, sig_delta());
        let mean = s.f.iter().zip(&g).map(|(a, b)| a - b).sum::<f64>() / 32.0;
        assert!(mean.abs() <= 4.0 * (0.01_f64 / 32.0).sqrt());
    }

    fn sig_delta() -> f64 {
        std::f64::consts::TAU / 32.0
    }

    #[test]
    fn pooled_noise_variance() {
        let sets = make_index_sets(100, 50, SplitMode::Forecast, 0).unwrap();
        let c = SignalSpec::new(SignalFamily::Constant { value: 0.0 }, 100, 1.0).unwrap();
        let v = 0.04;
        let draws: Vec<f64> = (0..120)
            .flat_map(|k| sample_series(&c, 1.0, v, 100, &sets, k).unwrap().f)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - v).abs() <= 0.05 * v, "var {var}");
    }

    #[test]
    fn amplitude_is_clamped_to_sqrt_n() {
        let big: SignalSpec<f64> = SignalSpec::new(SignalFamily::Constant { value: 100.0 }, 16, 1.0).unwrap();
        assert!((big.eval(1.0) - 4.0).abs() < 1e-12);
        let r = ramp(10.0, 16, 1.0);
        assert!(r.grid(16, 1.0).iter().all(|v| v.abs() <= 4.0 + 1e-12));
        assert!(r.lipschitz_l0 >= r.measured_slope(16, 1.0) - 1e-12);
    }

    #[test]
    fn dataset_sizes_and_duplicates() {
        let sets = make_index_sets(16, 12, SplitMode::Forecast, 0).unwrap();
        let a = ramp(1.0, 16, 0.1);
        let b = ramp(-1.0, 16, 0.1);
        let d = make_dataset(std::slice::from_ref(&a), 1, 0.1, 0.0, 16, &sets, 0).unwrap();
        assert_eq!(d.len(), 1);
        let d = make_dataset(&[a.clone(), b.clone()], 1, 0.1, 0.0, 16, &sets, 0).unwrap();
        assert_ne!(d.samples[0].f, d.samples[1].f);
        assert!(matches!(
            make_dataset(&[a.clone(), a.clone()], 1, 0.1, 0.0, 16, &sets, 0),
            Err(Error::DuplicateSeries { .. })
        ));
        let c = SignalSpec::unit_sine(16, 0.3).unwrap();
        let d = make_dataset(&[a, b, c], 4, 0.1, 0.01, 16, &sets, 1).unwrap();
        assert_eq!(d.len(), 12);
        for i in 0..12 {
            for j in i + 1..12 {
                assert_ne!(d.samples[i].f, d.samples[j].f);
            }
        }
    }

    #[test]
    fn csv_and_sidecar_round_trip() {
        let sets = make_index_sets(10, 7, SplitMode::Imputation, 2).unwrap();
        let sig = SignalSpec::unit_sine(10, 0.5).unwrap();
        let d = make_dataset(&[sig], 3, 0.5, 0.1, 10, &sets, 4).unwrap();
        let mut csv_buf = Vec::new();
        let mut json_buf = Vec::new();
        d.write_csv(&mut csv_buf).unwrap();
        d.write_sidecar(&mut json_buf).unwrap();
        let header = String::from_utf8(csv_buf.clone()).unwrap();
        assert!(header.starts_with("series_id,tau,value,is_input\n"));
        let back: Dataset<f64> = Dataset::read(&csv_buf[..], &json_buf[..]).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn split_reconstructs_series(n in 2usize..24, frac in 0.05f64..0.95, seed in 0u64..1000, imput in any::<bool>()) {
            let nx = ((n as f64 * frac) as usize).clamp(1, n - 1);
            let mode = if imput { SplitMode::Imputation } else { SplitMode::Forecast };
            let sets = make_index_sets(n, nx, mode, seed).unwrap();
            let sig = SignalSpec::unit_sine(n, 0.4).unwrap();
            let s = sample_series(&sig, 0.4, 0.1, n, &sets, seed).unwrap();
            let mx: Matrix<f64> = observation_matrix(&sets.input, n).unwrap();
            let my: Matrix<f64> = observation_matrix(&sets.output, n).unwrap();
            prop_assert_eq!(mx.matvec(&s.f), s.f_x.clone());
            let mut rec = mx.tr_matvec(&s.f_x);
            for (r, v) in rec.iter_mut().zip(my.tr_matvec(&s.f_y)) {
                *r += v;
            }
            prop_assert_eq!(rec, s.f.clone());
            let again = sample_series(&sig, 0.4, 0.1, n, &sets, seed).unwrap();
            prop_assert_eq!(again, s);
        }
    }
}
