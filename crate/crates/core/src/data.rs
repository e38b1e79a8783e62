//! Synthetic domain-shift benchmarks.
//!
//! Samples are abstract feature vectors drawn from Gaussian class clusters.
//! A target domain is derived from the source either by an invertible affine
//! channel (the "device" regime, with parallel pairs) or by structured
//! additive noise on fresh draws (the "noise" regime, no pairs).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{seeded_rng, Tensor};
use crate::error::{invalid, Error, Result};

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Labelled samples of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub num_classes: usize,
    pub domain_id: String,
    /// `pair_index[i]` is the sister-dataset row that `x[i]` was derived from.
    pub pair_index: Option<Vec<usize>>,
}

impl DomainDataset {
    pub fn new(
        x: Tensor,
        y: Vec<usize>,
        num_classes: usize,
        domain_id: impl Into<String>,
        pair_index: Option<Vec<usize>>,
    ) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != y.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                detail: format!("x {:?} with {} labels", x.shape(), y.len()),
            });
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(invalid(format!("label {bad} >= num_classes {num_classes}")));
        }
        if let Some(p) = &pair_index {
            if p.len() != y.len() {
                return Err(invalid("pair_index length differs from sample count"));
            }
        }
        Ok(Self {
            x,
            y,
            num_classes,
            domain_id: domain_id.into(),
            pair_index,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn is_parallel(&self) -> bool {
        self.pair_index.is_some()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Row indices of class `c`, in dataset order.
    pub fn class_indices(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i] == c).collect()
    }

    /// Checks that pairs are injective, in range and label-preserving.
    pub fn check_pairing(&self, sister: &DomainDataset) -> Result<()> {
        let pairs = self.pair_index.as_ref().ok_or(Error::MissingPairing)?;
        let mut seen = vec![false; sister.len()];
        for (i, &j) in pairs.iter().enumerate() {
            if j >= sister.len() {
                return Err(invalid(format!("pair {i} -> {j} out of range")));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(invalid(format!("sister row {j} paired twice")));
            }
            if sister.y[j] != self.y[i] {
                return Err(invalid(format!("pair {i} -> {j} changes the label")));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
        out.write_record(["n", "input_dim", "num_classes", "domain_id"])?;
        out.write_record([
            self.len().to_string(),
            self.input_dim().to_string(),
            self.num_classes.to_string(),
            self.domain_id.clone(),
        ])?;
        let mut header = vec!["label".to_string(), "pair".to_string()];
        header.extend((0..self.input_dim()).map(|j| format!("x{j}")));
        out.write_record(&header)?;
        for (i, row) in self.x.row_iter().enumerate() {
            let mut rec = vec![self.y[i].to_string()];
            rec.push(
                self.pair_index
                    .as_ref()
                    .map(|p| p[i].to_string())
                    .unwrap_or_default(),
            );
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(false)
            .from_reader(r);
        let mut records = rdr.records();
        let mut next = |what: &str| -> Result<csv::StringRecord> {
            records
                .next()
                .ok_or_else(|| Error::Parse(format!("dataset file ends before {what}")))?
                .map_err(Error::from)
        };
        let _names = next("header")?;
        let meta = next("header values")?;
        let field = |i: usize| -> Result<usize> {
            meta.get(i)
                .ok_or_else(|| Error::Parse("short dataset header".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("dataset header: {e}")))
        };
        let (n, dim, classes) = (field(0)?, field(1)?, field(2)?);
        let domain_id = meta.get(3).unwrap_or("").to_string();
        let _columns = next("column names")?;
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        let mut pairs = Vec::with_capacity(n);
        for i in 0..n {
            let rec = next("all samples")?;
            if rec.len() != dim + 2 {
                return Err(Error::Parse(format!("row {i} has {} fields", rec.len())));
            }
            let parse_err = |e: &dyn std::fmt::Display| Error::Parse(format!("row {i}: {e}"));
            y.push(rec[0].parse().map_err(|e| parse_err(&e))?);
            pairs.push(if rec[1].is_empty() {
                None
            } else {
                Some(rec[1].parse::<usize>().map_err(|e| parse_err(&e))?)
            });
            for v in rec.iter().skip(2) {
                x.push(v.parse::<f64>().map_err(|e| parse_err(&e))?);
            }
        }
        let pair_index = if pairs.iter().all(Option::is_some) && n > 0 {
            Some(pairs.into_iter().flatten().collect())
        } else if pairs.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::Parse("pair column partially filled".into()));
        };
        Self::new(Tensor::matrix(n, dim, x)?, y, classes, domain_id, pair_index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

/// Gaussian class clusters in `input_dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Standard deviation of the class-mean draw; 0 makes classes identical.
    pub separation: f64,
    /// Within-class standard deviation.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            input_dim: 20,
            separation: 1.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    spec: TaskSpec,
    means: Vec<Vec<f64>>,
}

impl SyntheticTask {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        if spec.num_classes == 0 || spec.input_dim == 0 {
            return Err(Error::InvalidConfig("task needs classes and dimensions".into()));
        }
        if !(spec.separation >= 0.0) || !(spec.noise_std >= 0.0) {
            return Err(Error::InvalidConfig("separation and noise_std must be >= 0".into()));
        }
        let mut rng = seeded_rng(&[spec.seed, 0x6d65616e]);
        let means = (0..spec.num_classes)
            .map(|_| {
                (0..spec.input_dim)
                    .map(|_| spec.separation * normal(&mut rng))
                    .collect::<Vec<f64>>()
            })
            .collect();
        Ok(Self { spec, means })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn class_means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// `n` samples with class counts balanced to within one.
    pub fn sample(&self, n: usize, seed: u64, domain_id: &str) -> Result<DomainDataset> {
        let c = self.spec.num_classes;
        if n < 2 * c {
            return Err(invalid(format!("need at least {} samples, got {n}", 2 * c)));
        }
        let mut rng = seeded_rng(&[self.spec.seed, seed, 0x73616d70]);
        let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        labels.shuffle(&mut rng);
        let d = self.spec.input_dim;
        let mut x = Vec::with_capacity(n * d);
        for &label in &labels {
            for j in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                x.push(self.means[label][j] + self.spec.noise_std * e);
            }
        }
        DomainDataset::new(Tensor::matrix(n, d, x)?, labels, c, domain_id, None)
    }

    /// Shifted target set. `parallel` copies and shifts distinct source rows
    /// and records the pairing; otherwise fresh samples are drawn and shifted.
    pub fn derive_target(
        &self,
        source: &DomainDataset,
        shift: &ShiftSpec,
        n_target: usize,
        parallel: bool,
        seed: u64,
        domain_id: &str,
    ) -> Result<DomainDataset> {
        if n_target == 0 || n_target * 10 > source.len() {
            return Err(invalid(format!(
                "n_target {n_target} must be in 1..={} (a tenth of the source)",
                source.len() / 10
            )));
        }
        if parallel {
            let mut rng = seeded_rng(&[self.spec.seed, seed, 0x70616972]);
            let mut order: Vec<usize> = (0..source.len()).collect();
            order.shuffle(&mut rng);
            order.truncate(n_target);
            let clean = source.x.select_rows(&order)?;
            let y = order.iter().map(|&i| source.y[i]).collect();
            let shifted = shift.apply(&clean, seed)?;
            DomainDataset::new(shifted, y, source.num_classes, domain_id, Some(order))
        } else {
            let fresh = self.sample(n_target.max(2 * self.spec.num_classes), seed ^ 0xf4e5, domain_id)?;
            let keep: Vec<usize> = (0..n_target).collect();
            let clean = fresh.x.select_rows(&keep)?;
            let shifted = shift.apply(&clean, seed)?;
            DomainDataset::new(
                shifted,
                fresh.y[..n_target].to_vec(),
                source.num_classes,
                domain_id,
                None,
            )
        }
    }
}

/// Source generator with the default separation.
pub fn generate_source(
    n_samples: usize,
    n_classes: usize,
    input_dim: usize,
    seed: u64,
) -> Result<DomainDataset> {
    let task = SyntheticTask::new(TaskSpec {
        num_classes: n_classes,
        input_dim,
        seed,
        ..TaskSpec::default()
    })?;
    task.sample(n_samples, seed, "source")
}

/// Domain shift applied to clean feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftSpec {
    /// `x -> D (I + s K) x + s b` with `D = diag(exp(s u))`, `K` skew-symmetric
    /// and `u`, `b` random. Always invertible; `strength = 0` is the identity.
    AffineChannel { strength: f64, seed: u64 },
    /// Explicit `x -> A x + b`.
    Affine { matrix: Vec<Vec<f64>>, bias: Vec<f64> },
    /// Structured additive noise whose mean squared magnitude per feature is
    /// the level; each sample draws one level from the list.
    AdditiveNoise { levels: Vec<f64>, seed: u64 },
}

impl ShiftSpec {
    pub fn identity() -> Self {
        ShiftSpec::AffineChannel {
            strength: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ShiftSpec::AffineChannel { strength, .. } if !strength.is_finite() => {
                Err(Error::InvalidConfig("shift strength must be finite".into()))
            }
            ShiftSpec::AdditiveNoise { levels, .. }
                if levels.is_empty() || levels.iter().any(|&v| !(v > 0.0)) =>
            {
                Err(Error::InvalidConfig("noise levels must be positive".into()))
            }
            ShiftSpec::Affine { matrix, bias } => {
                let d = bias.len();
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidConfig("affine matrix must be square".into()));
                }
                let a = DMatrix::from_fn(d, d, |i, j| matrix[i][j]);
                if a.try_inverse().is_none() {
                    return Err(Error::InvalidConfig("affine matrix is singular".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The affine map for the affine kinds.
    pub fn affine(&self, dim: usize) -> Result<Option<AffineTransform>> {
        self.validate()?;
        Ok(match self {
            ShiftSpec::AffineChannel { strength, seed } => {
                let s = *strength;
                let mut rng = seeded_rng(&[*seed, dim as u64, 0x61666669]);
                let mut g = DMatrix::<f64>::zeros(dim, dim);
                for v in g.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let k = (&g - g.transpose()) / (2.0 * dim as f64).sqrt();
                let scale = DVector::from_fn(dim, |_, _| (s * rng.random_range(-1.0..1.0)).exp());
                let a = DMatrix::from_diagonal(&scale) * (DMatrix::identity(dim, dim) + k * s);
                let b = DVector::from_fn(dim, |_, _| s * normal(&mut rng));
                Some(AffineTransform::new(a, b)?)
            }
            ShiftSpec::Affine { matrix, bias } => {
                if bias.len() != dim {
                    return Err(invalid("affine bias length differs from input_dim"));
                }
                let a = DMatrix::from_fn(dim, dim, |i, j| matrix[i][j]);
                Some(AffineTransform::new(a, DVector::from_vec(bias.clone()))?)
            }
            ShiftSpec::AdditiveNoise { .. } => None,
        })
    }

    /// Applies the shift; `sample_seed` drives per-sample noise draws.
    pub fn apply(&self, x: &Tensor, sample_seed: u64) -> Result<Tensor> {
        let dim = x.cols();
        if let Some(t) = self.affine(dim)? {
            return t.apply(x);
        }
        let ShiftSpec::AdditiveNoise { levels, seed } = self else {
            unreachable!("affine kinds handled above")
        };
        let noise = NoiseStructure::new(dim, *seed);
        let mut rng = seeded_rng(&[*seed, sample_seed, 0x6e6f6973]);
        let mut out = Vec::with_capacity(x.len());
        for row in x.row_iter() {
            let level = levels[rng.random_range(0..levels.len())];
            let e = noise.draw(&mut rng);
            out.extend(row.iter().zip(&e).map(|(v, n)| v + level.sqrt() * n));
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

/// Unit-power noise `L eps + d` with low-rank `L` and offset `d`, scaled so
/// the mean squared value per feature is one.
struct NoiseStructure {
    factor: DMatrix<f64>,
    offset: DVector<f64>,
}

impl NoiseStructure {
    fn new(dim: usize, seed: u64) -> Self {
        let rank = (dim / 4).max(1);
        let mut rng = seeded_rng(&[seed, dim as u64, 0x636f6c72]);
        let mut factor = DMatrix::<f64>::zeros(dim, rank);
        for v in factor.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let mut offset = DVector::from_fn(dim, |_, _| normal(&mut rng));
        // Split power evenly between the correlated part and the offset.
        let fnorm2 = factor.norm_squared();
        let onorm2 = offset.norm_squared();
        factor *= (0.5 * dim as f64 / fnorm2).sqrt();
        offset *= (0.5 * dim as f64 / onorm2).sqrt();
        Self { factor, offset }
    }

    fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        let eps = DVector::from_fn(self.factor.ncols(), |_, _| {
            normal(rng)
        });
        (&self.factor * eps + &self.offset).iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct AffineTransform {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    b: DVector<f64>,
}

impl AffineTransform {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| invalid("affine transform is not invertible"))?;
        Ok(Self { a, a_inv, b })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn map_rows(x: &Tensor, f: impl Fn(DVector<f64>) -> DVector<f64>) -> Result<Tensor> {
        let out: Vec<f64> = x
            .row_iter()
            .flat_map(|r| f(DVector::from_column_slice(r)).iter().copied().collect::<Vec<_>>())
            .collect();
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.b.len() {
            return Err(Error::ShapeMismatch {
                op: "affine",
                detail: format!("{} features for a {}-d transform", x.cols(), self.b.len()),
            });
        }
        Self::map_rows(x, |v| &self.a * v + &self.b)
    }

    pub fn invert(&self, y: &Tensor) -> Result<Tensor> {
        Self::map_rows(y, |v| &self.a_inv * (v - &self.b))
    }
}

/// Everything an adaptation experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub task: TaskSpec,
    pub n_source: usize,
    pub n_source_test: usize,
    pub n_target: usize,
    pub n_target_test: usize,
    pub parallel: bool,
    pub shift: ShiftSpec,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self::parallel_default()
    }
}

impl BenchmarkSpec {
    /// Device-shift analogue with parallel pairs.
    pub fn parallel_default() -> Self {
        Self {
            task: TaskSpec::default(),
            n_source: 5000,
            n_source_test: 2000,
            n_target: 400,
            n_target_test: 2000,
            parallel: true,
            shift: ShiftSpec::AffineChannel {
                strength: 1.0,
                seed: 1,
            },
            seed: 0,
        }
    }

    /// Noise-shift analogue without pairs.
    pub fn non_parallel_default() -> Self {
        Self {
            parallel: false,
            shift: ShiftSpec::AdditiveNoise {
                levels: vec![1.0, 1.5, 2.0, 2.5, 3.0],
                seed: 2,
            },
            ..Self::parallel_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shift.validate()?;
        if self.n_target == 0 || self.n_target * 10 > self.n_source {
            return Err(Error::InvalidConfig(format!(
                "n_target {} must be at most a tenth of n_source {}",
                self.n_target, self.n_source
            )));
        }
        if self.n_source_test == 0 || self.n_target_test == 0 {
            return Err(Error::InvalidConfig("test splits must be non-empty".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Benchmark> {
        self.validate()?;
        let task = SyntheticTask::new(self.task.clone())?;
        let source = task.sample(self.n_source, self.seed, "source")?;
        let source_test = task.sample(self.n_source_test, self.seed ^ 0x7e57, "source-test")?;
        let target_train = task.derive_target(
            &source,
            &self.shift,
            self.n_target,
            self.parallel,
            self.seed.wrapping_add(1),
            "target-train",
        )?;
        // The test split never pairs with training rows.
        let pool = task.sample(
            self.n_target_test.max(2 * self.task.num_classes),
            self.seed ^ 0x7e58,
            "pool",
        )?;
        let test_clean = pool.x.select_rows(&(0..self.n_target_test).collect::<Vec<_>>())?;
        let target_test = DomainDataset::new(
            self.shift.apply(&test_clean, self.seed.wrapping_add(2))?,
            pool.y[..self.n_target_test].to_vec(),
            pool.num_classes,
            "target-test",
            None,
        )?;
        Ok(Benchmark {
            source,
            source_test,
            target_train,
            target_test,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub source: DomainDataset,
    pub source_test: DomainDataset,
    pub target_train: DomainDataset,
    pub target_test: DomainDataset,
}

/// `n_aug` jittered copies `x + strength * eps` of `x`.
pub fn augment(x: &Tensor, n_aug: usize, strength: f64, seed: u64) -> Result<Vec<Tensor>> {
    if n_aug < 2 {
        return Err(invalid(format!("augment needs n_aug >= 2, got {n_aug}")));
    }
    if !(strength >= 0.0) {
        return Err(invalid("augmentation strength must be >= 0"));
    }
    (0..n_aug as u64)
        .map(|k| {
            let mut rng = seeded_rng(&[seed, k, 0x6175676d]);
            let data = x
                .data()
                .iter()
                .map(|v| v + strength * normal(&mut rng))
                .collect();
            Tensor::new(x.shape().to_vec(), data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_task() -> SyntheticTask {
        SyntheticTask::new(TaskSpec {
            num_classes: 3,
            input_dim: 4,
            ..TaskSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = generate_source(103, 10, 5, 3).unwrap();
        let b = generate_source(103, 10, 5, 3).unwrap();
        assert_eq!(a, b);
        let counts = a.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
        assert!(generate_source(19, 10, 5, 3).is_err());
    }

    #[test]
    fn identity_shift_copies_paired_rows() {
        let task = small_task();
        let src = task.sample(200, 1, "s").unwrap();
        let tgt = task
            .derive_target(&src, &ShiftSpec::identity(), 20, true, 5, "t")
            .unwrap();
        tgt.check_pairing(&src).unwrap();
        for (i, &j) in tgt.pair_index.as_ref().unwrap().iter().enumerate() {
            assert_eq!(tgt.x.row(i), src.x.row(j));
        }
    }

    #[test]
    fn affine_inverse_recovers_source() {
        let x = generate_source(50, 5, 6, 9).unwrap().x;
        let t = ShiftSpec::AffineChannel {
            strength: 1.3,
            seed: 4,
        }
        .affine(6)
        .unwrap()
        .unwrap();
        let back = t.invert(&t.apply(&x).unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn target_size_limits_and_unpaired_mode() {
        let task = small_task();
        let src = task.sample(100, 1, "s").unwrap();
        assert!(task
            .derive_target(&src, &ShiftSpec::identity(), 11, true, 0, "t")
            .is_err());
        let t = task
            .derive_target(
                &src,
                &ShiftSpec::AdditiveNoise {
                    levels: vec![1.0],
                    seed: 0,
                },
                10,
                false,
                0,
                "t",
            )
            .unwrap();
        assert!(t.pair_index.is_none());
        assert!(matches!(t.check_pairing(&src), Err(Error::MissingPairing)));
    }

    #[test]
    fn singular_affine_is_rejected() {
        let s = ShiftSpec::Affine {
            matrix: vec![vec![1.0, 2.0], vec![2.0, 4.0]],
            bias: vec![0.0, 0.0],
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn augment_zero_strength_and_arity() {
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let copies = augment(&x, 3, 0.0, 1).unwrap();
        assert!(copies.iter().all(|c| c == &x));
        assert!(augment(&x, 1, 0.1, 1).is_err());
        let a = augment(&x, 2, 0.5, 1).unwrap();
        let b = augment(&x, 2, 0.5, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn file_round_trip() {
        let task = small_task();
        let src = task.sample(60, 1, "source").unwrap();
        let tgt = task
            .derive_target(
                &src,
                &ShiftSpec::AffineChannel {
                    strength: 0.7,
                    seed: 3,
                },
                6,
                true,
                2,
                "target",
            )
            .unwrap();
        for ds in [&src, &tgt] {
            let mut buf = Vec::new();
            ds.write_to(&mut buf).unwrap();
            let back = DomainDataset::read_from(buf.as_slice()).unwrap();
            assert_eq!(&back, ds);
        }
    }
}
