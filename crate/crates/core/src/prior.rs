//! Class-conditional diagonal Gaussian priors over source latents.
//!
//! For each class the source embeddings (inference mode, `z = mu`) are
//! summarized by their maximum-likelihood mean and biased (`1/N`) per
//! dimension variance. Only the diagonal of the covariance is kept.

use std::f64::consts::PI;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::checkpoint::{Checkpoint, NamedArray};
use crate::data::DomainDataset;
use crate::error::{invalid, Error, Result};
use crate::model::LatentSplitModel;

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrior {
    classes: Vec<ClassStats>,
    variance_floor: f64,
}

impl ClassPrior {
    pub fn new(classes: Vec<ClassStats>, variance_floor: f64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Empty("class prior"));
        }
        let m = classes[0].mu.len();
        for (c, s) in classes.iter().enumerate() {
            if s.mu.len() != m || s.sigma2.len() != m {
                return Err(invalid(format!("class {c} has inconsistent dimensions")));
            }
            if s.sigma2.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(invalid(format!("class {c} has a nonpositive variance")));
            }
        }
        Ok(Self {
            classes,
            variance_floor,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.classes[0].mu.len()
    }

    pub fn variance_floor(&self) -> f64 {
        self.variance_floor
    }

    pub fn class(&self, c: usize) -> Result<&ClassStats> {
        self.classes.get(c).ok_or(Error::UnseenClass(c))
    }

    pub fn classes(&self) -> &[ClassStats] {
        &self.classes
    }

    /// Same means, variances multiplied by `factor`.
    pub fn with_variance_scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(invalid("variance scale must be positive"));
        }
        let classes = self
            .classes
            .iter()
            .map(|s| ClassStats {
                mu: s.mu.clone(),
                sigma2: s.sigma2.iter().map(|v| v * factor).collect(),
                count: s.count,
            })
            .collect();
        Ok(Self {
            classes,
            variance_floor: self.variance_floor,
        })
    }

    /// Diagonal Gaussian log density of `z` under class `c`.
    pub fn log_density(&self, c: usize, z: &[f64]) -> Result<f64> {
        let s = self.class(c)?;
        if z.len() != s.mu.len() {
            return Err(Error::ShapeMismatch {
                op: "prior_log_density",
                detail: format!("{} values for a {}-d prior", z.len(), s.mu.len()),
            });
        }
        Ok(z.iter()
            .zip(&s.mu)
            .zip(&s.sigma2)
            .map(|((x, m), v)| -0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v))
            .sum())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let m = self.latent_dim();
        let mut arrays = Vec::new();
        for (c, s) in self.classes.iter().enumerate() {
            arrays.push(NamedArray::from_values(format!("class.{c}.mu"), vec![m], &s.mu));
            arrays.push(NamedArray::from_values(
                format!("class.{c}.sigma2"),
                vec![m],
                &s.sigma2,
            ));
        }
        let counts: Vec<usize> = self.classes.iter().map(|s| s.count).collect();
        let meta = serde_json::json!({
            "kind": "class_prior",
            "num_classes": self.num_classes(),
            "latent_dim": m,
            "variance_floor": self.variance_floor,
            "counts": counts,
        });
        Checkpoint::new(meta, arrays)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let num_classes = ck
            .meta
            .get("num_classes")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse("prior checkpoint lacks num_classes".into()))?
            as usize;
        let floor = ck
            .meta
            .get("variance_floor")
            .and_then(|v| v.as_f64())
            .unwrap_or(DEFAULT_VARIANCE_FLOOR);
        let counts: Vec<usize> = ck
            .meta
            .get("counts")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .unwrap_or_else(|| vec![0; num_classes]);
        let classes = (0..num_classes)
            .map(|c| {
                Ok(ClassStats {
                    mu: ck.get(&format!("class.{c}.mu"))?.parse_values()?,
                    sigma2: ck.get(&format!("class.{c}.sigma2"))?.parse_values()?,
                    count: counts.get(c).copied().unwrap_or(0),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes, floor)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Fits per-class mean and biased variance from embeddings `z` (rows).
pub fn fit_from_embeddings(
    z: &Tensor,
    labels: &[usize],
    num_classes: usize,
    variance_floor: f64,
) -> Result<ClassPrior> {
    if labels.is_empty() {
        return Err(Error::Empty("source dataset"));
    }
    if !(variance_floor > 0.0) {
        return Err(invalid("variance_floor must be positive"));
    }
    let m = z.cols();
    let mut sums = vec![vec![0.0; m]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (row, &c) in z.row_iter().zip(labels) {
        if c >= num_classes {
            return Err(Error::UnseenClass(c));
        }
        counts[c] += 1;
        sums[c].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    if let Some(c) = (0..num_classes).find(|&c| counts[c] < 2) {
        return Err(Error::InsufficientSamples {
            class: c,
            found: counts[c],
            needed: 2,
        });
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
        .collect();
    let mut sq = vec![vec![0.0; m]; num_classes];
    for (row, &c) in z.row_iter().zip(labels) {
        sq[c]
            .iter_mut()
            .zip(row)
            .zip(&means[c])
            .for_each(|((s, v), mu)| *s += (v - mu) * (v - mu));
    }
    let classes = (0..num_classes)
        .map(|c| ClassStats {
            mu: means[c].clone(),
            sigma2: sq[c]
                .iter()
                .map(|s| (s / counts[c] as f64).max(variance_floor))
                .collect(),
            count: counts[c],
        })
        .collect();
    ClassPrior::new(classes, variance_floor)
}

/// Class priors from a frozen source model's latent means on `source_data`.
pub fn fit_class_priors(
    source_model: &LatentSplitModel,
    source_data: &DomainDataset,
    variance_floor: f64,
) -> Result<ClassPrior> {
    if source_data.is_empty() {
        return Err(Error::Empty("source dataset"));
    }
    let z = source_model.latent_means(&source_data.x)?;
    fit_from_embeddings(
        &z,
        &source_data.y,
        source_model.num_classes().max(source_data.num_classes),
        variance_floor,
    )
}
