//! Accuracy, intra-class discrepancy and embedding export.
//!
//! Output files are comma-separated with fixed column orders:
//!
//! * discrepancy matrix: `sample_id,d0,d1,...` with one row per selected
//!   sample (the `sample_id` column holds dataset row indices);
//! * embeddings: `domain_id,label,z0,z1,...,z{M-1}`.

use std::io::Write;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::autodiff::{seeded_rng, Tensor};
use crate::data::DomainDataset;
use crate::error::{invalid, Error, Result};
use crate::model::LatentSplitModel;

/// Samples per class used by default for discrepancy analysis.
pub const DEFAULT_DISCREPANCY_SAMPLES: usize = 30;

/// Fraction of rows whose arg-max prediction (ties to the lowest index)
/// equals the label.
pub fn accuracy(model: &LatentSplitModel, data: &DomainDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let predicted = model.predict(&data.x)?;
    Ok(accuracy_from_predictions(&predicted, &data.y))
}

pub fn accuracy_from_predictions(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyMatrix {
    pub class_id: usize,
    pub sample_ids: Vec<usize>,
    /// Row-major `n x n` pairwise L2 distances between logits.
    pub d: Vec<f64>,
}

impl DiscrepancyMatrix {
    /// Pairwise L2 distances between the rows of `outputs`.
    pub fn from_outputs(class_id: usize, sample_ids: Vec<usize>, outputs: &Tensor) -> Self {
        let n = outputs.rows();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = outputs
                    .row(i)
                    .iter()
                    .zip(outputs.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self {
            class_id,
            sample_ids,
            d,
        }
    }

    pub fn n(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n() + j]
    }

    /// Mean of the off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        self.d.iter().sum::<f64>() / (n * (n - 1)) as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sample_id".to_string()];
        header.extend((0..self.n()).map(|j| format!("d{j}")));
        out.write_record(&header)?;
        for (i, id) in self.sample_ids.iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend((0..self.n()).map(|j| self.get(i, j).to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Pairwise logit distances among `n_samples` members of `class_id` chosen
/// deterministically from `seed`.
pub fn intra_class_discrepancy(
    model: &LatentSplitModel,
    data: &DomainDataset,
    class_id: usize,
    n_samples: usize,
    seed: u64,
) -> Result<DiscrepancyMatrix> {
    let members = data.class_indices(class_id);
    if members.len() < n_samples {
        return Err(Error::InsufficientSamples {
            class: class_id,
            found: members.len(),
            needed: n_samples,
        });
    }
    if n_samples == 0 {
        return Err(invalid("n_samples must be positive"));
    }
    let mut rng = seeded_rng(&[seed, class_id as u64, 0xd15c]);
    let mut picked: Vec<usize> = sample(&mut rng, members.len(), n_samples)
        .into_iter()
        .map(|k| members[k])
        .collect();
    picked.sort_unstable();
    let logits = model.logits(&data.x.select_rows(&picked)?)?;
    Ok(DiscrepancyMatrix::from_outputs(class_id, picked, &logits))
}

/// Writes `domain_id,label,z0..` rows of inference-mode latent means.
pub fn export_embeddings<W: Write>(
    model: &LatentSplitModel,
    datasets: &[&DomainDataset],
    w: W,
) -> Result<usize> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["domain_id".to_string(), "label".to_string()];
    header.extend((0..model.latent_dim()).map(|j| format!("z{j}")));
    out.write_record(&header)?;
    let mut rows = 0;
    for data in datasets {
        if data.is_empty() {
            continue;
        }
        let z = model.latent_means(&data.x)?;
        for (row, y) in z.row_iter().zip(&data.y) {
            let mut rec = vec![data.domain_id.clone(), y.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            out.write_record(&rec)?;
            rows += 1;
        }
    }
    out.flush()?;
    Ok(rows)
}

/// Embedding rows read back from [`export_embeddings`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub domain_id: String,
    pub label: usize,
    pub z: Vec<f64>,
}

pub fn read_embeddings<R: std::io::Read>(r: R) -> Result<Vec<EmbeddingRow>> {
    let mut reader = csv::Reader::from_reader(r);
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse("short row".into()));
            let label = field(1)?
                .parse()
                .map_err(|e| Error::Parse(format!("label: {e}")))?;
            let z = rec
                .iter()
                .skip(2)
                .map(|s| s.parse().map_err(|e| Error::Parse(format!("`{s}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            Ok(EmbeddingRow {
                domain_id: field(0)?.to_string(),
                label,
                z,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_discrepancy() {
        let out = Tensor::matrix(2, 2, vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        let m = DiscrepancyMatrix::from_outputs(0, vec![4, 9], &out);
        assert_eq!(m.get(0, 1), 5.0);
        assert_eq!(m.get(1, 0), 5.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.mean_off_diagonal(), 5.0);
    }

    #[test]
    fn recount_accuracy() {
        assert_eq!(accuracy_from_predictions(&[0, 1, 2, 2], &[0, 1, 1, 2]), 0.75);
    }

    #[test]
    fn matrix_csv_shape() {
        let out = Tensor::matrix(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let m = DiscrepancyMatrix::from_outputs(2, vec![0, 1, 2], &out);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("sample_id,d0,d1,d2\n"));
    }
}
