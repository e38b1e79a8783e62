//! Latent-split classifier.
//!
//! `x -> theta -> mu -> (sample z | z = mu) -> omega -> logits`.
//!
//! `theta` is a stack of affine layers with ReLU between them; its last layer
//! is left pre-activation and its output is the latent mean `mu`. `omega` is
//! a stack of affine layers with ReLU between consecutive layers (a single
//! layer makes the head linear).

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{matmul_raw, seeded_rng, NoiseKey, Sigma, Tape, Tensor, Var};
use crate::checkpoint::{Checkpoint, NamedArray};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the hidden ReLU layers before the latent layer.
    pub theta_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Widths of hidden ReLU layers between the latent layer and the output.
    pub omega_hidden: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 20,
            theta_hidden: vec![64, 64],
            latent_dim: 32,
            omega_hidden: vec![],
            num_classes: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.latent_dim, self.num_classes];
        if dims.contains(&0) || self.theta_hidden.contains(&0) || self.omega_hidden.contains(&0) {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        Ok(())
    }

    fn theta_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.theta_hidden);
        d.push(self.latent_dim);
        d
    }

    fn omega_dims(&self) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(&self.omega_hidden);
        d.push(self.num_classes);
        d
    }
}

/// Affine map `x W + b` with `W` stored as `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (ws, bs) = (weight.shape(), bias.shape());
        if ws.len() != 2 || bs.len() != 1 || ws[1] != bs[0] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                detail: format!("weight {ws:?}, bias {bs:?}"),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn he_normal(input: usize, output: usize, seed: u64, layer: u64) -> Self {
        let mut rng = seeded_rng(&[seed, layer]);
        let normal = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("positive std");
        let w = (0..input * output).map(|_| normal.sample(&mut rng)).collect();
        Self {
            weight: Tensor::from_parts(vec![input, output], w),
            bias: Tensor::zeros(vec![output]),
        }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let (n, k, m) = (x.rows(), self.in_dim(), self.out_dim());
        let mut out = matmul_raw(x.data(), self.weight.data(), n, k, m);
        for row in out.chunks_mut(m) {
            row.iter_mut().zip(self.bias.data()).for_each(|(o, b)| *o += b);
        }
        Tensor::from_parts(vec![n, m], out)
    }
}

/// Variance of the latent sampling noise.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentVariance {
    /// One `sigma^2` shared by every sample and dimension.
    Shared(f64),
    /// One `sigma^2` per latent dimension, shared by all samples.
    PerDim(Vec<f64>),
    /// A `(batch, M)` matrix of per-sample variances.
    PerSample(Tensor),
}

impl LatentVariance {
    fn validate(&self, batch: usize, m: usize) -> Result<()> {
        let ok = |v: &f64| *v > 0.0 && v.is_finite();
        match self {
            LatentVariance::Shared(v) if ok(v) => Ok(()),
            LatentVariance::PerDim(v) if v.len() == m && v.iter().all(ok) => Ok(()),
            LatentVariance::PerSample(t)
                if t.shape() == [batch, m] && t.data().iter().all(ok) =>
            {
                Ok(())
            }
            other => Err(invalid(format!(
                "latent variance must be positive and shaped for ({batch}, {m}), got {other:?}"
            ))),
        }
    }

    /// Variance of element `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        match self {
            LatentVariance::Shared(v) => *v,
            LatentVariance::PerDim(v) => v[j],
            LatentVariance::PerSample(t) => t.row(i)[j],
        }
    }
}

/// Latent means, the variance used for sampling and the values fed to
/// `omega`. In inference mode `z` is `mu` itself.
#[derive(Debug, Clone)]
pub struct LatentBatch {
    pub mu: Var,
    pub sigma2: Option<LatentVariance>,
    pub z: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSplitModel {
    config: ModelConfig,
    theta: Vec<Linear>,
    omega: Vec<Linear>,
}

impl LatentSplitModel {
    /// He-normal weights, zero biases.
    pub fn new_random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layer = 0u64;
        let mut build = |dims: Vec<usize>| -> Vec<Linear> {
            dims.windows(2)
                .map(|w| {
                    layer += 1;
                    Linear::he_normal(w[0], w[1], seed, layer)
                })
                .collect()
        };
        let theta = build(config.theta_dims());
        let omega = build(config.omega_dims());
        Ok(Self {
            config,
            theta,
            omega,
        })
    }

    pub fn from_layers(theta: Vec<Linear>, omega: Vec<Linear>) -> Result<Self> {
        if theta.is_empty() || omega.is_empty() {
            return Err(Error::InvalidConfig("theta and omega need at least one layer".into()));
        }
        for pair in theta.windows(2).chain(omega.windows(2)) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::ShapeMismatch {
                    op: "model",
                    detail: "consecutive layer dimensions disagree".into(),
                });
            }
        }
        let latent_dim = theta.last().unwrap().out_dim();
        if omega[0].in_dim() != latent_dim {
            return Err(Error::ShapeMismatch {
                op: "model",
                detail: format!(
                    "omega expects {} inputs but the latent layer has {latent_dim}",
                    omega[0].in_dim()
                ),
            });
        }
        let config = ModelConfig {
            input_dim: theta[0].in_dim(),
            theta_hidden: theta[..theta.len() - 1].iter().map(Linear::out_dim).collect(),
            latent_dim,
            omega_hidden: omega[..omega.len() - 1].iter().map(Linear::out_dim).collect(),
            num_classes: omega.last().unwrap().out_dim(),
        };
        Ok(Self {
            config,
            theta,
            omega,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn theta_layers(&self) -> &[Linear] {
        &self.theta
    }

    pub fn omega_layers(&self) -> &[Linear] {
        &self.omega
    }

    fn named_layers(&self) -> impl Iterator<Item = (String, &Linear)> {
        let t = self.theta.iter().enumerate().map(|(i, l)| (format!("theta.{i}"), l));
        let o = self.omega.iter().enumerate().map(|(i, l)| (format!("omega.{i}"), l));
        t.chain(o)
    }

    /// Parameters in a fixed order: theta layers then omega layers, weight
    /// before bias.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.named_layers()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &l.weight),
                    (format!("{name}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.theta
            .iter_mut()
            .chain(self.omega.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Places the parameters on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut put = |layers: &[Linear]| -> Vec<(Var, Var)> {
            layers
                .iter()
                .map(|l| {
                    if trainable {
                        (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))
                    } else {
                        (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                    }
                })
                .collect()
        };
        let theta = put(&self.theta);
        let omega = put(&self.omega);
        BoundModel {
            theta,
            omega,
            input_dim: self.config.input_dim,
            latent_dim: self.config.latent_dim,
        }
    }

    /// Like [`bind`](Self::bind) with constants, except that parameter
    /// `index` (in [`parameters`](Self::parameters) order) is `var`.
    pub fn bind_with_param(&self, tape: &mut Tape, index: usize, var: Var) -> Result<BoundModel> {
        let expected = self
            .parameters()
            .get(index)
            .map(|(_, t)| t.shape().to_vec())
            .ok_or_else(|| invalid(format!("no parameter {index}")))?;
        if tape.value(var).shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "bind_with_param",
                detail: format!("expected {expected:?}, got {:?}", tape.value(var).shape()),
            });
        }
        let mut bound = self.bind(tape, false);
        let slot = index / 2;
        let (layers, k) = if slot < bound.theta.len() {
            (&mut bound.theta, slot)
        } else {
            let k = slot - bound.theta.len();
            (&mut bound.omega, k)
        };
        if index % 2 == 0 {
            layers[k].0 = var;
        } else {
            layers[k].1 = var;
        }
        Ok(bound)
    }

    fn check_input(&self, x: &Tensor, dim: usize, what: &'static str) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != dim {
            return Err(Error::ShapeMismatch {
                op: what,
                detail: format!("expected (batch, {dim}), got {:?}", x.shape()),
            });
        }
        Ok(())
    }

    /// Latent means without a tape.
    pub fn latent_means(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x, self.config.input_dim, "forward_latent")?;
        let mut h = x.clone();
        for (i, layer) in self.theta.iter().enumerate() {
            if i > 0 {
                relu_in_place(&mut h);
            }
            h = layer.apply(&h);
        }
        h.check_finite("forward_latent")
    }

    /// Logits from latent values without a tape.
    pub fn logits_from_latent(&self, z: &Tensor) -> Result<Tensor> {
        self.check_input(z, self.config.latent_dim, "forward_logits")?;
        let mut h = z.clone();
        for (i, layer) in self.omega.iter().enumerate() {
            if i > 0 {
                relu_in_place(&mut h);
            }
            h = layer.apply(&h);
        }
        h.check_finite("forward_logits")
    }

    /// Inference-mode logits (`z = mu`).
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.logits_from_latent(&self.latent_means(x)?)
    }

    /// Arg-max class per row, ties to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.row_iter().map(argmax).collect())
    }

    /// Stable digest of every parameter bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in self.parameters() {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let arrays = self
            .parameters()
            .into_iter()
            .map(|(name, t)| NamedArray::from_tensor(name, t))
            .collect();
        let meta = serde_json::json!({ "kind": "latent_split_model", "config": self.config });
        Checkpoint::new(meta, arrays)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(
            ck.meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Parse("checkpoint has no model config".into()))?,
        )?;
        let mut model = Self::new_random(config, 0)?;
        for (layers, prefix) in [(&mut model.theta, "theta"), (&mut model.omega, "omega")] {
            for (i, l) in layers.iter_mut().enumerate() {
                let w = ck.get(&format!("{prefix}.{i}.weight"))?.to_tensor()?;
                let b = ck.get(&format!("{prefix}.{i}.bias"))?.to_tensor()?;
                if w.shape() != l.weight.shape() || b.shape() != l.bias.shape() {
                    return Err(Error::Parse(format!(
                        "{prefix}.{i} shape disagrees with the stored config"
                    )));
                }
                *l = Linear::new(w, b)?;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn relu_in_place(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Model parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    theta: Vec<(Var, Var)>,
    omega: Vec<(Var, Var)>,
    input_dim: usize,
    latent_dim: usize,
}

impl BoundModel {
    /// Parameter handles in [`LatentSplitModel::parameters`] order.
    pub fn param_vars(&self) -> Vec<Var> {
        self.theta
            .iter()
            .chain(&self.omega)
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }

    fn check(&self, tape: &Tape, x: Var, dim: usize, op: &'static str) -> Result<()> {
        let s = tape.value(x).shape();
        if s.len() != 2 || s[1] != dim {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("expected (batch, {dim}), got {s:?}"),
            });
        }
        Ok(())
    }

    fn stack(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h)?;
            }
            let a = tape.matmul(h, w)?;
            h = tape.add_bias(a, b)?;
        }
        Ok(h)
    }

    /// Pre-activation latent means, differentiable in theta.
    pub fn forward_latent(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check(tape, x, self.input_dim, "forward_latent")?;
        Self::stack(tape, &self.theta, x)
    }

    pub fn forward_logits(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.check(tape, z, self.latent_dim, "forward_logits")?;
        Self::stack(tape, &self.omega, z)
    }

    /// `z = mu`, no sampling.
    pub fn forward_inference(&self, tape: &mut Tape, x: Var) -> Result<(LatentBatch, Var)> {
        let mu = self.forward_latent(tape, x)?;
        let logits = self.forward_logits(tape, mu)?;
        Ok((
            LatentBatch {
                mu,
                sigma2: None,
                z: mu,
            },
            logits,
        ))
    }

    /// Reparameterized forward pass: `z = mu + sigma * eps`.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        x: Var,
        sigma2: &LatentVariance,
        key: NoiseKey,
    ) -> Result<(LatentBatch, Var)> {
        let mu = self.forward_latent(tape, x)?;
        self.sample_logits(tape, mu, sigma2, key)
    }

    /// Reparameterized sample around given latent means and its logits.
    pub fn sample_logits(
        &self,
        tape: &mut Tape,
        mu: Var,
        sigma2: &LatentVariance,
        key: NoiseKey,
    ) -> Result<(LatentBatch, Var)> {
        self.check(tape, mu, self.latent_dim, "sample_logits")?;
        let batch = tape.value(mu).rows();
        sigma2.validate(batch, self.latent_dim)?;
        let z = match sigma2 {
            LatentVariance::Shared(v) => tape.sample_gaussian(mu, Sigma::Scalar(v.sqrt()), key)?,
            other => {
                let m = self.latent_dim;
                let std: Vec<f64> = (0..batch * m)
                    .map(|k| other.at(k / m, k % m).sqrt())
                    .collect();
                let s = tape.constant(Tensor::from_parts(vec![batch, m], std));
                tape.sample_gaussian(mu, Sigma::Tensor(s), key)?
            }
        };
        let logits = self.forward_logits(tape, z)?;
        Ok((
            LatentBatch {
                mu,
                sigma2: Some(sigma2.clone()),
                z,
            },
            logits,
        ))
    }
}
