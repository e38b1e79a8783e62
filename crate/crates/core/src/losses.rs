//! Adaptation objectives.
//!
//! Every differentiable loss is built on a [`Tape`]; closed-form scalar
//! helpers ([`kl_diag_gaussians`], [`relational_value`], [`huber`]) evaluate
//! the same quantities without one and double as references in tests.
//!
//! The ELBO objectives minimize, per mini-batch,
//!
//! ```text
//! total = nll + kl_weight * kl + beta * relational + tsl_weight * tsl
//! ```
//!
//! where `nll` is the mean cross-entropy of logits computed from one
//! reparameterized latent draw per sample and `kl` is the closed-form KL
//! between the target latent Gaussians and the source prior, divided by the
//! batch size so both terms are per-sample averages.

use serde::{Deserialize, Serialize};

use crate::autodiff::{huber_value, log_softmax_row, softmax_row, NoiseKey, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::model::{BoundModel, LatentVariance};
use crate::prior::ClassPrior;

/// Fixed latent variance shared by source and target posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SharedVariance {
    Scalar(f64),
    PerDim(Vec<f64>),
}

impl SharedVariance {
    pub fn validate(&self, m: Option<usize>) -> Result<()> {
        let ok = |v: &f64| *v > 0.0 && v.is_finite();
        match self {
            SharedVariance::Scalar(v) if ok(v) => Ok(()),
            SharedVariance::PerDim(v) if v.iter().all(ok) && m.is_none_or(|m| m == v.len()) => {
                Ok(())
            }
            other => Err(invalid(format!("sigma2 must be positive, got {other:?}"))),
        }
    }

    pub fn at(&self, j: usize) -> f64 {
        match self {
            SharedVariance::Scalar(v) => *v,
            SharedVariance::PerDim(v) => v[j],
        }
    }

    pub fn as_latent(&self) -> LatentVariance {
        match self {
            SharedVariance::Scalar(v) => LatentVariance::Shared(*v),
            SharedVariance::PerDim(v) => LatentVariance::PerDim(v.clone()),
        }
    }

    fn tile(&self, rows: usize, m: usize) -> Tensor {
        Tensor::from_parts(
            vec![rows, m],
            (0..rows * m).map(|k| self.at(k % m)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmfConfig {
    pub sigma2: SharedVariance,
    pub kl_weight: f64,
}

impl Default for GmfConfig {
    fn default() -> Self {
        Self {
            sigma2: SharedVariance::Scalar(1.0),
            kl_weight: 1.0,
        }
    }
}

impl GmfConfig {
    pub fn validate(&self) -> Result<()> {
        self.sigma2.validate(None)?;
        if !(self.kl_weight >= 0.0) {
            return Err(invalid("kl_weight must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EbConfig {
    pub kl_weight: f64,
    /// Multiplies the prior variances inside the KL term only; sampling
    /// keeps the fitted class variances.
    pub prior_variance_scale: f64,
}

impl Default for EbConfig {
    fn default() -> Self {
        Self {
            kl_weight: 1.0,
            prior_variance_scale: 1.0,
        }
    }
}

impl EbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_weight >= 0.0) || !(self.prior_variance_scale > 0.0) {
            return Err(invalid("eb kl_weight must be >= 0 and prior_variance_scale > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationConfig {
    pub beta: f64,
    /// Components compared per step; `None` uses the whole group.
    pub group_size: Option<usize>,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            group_size: None,
        }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(invalid("beta must be >= 0"));
        }
        if self.beta > 0.0 && matches!(self.group_size, Some(n) if n < 2) {
            return Err(invalid("relational group_size must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TslConfig {
    pub temperature: f64,
    pub weight: f64,
}

impl Default for TslConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            weight: 1.0,
        }
    }
}

impl TslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !(self.weight >= 0.0) {
            return Err(invalid("tsl temperature must be > 0 and weight >= 0"));
        }
        Ok(())
    }
}

/// Values of the objective terms for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub kl: f64,
    pub relational: f64,
    pub tsl: f64,
    pub total: f64,
}

/// Breakdown plus the scalar handle to differentiate.
#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub total: Var,
}

/// One diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

fn check_variances(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(invalid(format!("{what} variances must be positive")));
    }
    Ok(())
}

/// `KL(N(mu_t, sigma2_t) || N(mu_s, sigma2_s))` for diagonal Gaussians.
pub fn kl_diag_gaussians(
    mu_t: &[f64],
    sigma2_t: &[f64],
    mu_s: &[f64],
    sigma2_s: &[f64],
) -> Result<f64> {
    let m = mu_t.len();
    if sigma2_t.len() != m || mu_s.len() != m || sigma2_s.len() != m {
        return Err(Error::ShapeMismatch {
            op: "kl_diag_gaussians",
            detail: "argument lengths differ".into(),
        });
    }
    check_variances(sigma2_t, "posterior")?;
    check_variances(sigma2_s, "prior")?;
    Ok((0..m)
        .map(|j| {
            let d = mu_t[j] - mu_s[j];
            0.5 * (sigma2_s[j] / sigma2_t[j]).ln() + (sigma2_t[j] + d * d) / (2.0 * sigma2_s[j])
                - 0.5
        })
        .sum())
}

/// Smoothed L1: `(x-y)^2 / 2` inside the unit band, `|x-y| - 1/2` outside.
pub fn huber(x: f64, y: f64) -> f64 {
    huber_value(x, y)
}

/// Mean KL over all ordered pairs (including `i = j`) of a mixture's
/// components.
pub fn relational_value(components: &[GaussianComponent]) -> Result<f64> {
    if components.is_empty() {
        return Err(Error::Empty("relational_value"));
    }
    let n = components.len() as f64;
    let mut total = 0.0;
    for a in components {
        for b in components {
            total += kl_diag_gaussians(&a.mu, &a.sigma2, &b.mu, &b.sigma2)?;
        }
    }
    Ok(total / (n * n))
}

/// Mean cross-entropy of `logits` against hard labels.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let t = tape.value(logits);
    if t.shape().len() != 2 || t.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("logits {:?} for {} labels", t.shape(), labels.len()),
        });
    }
    let (n, c) = (t.rows(), t.cols());
    let mut onehot = vec![0.0; n * c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(invalid(format!("label {y} out of range for {c} classes")));
        }
        onehot[i * c + y] = -1.0 / n as f64;
    }
    let ls = tape.log_softmax(logits)?;
    let w = tape.constant(Tensor::from_parts(vec![n, c], onehot));
    let picked = tape.mul(ls, w)?;
    tape.sum(picked, None)
}

fn weighted_square_sum(tape: &mut Tape, diff: Var, weights: Tensor) -> Result<Var> {
    let sq = tape.square(diff)?;
    let w = tape.constant(weights);
    let prod = tape.mul(sq, w)?;
    tape.sum(prod, None)
}

/// Fixed-variance KL between parallel posteriors:
/// `sum_i ||mu_t_i - mu_s_i||^2 / (2 sigma^2)` (per-dimension variances
/// divide dimension-wise).
pub fn gmf_kl_term(tape: &mut Tape, mu_t: Var, mu_s: Var, sigma2: &SharedVariance) -> Result<Var> {
    let shape = tape.value(mu_t).shape().to_vec();
    if shape.len() != 2 || tape.value(mu_s).shape() != shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "gmf_kl_term",
            detail: format!("{:?} vs {:?}", shape, tape.value(mu_s).shape()),
        });
    }
    sigma2.validate(Some(shape[1]))?;
    let diff = tape.sub(mu_t, mu_s)?;
    match sigma2 {
        SharedVariance::Scalar(v) => {
            let sq = tape.square(diff)?;
            let s = tape.sum(sq, None)?;
            tape.scale(s, 1.0 / (2.0 * v))
        }
        SharedVariance::PerDim(v) => {
            let (n, m) = (shape[0], shape[1]);
            let w = (0..n * m).map(|k| 1.0 / (2.0 * v[k % m])).collect();
            weighted_square_sum(tape, diff, Tensor::from_parts(vec![n, m], w))
        }
    }
}

/// KL between per-sample posteriors `N(mu_t_i, sigma2_c)` and the class
/// priors `N(mu_c, sigma2_c)` of each sample's label `c`; with equal
/// variances this is `sum_i sum_j (mu_t_ij - mu_cj)^2 / (2 sigma2_cj)`.
pub fn eb_kl_term(tape: &mut Tape, mu_t: Var, labels: &[usize], prior: &ClassPrior) -> Result<Var> {
    let shape = tape.value(mu_t).shape().to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || shape[1] != prior.latent_dim() {
        return Err(Error::ShapeMismatch {
            op: "eb_kl_term",
            detail: format!(
                "mu {shape:?} for {} labels and a {}-d prior",
                labels.len(),
                prior.latent_dim()
            ),
        });
    }
    let (n, m) = (shape[0], shape[1]);
    let mut means = Vec::with_capacity(n * m);
    let mut weights = Vec::with_capacity(n * m);
    for &c in labels {
        let s = prior.class(c)?;
        check_variances(&s.sigma2, "prior")?;
        means.extend_from_slice(&s.mu);
        weights.extend(s.sigma2.iter().map(|v| 1.0 / (2.0 * v)));
    }
    let target = tape.constant(Tensor::from_parts(vec![n, m], means));
    let diff = tape.sub(mu_t, target)?;
    weighted_square_sum(tape, diff, Tensor::from_parts(vec![n, m], weights))
}

/// Differentiable mixture relational value for means `mu` `(N, M)` with
/// constant variances `sigma2` `(N, M)`.
pub fn relational_value_var(tape: &mut Tape, mu: Var, sigma2: &Tensor) -> Result<Var> {
    let shape = tape.value(mu).shape().to_vec();
    if shape.len() != 2 || sigma2.shape() != shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "relational_value",
            detail: format!("mu {:?}, sigma2 {:?}", shape, sigma2.shape()),
        });
    }
    check_variances(sigma2.data(), "component")?;
    let (n, m) = (shape[0], shape[1]);
    let scale = 1.0 / (n * n) as f64;
    // Row (i, j) of `pairs` is e_i - e_j, so `pairs * mu` holds mu_i - mu_j.
    let mut pairs = vec![0.0; n * n * n];
    let mut weights = Vec::with_capacity(n * n * m);
    let mut constant = 0.0;
    for i in 0..n {
        for j in 0..n {
            let r = i * n + j;
            pairs[r * n + i] += 1.0;
            pairs[r * n + j] -= 1.0;
            let (si, sj) = (sigma2.row(i), sigma2.row(j));
            for k in 0..m {
                weights.push(scale / (2.0 * sj[k]));
                constant += 0.5 * (sj[k] / si[k]).ln() + si[k] / (2.0 * sj[k]) - 0.5;
            }
        }
    }
    let p = tape.constant(Tensor::from_parts(vec![n * n, n], pairs));
    let diffs = tape.matmul(p, mu)?;
    let quad = weighted_square_sum(tape, diffs, Tensor::from_parts(vec![n * n, m], weights))?;
    let c = tape.constant(Tensor::scalar(constant * scale));
    tape.add(quad, c)
}

/// `SL1(V(target), V(source))`; the source group is frozen.
pub fn relational_term(
    tape: &mut Tape,
    target_mu: Var,
    target_sigma2: &Tensor,
    source: &[GaussianComponent],
) -> Result<Var> {
    let n = tape.value(target_mu).rows();
    if n != source.len() {
        return Err(Error::ShapeMismatch {
            op: "relational_term",
            detail: format!("target group has {n} components, source {}", source.len()),
        });
    }
    let vt = relational_value_var(tape, target_mu, target_sigma2)?;
    let vs = tape.constant(Tensor::scalar(relational_value(source)?));
    tape.huber(vt, vs)
}

/// `T^2 * KL(softmax(teacher / T) || softmax(student / T))`, averaged over
/// the batch.
pub fn tsl_loss(
    tape: &mut Tape,
    student_logits: Var,
    teacher_logits: &Tensor,
    cfg: &TslConfig,
) -> Result<Var> {
    cfg.validate()?;
    let s = tape.value(student_logits);
    if s.shape() != teacher_logits.shape() || s.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "tsl_loss",
            detail: format!("{:?} vs {:?}", s.shape(), teacher_logits.shape()),
        });
    }
    let (n, c) = (s.rows(), s.cols());
    let t = cfg.temperature;
    let mut p = Vec::with_capacity(n * c);
    let mut entropy_term = 0.0;
    for row in teacher_logits.row_iter() {
        let scaled: Vec<f64> = row.iter().map(|v| v / t).collect();
        let probs = softmax_row(&scaled);
        let logp = log_softmax_row(&scaled);
        entropy_term += probs
            .iter()
            .zip(&logp)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, l)| q * l)
            .sum::<f64>();
        p.extend(probs);
    }
    let softened = tape.scale(student_logits, 1.0 / t)?;
    let log_q = tape.log_softmax(softened)?;
    let pw = tape.constant(Tensor::from_parts(vec![n, c], p));
    let cross = tape.mul(log_q, pw)?;
    let cross = tape.sum(cross, None)?;
    let neg_cross = tape.scale(cross, -1.0)?;
    let ent = tape.constant(Tensor::scalar(entropy_term));
    let kl = tape.add(neg_cross, ent)?;
    tape.scale(kl, t * t / n as f64)
}

/// Mini-batch of target samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<usize>,
    /// Source-set rows paired with each target row, when parallel.
    pub pair_index: Option<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Optional extra terms on top of an ELBO objective.
#[derive(Debug, Clone, Copy, Default)]
pub struct Extras<'a> {
    pub relation: Option<&'a RelationConfig>,
    /// Teacher logits aligned with the batch rows.
    pub tsl: Option<(&'a TslConfig, &'a Tensor)>,
}

/// Weighted sum of the terms, built in the fixed order
/// `((nll + kw*kl) + beta*rel) + tw*tsl` so the breakdown total equals the
/// differentiated scalar bit for bit.
pub fn compose(
    tape: &mut Tape,
    nll: Var,
    kl: Option<(Var, f64)>,
    relational: Option<(Var, f64)>,
    tsl: Option<(Var, f64)>,
) -> Result<LossOutput> {
    let value = |tape: &Tape, v: Var| tape.value(v).data()[0];
    let mut b = LossBreakdown {
        nll: value(tape, nll),
        ..Default::default()
    };
    let mut total = nll;
    let mut acc = b.nll;
    for (term, slot) in [
        (kl, &mut b.kl),
        (relational, &mut b.relational),
        (tsl, &mut b.tsl),
    ] {
        if let Some((v, w)) = term {
            *slot = value(tape, v);
            let weighted = tape.scale(v, w)?;
            total = tape.add(total, weighted)?;
            acc += w * *slot;
        }
    }
    b.total = value(tape, total);
    debug_assert_eq!(b.total.to_bits(), acc.to_bits());
    Ok(LossOutput {
        breakdown: b,
        total,
    })
}

fn take_group(n: usize, relation: &RelationConfig) -> usize {
    relation.group_size.map_or(n, |g| g.min(n))
}

fn first_rows(tape: &mut Tape, v: Var, k: usize) -> Result<Var> {
    let n = tape.value(v).rows();
    if k == n {
        return Ok(v);
    }
    let mut sel = vec![0.0; k * n];
    for i in 0..k {
        sel[i * n + i] = 1.0;
    }
    let s = tape.constant(Tensor::from_parts(vec![k, n], sel));
    tape.matmul(s, v)
}

fn add_tsl(tape: &mut Tape, logits: Var, extras: &Extras) -> Result<Option<(Var, f64)>> {
    extras
        .tsl
        .map(|(cfg, teacher)| Ok((tsl_loss(tape, logits, teacher, cfg)?, cfg.weight)))
        .transpose()
}

/// Negative GMF ELBO for a parallel batch.
///
/// `source_mu` holds the frozen source model's latent means for the whole
/// source set; the batch's pair index selects each row's partner.
pub fn gmf_elbo_loss(
    tape: &mut Tape,
    model: &BoundModel,
    batch: &Batch,
    source_mu: &Tensor,
    cfg: &GmfConfig,
    extras: &Extras,
    key: NoiseKey,
) -> Result<LossOutput> {
    let x = tape.constant(batch.x.clone());
    let mu = model.forward_latent(tape, x)?;
    gmf_elbo_from_latent(tape, model, mu, batch, source_mu, cfg, extras, key)
}

/// [`gmf_elbo_loss`] starting from the batch latent means `mu`.
#[allow(clippy::too_many_arguments)]
pub fn gmf_elbo_from_latent(
    tape: &mut Tape,
    model: &BoundModel,
    mu: Var,
    batch: &Batch,
    source_mu: &Tensor,
    cfg: &GmfConfig,
    extras: &Extras,
    key: NoiseKey,
) -> Result<LossOutput> {
    cfg.validate()?;
    let pairs = batch.pair_index.as_ref().ok_or(Error::MissingPairing)?;
    let mu_s = source_mu.select_rows(pairs)?;
    let n = batch.len();
    let (latent, logits) = model.sample_logits(tape, mu, &cfg.sigma2.as_latent(), key)?;
    let nll = cross_entropy(tape, logits, &batch.y)?;
    let mu_s_var = tape.constant(mu_s.clone());
    let kl_sum = gmf_kl_term(tape, latent.mu, mu_s_var, &cfg.sigma2)?;
    let kl = tape.scale(kl_sum, 1.0 / n as f64)?;

    let relational = match extras.relation {
        Some(rel) if rel.beta > 0.0 => {
            let k = take_group(n, rel);
            let m = mu_s.cols();
            let var = cfg.sigma2.tile(k, m);
            let source: Vec<GaussianComponent> = (0..k)
                .map(|i| GaussianComponent {
                    mu: mu_s.row(i).to_vec(),
                    sigma2: var.row(i).to_vec(),
                })
                .collect();
            let group = first_rows(tape, latent.mu, k)?;
            Some((relational_term(tape, group, &var, &source)?, rel.beta))
        }
        _ => None,
    };
    let tsl = add_tsl(tape, logits, extras)?;
    compose(tape, nll, Some((kl, cfg.kl_weight)), relational, tsl)
}

/// Per-sample sampling variances: each row gets its class's fitted variance.
pub fn class_variances(labels: &[usize], prior: &ClassPrior) -> Result<Tensor> {
    let m = prior.latent_dim();
    let mut v = Vec::with_capacity(labels.len() * m);
    for &c in labels {
        v.extend_from_slice(&prior.class(c)?.sigma2);
    }
    Tensor::new(vec![labels.len(), m], v)
}

/// Negative EB ELBO: no source samples are referenced, only the class
/// priors fitted on the source domain.
pub fn eb_elbo_loss(
    tape: &mut Tape,
    model: &BoundModel,
    batch: &Batch,
    prior: &ClassPrior,
    cfg: &EbConfig,
    extras: &Extras,
    key: NoiseKey,
) -> Result<LossOutput> {
    let x = tape.constant(batch.x.clone());
    let mu = model.forward_latent(tape, x)?;
    eb_elbo_from_latent(tape, model, mu, batch, prior, cfg, extras, key)
}

/// [`eb_elbo_loss`] starting from the batch latent means `mu`.
#[allow(clippy::too_many_arguments)]
pub fn eb_elbo_from_latent(
    tape: &mut Tape,
    model: &BoundModel,
    mu: Var,
    batch: &Batch,
    prior: &ClassPrior,
    cfg: &EbConfig,
    extras: &Extras,
    key: NoiseKey,
) -> Result<LossOutput> {
    cfg.validate()?;
    let n = batch.len();
    if let Some(&c) = batch.y.iter().find(|&&c| c >= prior.num_classes()) {
        return Err(Error::UnseenClass(c));
    }
    let sample_var = LatentVariance::PerSample(class_variances(&batch.y, prior)?);
    let (latent, logits) = model.sample_logits(tape, mu, &sample_var, key)?;
    let nll = cross_entropy(tape, logits, &batch.y)?;
    let kl_prior = if cfg.prior_variance_scale == 1.0 {
        prior.clone()
    } else {
        prior.with_variance_scale(cfg.prior_variance_scale)?
    };
    let kl_sum = eb_kl_term(tape, latent.mu, &batch.y, &kl_prior)?;
    let kl = tape.scale(kl_sum, 1.0 / n as f64)?;

    let relational = match extras.relation {
        Some(rel) if rel.beta > 0.0 => {
            let mut present: Vec<usize> = batch.y.clone();
            present.sort_unstable();
            present.dedup();
            present.truncate(take_group(present.len(), rel));
            if present.len() < 2 {
                None
            } else {
                let k = present.len();
                let m = prior.latent_dim();
                // Row r averages the batch rows of class present[r].
                let mut avg = vec![0.0; k * n];
                for (r, &c) in present.iter().enumerate() {
                    let members: Vec<usize> = (0..n).filter(|&i| batch.y[i] == c).collect();
                    for &i in &members {
                        avg[r * n + i] = 1.0 / members.len() as f64;
                    }
                }
                let a = tape.constant(Tensor::from_parts(vec![k, n], avg));
                let class_means = tape.matmul(a, latent.mu)?;
                let mut var = Vec::with_capacity(k * m);
                let mut source = Vec::with_capacity(k);
                for &c in &present {
                    let s = prior.class(c)?;
                    var.extend_from_slice(&s.sigma2);
                    source.push(GaussianComponent {
                        mu: s.mu.clone(),
                        sigma2: s.sigma2.clone(),
                    });
                }
                let var = Tensor::from_parts(vec![k, m], var);
                Some((
                    relational_term(tape, class_means, &var, &source)?,
                    rel.beta,
                ))
            }
        }
        _ => None,
    };
    let tsl = add_tsl(tape, logits, extras)?;
    compose(tape, nll, Some((kl, cfg.kl_weight)), relational, tsl)
}

/// Plain cross-entropy on the deterministic forward pass, optionally with a
/// TSL term.
pub fn one_hot_loss(
    tape: &mut Tape,
    model: &BoundModel,
    batch: &Batch,
    extras: &Extras,
) -> Result<LossOutput> {
    let x = tape.constant(batch.x.clone());
    let (_, logits) = model.forward_inference(tape, x)?;
    let nll = cross_entropy(tape, logits, &batch.y)?;
    let tsl = add_tsl(tape, logits, extras)?;
    compose(tape, nll, None, None, tsl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::ClassStats;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn kl_hand_values() {
        assert_eq!(
            kl_diag_gaussians(&[0.3, -1.0], &[0.5, 2.0], &[0.3, -1.0], &[0.5, 2.0]).unwrap(),
            0.0
        );
        approx(kl_diag_gaussians(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap(), 0.5, 1e-15);
        assert!(kl_diag_gaussians(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
        assert!(kl_diag_gaussians(&[0.0], &[1.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn relational_hand_value_and_errors() {
        let comps = vec![
            GaussianComponent {
                mu: vec![0.0],
                sigma2: vec![1.0],
            },
            GaussianComponent {
                mu: vec![1.0],
                sigma2: vec![1.0],
            },
        ];
        approx(relational_value(&comps).unwrap(), 0.25, 1e-15);
        assert!(relational_value(&[]).is_err());
        let same = vec![comps[0].clone(); 3];
        assert_eq!(relational_value(&same).unwrap(), 0.0);
    }

    #[test]
    fn huber_hand_values() {
        assert_eq!(huber(2.0, 2.0), 0.0);
        assert_eq!(huber(3.0, 0.0), 2.5);
        assert_eq!(huber(1.0, 0.0), 0.5);
    }

    fn scalar_of(f: impl FnOnce(&mut Tape) -> Result<Var>) -> f64 {
        let mut tape = Tape::new();
        let v = f(&mut tape).unwrap();
        tape.value(v).item().unwrap()
    }

    #[test]
    fn gmf_kl_hand_value() {
        let v = scalar_of(|t| {
            let a = t.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
            let b = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
            gmf_kl_term(t, a, b, &SharedVariance::Scalar(1.0))
        });
        approx(v, 0.5, 1e-15);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let b = tape.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        assert!(gmf_kl_term(&mut tape, a, b, &SharedVariance::Scalar(1.0)).is_err());
        assert!(gmf_kl_term(&mut tape, a, a, &SharedVariance::Scalar(0.0)).is_err());
    }

    fn one_dim_prior() -> ClassPrior {
        ClassPrior::new(
            vec![ClassStats {
                mu: vec![1.0],
                sigma2: vec![1.0],
                count: 2,
            }],
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn eb_kl_hand_value_and_unseen_class() {
        let prior = one_dim_prior();
        let v = scalar_of(|t| {
            let mu = t.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap());
            eb_kl_term(t, mu, &[0], &prior)
        });
        approx(v, 0.5, 1e-15);
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap());
        assert!(matches!(
            eb_kl_term(&mut tape, mu, &[4], &prior),
            Err(Error::UnseenClass(4))
        ));
    }

    #[test]
    fn relational_term_small_branch() {
        let source = vec![
            GaussianComponent {
                mu: vec![0.0],
                sigma2: vec![1.0],
            };
            2
        ];
        let v = scalar_of(|t| {
            let mu = t.constant(Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap());
            let var = Tensor::filled(vec![2, 1], 1.0);
            relational_term(t, mu, &var, &source)
        });
        approx(v, 0.03125, 1e-15);
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::matrix(3, 1, vec![0.0; 3]).unwrap());
        assert!(relational_term(&mut tape, mu, &Tensor::filled(vec![3, 1], 1.0), &source).is_err());
    }

    #[test]
    fn tsl_hand_value_and_identity() {
        let teacher = Tensor::matrix(1, 2, vec![3f64.ln(), 0.0]).unwrap();
        let cfg = TslConfig::default();
        let v = scalar_of(|t| {
            let s = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
            tsl_loss(t, s, &teacher, &cfg)
        });
        approx(v, 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln(), 1e-14);
        approx(v, 0.13081, 1e-4);
        let same = scalar_of(|t| {
            let s = t.constant(teacher.clone());
            tsl_loss(t, s, &teacher, &cfg)
        });
        approx(same, 0.0, 1e-15);
    }

    #[test]
    fn cross_entropy_uniform() {
        let v = scalar_of(|t| {
            let l = t.constant(Tensor::matrix(2, 4, vec![0.0; 8]).unwrap());
            cross_entropy(t, l, &[0, 3])
        });
        approx(v, 4f64.ln(), 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(RelationConfig {
            beta: 0.1,
            group_size: Some(1)
        }
        .validate()
        .is_err());
        assert!(TslConfig {
            temperature: 0.0,
            weight: 1.0
        }
        .validate()
        .is_err());
        assert!(GmfConfig {
            sigma2: SharedVariance::Scalar(-1.0),
            kl_weight: 1.0
        }
        .validate()
        .is_err());
    }
}
