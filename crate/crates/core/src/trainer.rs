//! Deterministic mini-batch SGD for every adaptation method.
//!
//! Shuffling is keyed by `(seed, epoch)` and latent noise by
//! `(seed, global step, 0)`, so a run is a pure function of its inputs.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{seeded_rng, NoiseKey, Tape, Tensor};
use crate::data::{augment, DomainDataset};
use crate::error::{invalid, Error, Result};
use crate::losses::{
    eb_elbo_loss, gmf_elbo_loss, one_hot_loss, Batch, EbConfig, Extras, GmfConfig,
    LossBreakdown, LossOutput, RelationConfig, SharedVariance, TslConfig,
};
use crate::model::{BoundModel, LatentSplitModel};
use crate::prior::ClassPrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NoTransfer,
    OneHot,
    Tsl,
    VbktGmf,
    VbktEb,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::NoTransfer => "no_transfer",
            Method::OneHot => "one_hot",
            Method::Tsl => "tsl",
            Method::VbktGmf => "vbkt_gmf",
            Method::VbktEb => "vbkt_eb",
        }
    }

    /// Whether adaptation starts from a copy of the source model.
    pub fn starts_from_source(self) -> bool {
        self != Method::NoTransfer
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub use_relational: bool,
    pub combine_tsl: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub gmf: GmfConfig,
    pub eb: EbConfig,
    pub relation: RelationConfig,
    pub tsl: TslConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::OneHot,
            use_relational: false,
            combine_tsl: false,
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
            gmf: GmfConfig::default(),
            eb: EbConfig::default(),
            relation: RelationConfig::default(),
            tsl: TslConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        let check = |r: Result<()>| r.map_err(|e| Error::InvalidConfig(e.to_string()));
        check(self.gmf.validate())?;
        check(self.eb.validate())?;
        check(self.relation.validate())?;
        check(self.tsl.validate())?;
        if self.use_relational
            && !matches!(self.method, Method::VbktGmf | Method::VbktEb)
        {
            return Err(Error::InvalidConfig(format!(
                "the relational term needs a VBKT method, not {}",
                self.method.name()
            )));
        }
        Ok(())
    }

    fn uses_tsl(&self) -> bool {
        self.method == Method::Tsl || self.combine_tsl
    }
}

/// Inputs shared by a training run; the source model is only read.
#[derive(Debug, Clone, Copy)]
pub struct TrainInputs<'a> {
    pub target: &'a DomainDataset,
    /// Frozen source model: teacher for TSL, latent anchor for GMF.
    pub source_model: Option<&'a LatentSplitModel>,
    /// Source set that `target.pair_index` refers to.
    pub source: Option<&'a DomainDataset>,
    pub prior: Option<&'a ClassPrior>,
}

impl<'a> TrainInputs<'a> {
    pub fn new(target: &'a DomainDataset) -> Self {
        Self {
            target,
            source_model: None,
            source: None,
            prior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Per-step means of each term.
    pub mean: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub seed: u64,
    pub steps: u64,
    pub epochs: Vec<EpochSummary>,
    /// Filled in by whoever evaluates the adapted model.
    pub target_accuracy: Option<f64>,
    /// Kept out of the serialized report so reports stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

/// Copy of the source model, or a fresh random model for `no_transfer`.
pub fn initial_model(
    method: Method,
    source_model: &LatentSplitModel,
    seed: u64,
) -> Result<LatentSplitModel> {
    if method.starts_from_source() {
        Ok(source_model.clone())
    } else {
        LatentSplitModel::new_random(source_model.config().clone(), seed ^ 0x5c7a_7c4)
    }
}

/// One plain SGD step on `model` minimizing the scalar built by `loss`.
pub fn sgd_step(
    model: &mut LatentSplitModel,
    learning_rate: f64,
    loss: impl FnOnce(&mut Tape, &BoundModel) -> Result<LossOutput>,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let out = loss(&mut tape, &bound)?;
    tape.backward(out.total)?;
    let grads: Vec<Vec<f64>> = bound
        .param_vars()
        .into_iter()
        .map(|v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    for (p, g) in model.parameters_mut().into_iter().zip(grads) {
        if g.is_empty() {
            continue;
        }
        p.data_mut()
            .iter_mut()
            .zip(&g)
            .for_each(|(w, d)| *w -= learning_rate * d);
    }
    Ok(out.breakdown)
}

/// Row order of every mini-batch in `epoch`.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(&[seed, epoch as u64, 0x5b]));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    model: LatentSplitModel,
    target: &'a DomainDataset,
    prior: Option<&'a ClassPrior>,
    source_mu: Option<Tensor>,
    teacher_logits: Option<Tensor>,
    step: u64,
}

impl<'a> Trainer<'a> {
    /// Checks every prerequisite of the method before any step runs.
    pub fn new(init: LatentSplitModel, inputs: TrainInputs<'a>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let target = inputs.target;
        if target.is_empty() {
            return Err(Error::Empty("target dataset"));
        }
        if target.input_dim() != init.input_dim() || target.num_classes > init.num_classes() {
            return Err(Error::InvalidConfig(
                "target data does not fit the model's input or class count".into(),
            ));
        }
        let need_source = |what: &str| {
            inputs
                .source_model
                .ok_or_else(|| Error::InvalidConfig(format!("{what} needs the source model")))
        };
        let mut source_mu = None;
        let mut prior = None;
        match cfg.method {
            Method::VbktGmf => {
                let model = need_source("vbkt_gmf")?;
                let pairs = target.pair_index.as_ref().ok_or(Error::MissingPairing)?;
                let source = inputs.source.ok_or_else(|| {
                    Error::InvalidConfig("vbkt_gmf needs the paired source dataset".into())
                })?;
                target.check_pairing(source)?;
                cfg.gmf.sigma2.validate(Some(init.latent_dim()))?;
                // Only the paired rows are ever read.
                let mut mu = Tensor::zeros(vec![source.len(), init.latent_dim()]);
                let paired = model.latent_means(&source.x.select_rows(pairs)?)?;
                let m = init.latent_dim();
                for (row, &j) in paired.row_iter().zip(pairs) {
                    mu.data_mut()[j * m..(j + 1) * m].copy_from_slice(row);
                }
                source_mu = Some(mu);
            }
            Method::VbktEb => {
                let p = inputs.prior.ok_or_else(|| {
                    Error::InvalidConfig("vbkt_eb needs a fitted class prior".into())
                })?;
                if p.latent_dim() != init.latent_dim() {
                    return Err(Error::InvalidConfig("prior latent size differs from model".into()));
                }
                if let Some(&c) = target.y.iter().find(|&&c| c >= p.num_classes()) {
                    return Err(Error::UnseenClass(c));
                }
                prior = Some(p);
            }
            _ => {}
        }
        let teacher_logits = if cfg.uses_tsl() {
            let teacher = need_source("tsl")?;
            // The teacher sees the source view of each pair when one exists.
            let x = match (&target.pair_index, inputs.source) {
                (Some(p), Some(s)) => s.x.select_rows(p)?,
                _ => target.x.clone(),
            };
            Some(teacher.logits(&x)?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            model: init,
            target,
            prior,
            source_mu,
            teacher_logits,
            step: 0,
        })
    }

    pub fn model(&self) -> &LatentSplitModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Steps taken so far (also the noise-key counter).
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        epoch_batches(self.target.len(), self.cfg.batch_size, self.cfg.seed, epoch)
    }

    pub fn batch(&self, rows: &[usize]) -> Result<Batch> {
        Ok(Batch {
            x: self.target.x.select_rows(rows)?,
            y: rows.iter().map(|&i| self.target.y[i]).collect(),
            pair_index: self
                .target
                .pair_index
                .as_ref()
                .map(|p| rows.iter().map(|&i| p[i]).collect()),
        })
    }

    /// Noise key used by the next step.
    pub fn next_key(&self) -> NoiseKey {
        NoiseKey::new(self.cfg.seed, self.step, 0)
    }

    /// One SGD step on the given target rows.
    pub fn step(&mut self, rows: &[usize]) -> Result<LossBreakdown> {
        let batch = self.batch(rows)?;
        let teacher = self
            .teacher_logits
            .as_ref()
            .map(|t| t.select_rows(rows))
            .transpose()?;
        let key = self.next_key();
        let cfg = &self.cfg;
        let relation = cfg.use_relational.then_some(&cfg.relation);
        let extras = Extras {
            relation,
            tsl: teacher.as_ref().map(|t| (&cfg.tsl, t)),
        };
        let (source_mu, prior) = (self.source_mu.as_ref(), self.prior);
        let out = sgd_step(&mut self.model, cfg.learning_rate, |tape, bound| match cfg.method {
            Method::NoTransfer | Method::OneHot | Method::Tsl => {
                one_hot_loss(tape, bound, &batch, &extras)
            }
            Method::VbktGmf => gmf_elbo_loss(
                tape,
                bound,
                &batch,
                source_mu.expect("checked in new"),
                &cfg.gmf,
                &extras,
                key,
            ),
            Method::VbktEb => eb_elbo_loss(
                tape,
                bound,
                &batch,
                prior.expect("checked in new"),
                &cfg.eb,
                &extras,
                key,
            ),
        })?;
        self.step += 1;
        let all = [out.nll, out.kl, out.relational, out.tsl, out.total];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training loss"));
        }
        Ok(out)
    }

    /// Runs every epoch and returns the adapted model.
    pub fn run(mut self) -> Result<(LatentSplitModel, TrainReport)> {
        let start = Instant::now();
        let mut epochs = Vec::with_capacity(self.cfg.epochs);
        for epoch in 0..self.cfg.epochs {
            let mut acc = LossBreakdown::default();
            let batches = self.epoch_batches(epoch);
            for rows in &batches {
                let b = self.step(rows)?;
                acc.nll += b.nll;
                acc.kl += b.kl;
                acc.relational += b.relational;
                acc.tsl += b.tsl;
                acc.total += b.total;
            }
            let k = batches.len() as f64;
            epochs.push(EpochSummary {
                epoch,
                mean: LossBreakdown {
                    nll: acc.nll / k,
                    kl: acc.kl / k,
                    relational: acc.relational / k,
                    tsl: acc.tsl / k,
                    total: acc.total / k,
                },
            });
        }
        let report = TrainReport {
            method: self.cfg.method,
            seed: self.cfg.seed,
            steps: self.step,
            epochs,
            target_accuracy: None,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        };
        Ok((self.model, report))
    }
}

/// Trains `init` with `cfg`; see [`Trainer`].
pub fn train(
    init: LatentSplitModel,
    inputs: TrainInputs,
    cfg: TrainConfig,
) -> Result<(LatentSplitModel, TrainReport)> {
    Trainer::new(init, inputs, cfg)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    #[default]
    Scalar,
    PerDim,
}

/// Latent variance from augmented copies: per-sample standard deviation of
/// the latent means across copies, averaged over samples (and, in scalar
/// mode, over dimensions), then squared and floored.
pub fn estimate_sigma(
    source_model: &LatentSplitModel,
    data: &DomainDataset,
    n_aug: usize,
    strength: f64,
    seed: u64,
    mode: SigmaMode,
    variance_floor: f64,
) -> Result<SharedVariance> {
    if data.is_empty() {
        return Err(Error::Empty("sigma estimation data"));
    }
    if !(variance_floor > 0.0) {
        return Err(invalid("variance_floor must be positive"));
    }
    let copies = augment(&data.x, n_aug, strength, seed)?;
    let latents = copies
        .iter()
        .map(|x| source_model.latent_means(x))
        .collect::<Result<Vec<_>>>()?;
    let (n, m) = (data.len(), source_model.latent_dim());
    let k = n_aug as f64;
    let mut mean_std = vec![0.0; m];
    for i in 0..n {
        for (j, slot) in mean_std.iter_mut().enumerate() {
            let vals = latents.iter().map(|z| z.row(i)[j]);
            let mean = vals.clone().sum::<f64>() / k;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
            *slot += var.sqrt() / n as f64;
        }
    }
    let square = |s: f64| (s * s).max(variance_floor);
    Ok(match mode {
        SigmaMode::Scalar => SharedVariance::Scalar(square(mean_std.iter().sum::<f64>() / m as f64)),
        SigmaMode::PerDim => SharedVariance::PerDim(mean_std.into_iter().map(square).collect()),
    })
}
