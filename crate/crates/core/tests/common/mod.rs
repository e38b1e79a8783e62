#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use vbkt::autodiff::seeded_rng;
use vbkt::losses::Batch;
use vbkt::prior::{ClassPrior, ClassStats};
use vbkt::{LatentSplitModel, ModelConfig, Tensor};

pub const INPUT: usize = 5;
pub const LATENT: usize = 4;
pub const CLASSES: usize = 3;
pub const BATCH: usize = 4;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_dim: INPUT,
        theta_hidden: vec![6],
        latent_dim: LATENT,
        omega_hidden: vec![],
        num_classes: CLASSES,
    }
}

pub fn normal_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = seeded_rng(&[seed, 0x7e57]);
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Everything one random evaluation point needs.
pub struct Fixture {
    pub model: LatentSplitModel,
    pub batch: Batch,
    pub source_mu: Tensor,
    pub prior: ClassPrior,
    pub teacher: Tensor,
}

pub fn fixture(seed: u64) -> Fixture {
    let model = LatentSplitModel::new_random(tiny_config(), seed).unwrap();
    let mut rng = seeded_rng(&[seed, 0xf1]);
    let classes = (0..CLASSES)
        .map(|_| ClassStats {
            mu: (0..LATENT).map(|_| StandardNormal.sample(&mut rng)).collect(),
            sigma2: (0..LATENT).map(|_| rng.random_range(0.5..2.0)).collect(),
            count: 10,
        })
        .collect();
    Fixture {
        model,
        batch: Batch {
            x: normal_tensor(vec![BATCH, INPUT], seed ^ 1),
            y: vec![0, 1, 2, 0],
            pair_index: Some(vec![2, 0, 3, 1]),
        },
        source_mu: normal_tensor(vec![BATCH, LATENT], seed ^ 2),
        prior: ClassPrior::new(classes, 1e-6).unwrap(),
        teacher: normal_tensor(vec![BATCH, CLASSES], seed ^ 3),
    }
}
