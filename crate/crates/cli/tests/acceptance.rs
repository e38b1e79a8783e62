//! Acceptance report: one PASS/FAIL line per criterion, nonzero exit status
//! if any criterion fails.
//!
//! Run with `cargo test --release -p vbkt-cli --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use vbkt::autodiff::{grad_check, relative_error, GradCheckReport, NoiseKey, Tape, Var};
use vbkt::data::DomainDataset;
use vbkt::losses::{
    compose, cross_entropy, eb_elbo_from_latent, gmf_elbo_from_latent, huber,
    kl_diag_gaussians, relational_term, relational_value, tsl_loss, Batch, EbConfig, Extras,
    GaussianComponent, GmfConfig, SharedVariance, TslConfig,
};
use vbkt::metrics::{accuracy, intra_class_discrepancy};
use vbkt::model::{BoundModel, LatentVariance};
use vbkt::prior::{fit_class_priors, ClassPrior, ClassStats};
use vbkt::trainer::{epoch_batches, initial_model, sgd_step, Method, TrainConfig, Trainer, TrainInputs};
use vbkt::{LatentSplitModel, ModelConfig, Tensor};
use vbkt_cli::{cmd_run, prepare, CellResult, ExperimentConfig, MethodSpec, Prepared};

type Verdict = Result<String, String>;

fn normals(n: usize, seed: u64, stream: u64) -> Vec<f64> {
    NoiseKey::new(seed, stream, 0xacce).standard_normal(n)
}

fn tensor(shape: Vec<usize>, seed: u64, stream: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, normals(n, seed, stream)).unwrap()
}

// ---------------------------------------------------------------- gradients

struct Point {
    model: LatentSplitModel,
    batch: Batch,
    source_mu: Tensor,
    prior: ClassPrior,
    teacher: Tensor,
}

fn point(seed: u64) -> Point {
    let config = ModelConfig {
        input_dim: 5,
        theta_hidden: vec![6],
        latent_dim: 4,
        omega_hidden: vec![],
        num_classes: 3,
    };
    let means = normals(12, seed, 1);
    let vars = normals(12, seed, 2);
    let classes = (0..3)
        .map(|c| ClassStats {
            mu: means[4 * c..4 * c + 4].to_vec(),
            sigma2: vars[4 * c..4 * c + 4].iter().map(|v| 0.5 + v.abs()).collect(),
            count: 10,
        })
        .collect();
    Point {
        model: LatentSplitModel::new_random(config, seed).unwrap(),
        batch: Batch {
            x: tensor(vec![4, 5], seed, 3),
            y: vec![0, 1, 2, 0],
            pair_index: Some(vec![2, 0, 3, 1]),
        },
        source_mu: tensor(vec![4, 4], seed, 4),
        prior: ClassPrior::new(classes, 1e-6).unwrap(),
        teacher: tensor(vec![4, 3], seed, 5),
    }
}

type LossFn<'a> = dyn Fn(&mut Tape, &BoundModel, Var, &Point) -> vbkt::Result<Var> + 'a;

/// Elements with an exactly vanishing gradient (directions the loss is
/// invariant along) must show only roundoff; the rest meet `tol`.
fn accept(r: &GradCheckReport, tol: f64, invariant_ok: bool) -> bool {
    if !invariant_ok {
        return r.pass;
    }
    r.analytic.iter().zip(&r.numeric).all(|(&a, &n)| {
        if a.abs() <= 1e-12 {
            n.abs() <= 1e-9
        } else {
            relative_error(a, n) <= tol
        }
    })
}

fn grad_suite(loss: &LossFn<'_>, invariant_ok: bool) -> Result<usize, String> {
    let (step, tol) = (1e-5, 1e-4);
    let mut checks = 0;
    for k in 0..20 {
        let p = point(1000 + k);
        for idx in 0..p.model.parameters().len() {
            let at = p.model.parameters()[idx].1.clone();
            let r = grad_check(
                |tape, w| {
                    let bound = p.model.bind_with_param(tape, idx, w)?;
                    let x = tape.constant(p.batch.x.clone());
                    let mu = bound.forward_latent(tape, x)?;
                    loss(tape, &bound, mu, &p)
                },
                &at,
                step,
                tol,
            )
            .map_err(|e| e.to_string())?;
            if !accept(&r, tol, invariant_ok) {
                return Err(format!("{} at point {k}: max rel err {:e}", p.model.parameters()[idx].0, r.max_rel_error));
            }
            checks += 1;
        }
        let mu0 = p.model.latent_means(&p.batch.x).unwrap();
        let r = grad_check(
            |tape, mu| {
                let bound = p.model.bind(tape, false);
                loss(tape, &bound, mu, &p)
            },
            &mu0,
            step,
            tol,
        )
        .map_err(|e| e.to_string())?;
        if !accept(&r, tol, invariant_ok) {
            return Err(format!("batch mu at point {k}: max rel err {:e}", r.max_rel_error));
        }
        checks += 1;
    }
    Ok(checks)
}

fn criterion_1() -> Verdict {
    let key = NoiseKey::new(3, 1, 0);
    let gmf = GmfConfig {
        sigma2: SharedVariance::Scalar(0.7),
        kl_weight: 1.0,
    };
    let eb = EbConfig::default();
    let tsl = TslConfig {
        temperature: 1.5,
        weight: 1.0,
    };
    let suites: Vec<(&str, Box<LossFn<'_>>, bool)> = vec![
        (
            "gmf_elbo_loss",
            Box::new(|t, m, mu, p| {
                Ok(gmf_elbo_from_latent(t, m, mu, &p.batch, &p.source_mu, &gmf, &Extras::default(), key)?.total)
            }),
            false,
        ),
        (
            "eb_elbo_loss",
            Box::new(|t, m, mu, p| {
                Ok(eb_elbo_from_latent(t, m, mu, &p.batch, &p.prior, &eb, &Extras::default(), key)?.total)
            }),
            false,
        ),
        (
            "relational_term",
            Box::new(|t, _m, mu, p| {
                let var = Tensor::filled(vec![4, 4], 0.8);
                let source: Vec<GaussianComponent> = (0..4)
                    .map(|i| GaussianComponent {
                        mu: p.source_mu.row(i).to_vec(),
                        sigma2: vec![1.2; 4],
                    })
                    .collect();
                let scaled = t.scale(mu, 0.6)?;
                relational_term(t, scaled, &var, &source)
            }),
            true,
        ),
        (
            "tsl_loss",
            Box::new(|t, m, mu, p| {
                let logits = m.forward_logits(t, mu)?;
                tsl_loss(t, logits, &p.teacher, &tsl)
            }),
            false,
        ),
        (
            "cross_entropy",
            Box::new(|t, m, mu, p| {
                let logits = m.forward_logits(t, mu)?;
                cross_entropy(t, logits, &p.batch.y)
            }),
            false,
        ),
    ];
    let mut total = 0;
    for (name, loss, invariant_ok) in &suites {
        total += grad_suite(loss.as_ref(), *invariant_ok).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("{total} gradient checks over theta, omega and batch mu (5 objectives x 20 points)"))
}

// ---------------------------------------------------------------- oracles

fn log_normal(z: &[f64], mu: &[f64], var: &[f64]) -> f64 {
    z.iter()
        .zip(mu)
        .zip(var)
        .map(|((z, m), v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (z - m) * (z - m) / v))
        .sum()
}

fn criterion_2() -> Verdict {
    let (pairs, n, m) = (100u64, 1_000_000usize, 3usize);
    let mut worst: f64 = 0.0;
    let mut outside = 0;
    let mut z2 = 0.0;
    for k in 0..pairs {
        let p = normals(4 * m, 77, k);
        let (mu_t, mu_s) = (p[..m].to_vec(), p[m..2 * m].to_vec());
        let var_t: Vec<f64> = p[2 * m..3 * m].iter().map(|v| 0.3 + v.abs()).collect();
        let var_s: Vec<f64> = p[3 * m..].iter().map(|v| 0.3 + v.abs()).collect();
        let exact = kl_diag_gaussians(&mu_t, &var_t, &mu_s, &var_s).map_err(|e| e.to_string())?;
        let eps = NoiseKey::new(78, k, 0).standard_normal(n * m);
        let (mut sum, mut sum2) = (0.0, 0.0);
        let mut z = vec![0.0; m];
        for draw in eps.chunks(m) {
            for j in 0..m {
                z[j] = mu_t[j] + var_t[j].sqrt() * draw[j];
            }
            let d = log_normal(&z, &mu_t, &var_t) - log_normal(&z, &mu_s, &var_s);
            sum += d;
            sum2 += d * d;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let score = (mean - exact).abs() / se;
        worst = worst.max(score);
        z2 += score * score / pairs as f64;
        if score > 3.0 {
            outside += 1;
        }
    }
    let msg = format!(
        "{outside}/{pairs} pairs outside 3 SE (worst {worst:.2} SE, mean squared z-score {z2:.2})"
    );
    if outside == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3() -> Verdict {
    let mut worst: f64 = 0.0;
    for k in 0..50u64 {
        let n = 30 + (k as usize * 7) % 70;
        let c = 2 + (k as usize) % 4;
        let config = ModelConfig {
            input_dim: 6,
            theta_hidden: vec![8],
            latent_dim: 1 + (k as usize) % 5,
            omega_hidden: vec![],
            num_classes: c,
        };
        let model = LatentSplitModel::new_random(config, k).unwrap();
        let data = DomainDataset::new(
            tensor(vec![n, 6], k, 9),
            (0..n).map(|i| i % c).collect(),
            c,
            "random",
            None,
        )
        .unwrap();
        let prior = fit_class_priors(&model, &data, 1e-300).map_err(|e| e.to_string())?;
        let z = model.latent_means(&data.x).unwrap();
        for class in 0..c {
            let rows: Vec<&[f64]> = (0..n).filter(|&i| data.y[i] == class).map(|i| z.row(i)).collect();
            let count = rows.len() as f64;
            let s = prior.class(class).unwrap();
            for j in 0..z.cols() {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / count;
                let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / count;
                worst = worst.max((s.mu[j] - mean).abs()).max((s.sigma2[j] - var).abs());
            }
        }
    }
    let msg = format!("50 datasets, max abs deviation {worst:.1e}");
    if worst <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4() -> Verdict {
    let kl = kl_diag_gaussians(&[1.0], &[1.0], &[0.0], &[1.0]).map_err(|e| e.to_string())?;
    let comps = [
        GaussianComponent { mu: vec![0.0], sigma2: vec![1.0] },
        GaussianComponent { mu: vec![1.0], sigma2: vec![1.0] },
    ];
    let rel = relational_value(&comps).map_err(|e| e.to_string())?;
    let h = huber(3.0, 0.0);
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
    let teacher = Tensor::matrix(1, 2, vec![3f64.ln(), 0.0]).unwrap();
    let t = tsl_loss(&mut tape, s, &teacher, &TslConfig::default()).map_err(|e| e.to_string())?;
    let tsl = tape.value(t).item().unwrap();
    let msg = format!("kl {kl}, relational {rel}, huber {h}, tsl {tsl:.6}");
    let ok = (kl - 0.5).abs() < 1e-12
        && (rel - 0.25).abs() < 1e-12
        && (h - 2.5).abs() < 1e-12
        && (tsl - 0.13081).abs() <= 1e-4;
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- experiments

fn means(results: &[CellResult]) -> Result<BTreeMap<String, f64>, String> {
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        let a = r.outcome.clone().map_err(|e| format!("{} seed {}: {e}", r.method, r.seed))?;
        acc.entry(r.method.clone()).or_default().push(100.0 * a);
    }
    Ok(acc.into_iter().map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64)).collect())
}

fn fmt_means(m: &BTreeMap<String, f64>) -> String {
    m.iter().map(|(k, v)| format!("{k} {v:.2}")).collect::<Vec<_>>().join(", ")
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

struct Runs {
    parallel: Prepared,
    parallel_means: BTreeMap<String, f64>,
    non_parallel: Prepared,
    non_parallel_means: BTreeMap<String, f64>,
}

fn run_defaults(root: &Path) -> Result<(Runs, Duration, Duration), String> {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::parallel_default();
    let (_, results) = cmd_run(&cfg, &root.join("a"), jobs()).map_err(|e| e.to_string())?;
    let parallel_means = means(&results)?;
    let parallel = prepare(&cfg, &root.join("a")).map_err(|e| e.to_string())?;
    let t_par = t0.elapsed();

    let t1 = Instant::now();
    let cfg = ExperimentConfig::non_parallel_default();
    let (_, results) = cmd_run(&cfg, &root.join("a"), jobs()).map_err(|e| e.to_string())?;
    let non_parallel_means = means(&results)?;
    let non_parallel = prepare(&cfg, &root.join("a")).map_err(|e| e.to_string())?;
    Ok((
        Runs { parallel, parallel_means, non_parallel, non_parallel_means },
        t_par,
        t1.elapsed(),
    ))
}

fn criterion_5(r: &Runs) -> Verdict {
    let m = &r.parallel_means;
    let get = |k: &str| m.get(k).copied().ok_or(format!("missing {k}"));
    let (gmf, tsl, oh, nt, rela) =
        (get("vbkt_gmf")?, get("tsl")?, get("one_hot")?, get("no_transfer")?, get("vbkt_gmf_rela")?);
    let msg = fmt_means(m);
    if gmf > tsl && tsl > oh && oh > nt && rela >= gmf - 0.5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_6(r: &Runs) -> Verdict {
    let m = &r.non_parallel_means;
    let get = |k: &str| m.get(k).copied().ok_or(format!("missing {k}"));
    let (eb, rela, oh) = (get("vbkt_eb")?, get("vbkt_eb_rela")?, get("one_hot")?);
    let msg = fmt_means(m);
    if eb > oh && rela >= eb - 0.5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7(r: &Runs) -> Verdict {
    let drops: Vec<(&str, f64, f64)> = [("parallel", &r.parallel), ("non-parallel", &r.non_parallel)]
        .into_iter()
        .map(|(name, p)| {
            (name, 100.0 * p.source_report.source_test_accuracy, 100.0 * p.source_report.target_test_accuracy)
        })
        .collect();
    let msg = drops
        .iter()
        .map(|(n, s, t)| format!("{n}: {s:.2} -> {t:.2} (drop {:.2})", s - t))
        .collect::<Vec<_>>()
        .join("; ");
    if drops.iter().all(|(_, s, t)| s - t >= 20.0) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn mean_discrepancy(p: &Prepared, method: &str) -> Result<f64, String> {
    let classes = p.config.benchmark.task.num_classes;
    let mut total = 0.0;
    for &seed in &p.config.seeds {
        let model = LatentSplitModel::load(&p.cell_dir(method, seed).join("checkpoint.json"))
            .map_err(|e| e.to_string())?;
        for c in 0..classes {
            let d = intra_class_discrepancy(&model, &p.bench.target_test, c, p.config.analysis.n_samples, p.config.analysis.seed)
                .map_err(|e| e.to_string())?;
            total += d.mean_off_diagonal();
        }
    }
    Ok(total / (classes * p.config.seeds.len()) as f64)
}

fn criterion_8(r: &Runs) -> Verdict {
    let gmf = mean_discrepancy(&r.parallel, "vbkt_gmf")?;
    let oh = mean_discrepancy(&r.parallel, "one_hot")?;
    let msg = format!("vbkt_gmf {gmf:.4} vs one_hot {oh:.4}");
    if gmf <= oh {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn collect_outputs(dir: &Path, acc: &mut Vec<(String, Vec<u8>)>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_outputs(&path, acc);
        } else {
            let name = path.file_name().unwrap().to_string_lossy();
            if name == "results.csv" || name == "checkpoint.json" {
                acc.push((path.to_string_lossy().into_owned(), fs::read(&path).unwrap()));
            }
        }
    }
}

fn criterion_9(root: &Path, r: &Runs) -> Verdict {
    let cfg = ExperimentConfig::parallel_default();
    let (dir_b, _) = cmd_run(&cfg, &root.join("b"), jobs()).map_err(|e| e.to_string())?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    collect_outputs(&r.parallel.dir, &mut a);
    collect_outputs(&dir_b, &mut b);
    let strip = |v: Vec<(String, Vec<u8>)>, prefix: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = v
            .into_iter()
            .map(|(p, bytes)| (p.trim_start_matches(&*prefix.to_string_lossy()).to_string(), bytes))
            .collect();
        v.sort();
        v
    };
    let (a, b) = (strip(a, &r.parallel.dir), strip(b, &dir_b));
    let msg = format!("{} files compared", a.len());
    if a == b && a.len() > 1 {
        Ok(msg)
    } else {
        Err(format!("outputs differ ({msg})"))
    }
}

fn criterion_10(r: &Runs) -> Verdict {
    // (a) kl_weight = 0 GMF against plain sampled cross-entropy.
    let p = &r.parallel;
    let sigma2 = p.sigma2.clone().unwrap_or(SharedVariance::Scalar(1.0));
    let cfg = TrainConfig {
        seed: 0,
        gmf: GmfConfig { sigma2: sigma2.clone(), kl_weight: 0.0 },
        ..TrainConfig::for_method(Method::VbktGmf)
    };
    let inputs = TrainInputs {
        target: &p.bench.target_train,
        source_model: Some(&p.source_model),
        source: Some(&p.bench.source),
        prior: None,
    };
    let mut trainer = Trainer::new(p.source_model.clone(), inputs, cfg.clone()).map_err(|e| e.to_string())?;
    let mut plain = initial_model(Method::VbktGmf, &p.source_model, cfg.seed).map_err(|e| e.to_string())?;
    let variance = LatentVariance::Shared(sigma2.at(0));
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        for rows in epoch_batches(p.bench.target_train.len(), cfg.batch_size, cfg.seed, epoch) {
            let key = trainer.next_key();
            let a = trainer.step(&rows).map_err(|e| e.to_string())?;
            let batch = trainer.batch(&rows).map_err(|e| e.to_string())?;
            let b = sgd_step(&mut plain, cfg.learning_rate, |tape, bound| {
                let x = tape.constant(batch.x.clone());
                let (_, logits) = bound.forward_train(tape, x, &variance, key)?;
                let nll = cross_entropy(tape, logits, &batch.y)?;
                compose(tape, nll, None, None, None)
            })
            .map_err(|e| e.to_string())?;
            if a.nll != b.nll || trainer.model() != &plain {
                return Err(format!("kl_weight=0 diverges from sampled cross-entropy at step {steps}"));
            }
            steps += 1;
        }
    }
    let part_a = format!("kl_weight=0 identical over {steps} steps");

    // (b) EB with the prior variance inflated against one-hot, 3 seeds.
    let p = &r.non_parallel;
    let prior = p.prior.as_ref().ok_or("non-parallel run has no prior")?;
    let run = |spec: MethodSpec, seed: u64| -> Result<f64, String> {
        let mut tc = spec.train;
        tc.seed = seed;
        let init = initial_model(tc.method, &p.source_model, seed).map_err(|e| e.to_string())?;
        let inputs = TrainInputs {
            target: &p.bench.target_train,
            source_model: Some(&p.source_model),
            source: None,
            prior: Some(prior),
        };
        let (model, _) = vbkt::trainer::train(init, inputs, tc).map_err(|e| e.to_string())?;
        accuracy(&model, &p.bench.target_test).map_err(|e| e.to_string())
    };
    let (mut eb, mut oh) = (0.0, 0.0);
    for seed in 0..3 {
        let mut wide = TrainConfig::for_method(Method::VbktEb);
        wide.eb = EbConfig { prior_variance_scale: 1e8, ..EbConfig::default() };
        eb += 100.0 * run(MethodSpec::new("eb_wide", wide), seed)? / 3.0;
        oh += 100.0 * run(MethodSpec::new("one_hot", TrainConfig::for_method(Method::OneHot)), seed)? / 3.0;
    }
    let msg = format!("{part_a}; wide-prior eb {eb:.2} vs one_hot {oh:.2} (gap {:.2})", (eb - oh).abs());
    if (eb - oh).abs() <= 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- driver

/// Prints one criterion line. `spent` is time already used by shared
/// work that counts against this criterion's budget.
fn report(
    n: usize,
    what: &str,
    budget: Option<Duration>,
    spent: Duration,
    f: impl FnOnce() -> Verdict,
) -> bool {
    let start = Instant::now();
    let verdict = f();
    let elapsed = spent + start.elapsed();
    let over = budget.is_some_and(|b| elapsed > b);
    let (pass, detail) = match verdict {
        Ok(d) if !over => (true, d),
        Ok(d) => (false, format!("{d}; over time budget")),
        Err(d) => (false, d),
    };
    let budget = budget.map(|b| format!(" / {}s", b.as_secs())).unwrap_or_default();
    println!(
        "criterion {n}: {} {what}: {detail} [{:.1}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let none = Duration::ZERO;
    let mut ok = true;
    ok &= report(1, "gradient suite", Some(secs(60)), none, criterion_1);
    ok &= report(2, "KL Monte-Carlo oracle", Some(secs(120)), none, criterion_2);
    ok &= report(3, "class-prior statistics oracle", Some(secs(10)), none, criterion_3);
    ok &= report(4, "hand values", Some(secs(1)), none, criterion_4);

    let root = tempfile::tempdir().expect("temporary directory");
    let (runs, t_par, t_non) = match run_defaults(root.path()) {
        Ok(r) => r,
        Err(e) => {
            for n in 5..=10 {
                println!("criterion {n}: FAIL default runs did not complete: {e}");
            }
            return ExitCode::FAILURE;
        }
    };
    ok &= report(5, "parallel method ordering", Some(secs(600)), t_par, || criterion_5(&runs));
    ok &= report(6, "non-parallel ordering", Some(secs(600)), t_non, || criterion_6(&runs));
    ok &= report(7, "domain-shift sanity", Some(secs(120)), none, || criterion_7(&runs));
    ok &= report(8, "intra-class discrepancy", Some(secs(120)), none, || criterion_8(&runs));
    ok &= report(9, "determinism", None, none, || criterion_9(root.path(), &runs));
    ok &= report(10, "degenerate-config reductions", None, none, || criterion_10(&runs));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
