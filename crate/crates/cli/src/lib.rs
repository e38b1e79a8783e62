//! Experiment runner behind the `vbkt` binary.
//!
//! A run directory is keyed by a hash of the experiment configuration
//! (seeds and output directory excluded, so adding seeds resumes the same
//! directory):
//!
//! ```text
//! <out>/<config-hash>/
//!     config.json
//!     source/{checkpoint.json, report.json}
//!     prior.json            (when an EB method is configured)
//!     sigma.json            (when sigma is estimated)
//!     <method>/<seed>/{checkpoint.json, report.json, timing.json}
//!     results.csv
//! ```
//!
//! Every file except `timing.json` is a pure function of the configuration.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vbkt::data::{Benchmark, BenchmarkSpec, DomainDataset};
use vbkt::losses::SharedVariance;
use vbkt::metrics::{accuracy, export_embeddings, intra_class_discrepancy};
use vbkt::prior::{fit_class_priors, ClassPrior, DEFAULT_VARIANCE_FLOOR};
use vbkt::trainer::{
    estimate_sigma, initial_model, train, Method, SigmaMode, TrainConfig, TrainInputs,
    TrainReport,
};
use vbkt::{LatentSplitModel, ModelConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Runtime(_) => 2,
        }
    }
}

impl From<vbkt::Error> for RunError {
    fn from(e: vbkt::Error) -> Self {
        match e {
            vbkt::Error::InvalidConfig(m) => RunError::Config(m),
            other => RunError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

/// Training of the source model from scratch on the source split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SourceTraining {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// How the GMF variance is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaSpec {
    /// Replace every method's `gmf.sigma2` with an estimate from augmented
    /// target copies passed through the source model.
    pub estimate: bool,
    pub n_aug: usize,
    pub strength: f64,
    pub mode: SigmaMode,
    pub seed: u64,
}

impl Default for SigmaSpec {
    fn default() -> Self {
        Self {
            estimate: true,
            n_aug: 16,
            strength: 1.0,
            mode: SigmaMode::Scalar,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSpec {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            n_samples: vbkt::metrics::DEFAULT_DISCREPANCY_SAMPLES,
            seed: 0,
        }
    }
}

/// A named training configuration; the name is the results-table key and
/// the directory name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl MethodSpec {
    pub fn new(name: &str, train: TrainConfig) -> Self {
        Self {
            name: name.to_string(),
            train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSpec,
    pub model: ModelConfig,
    pub source_training: SourceTraining,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub sigma: SigmaSpec,
    pub variance_floor: f64,
    pub analysis: AnalysisSpec,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::parallel_default()
    }
}

fn train_cfg(method: Method, relational: bool) -> TrainConfig {
    TrainConfig {
        use_relational: relational,
        ..TrainConfig::for_method(method)
    }
}

impl ExperimentConfig {
    /// Device-shift benchmark with the parallel-data method grid.
    pub fn parallel_default() -> Self {
        Self {
            benchmark: BenchmarkSpec::parallel_default(),
            model: ModelConfig::default(),
            source_training: SourceTraining::default(),
            methods: vec![
                MethodSpec::new("no_transfer", train_cfg(Method::NoTransfer, false)),
                MethodSpec::new("one_hot", train_cfg(Method::OneHot, false)),
                MethodSpec::new("tsl", train_cfg(Method::Tsl, false)),
                MethodSpec::new("vbkt_gmf", train_cfg(Method::VbktGmf, false)),
                MethodSpec::new("vbkt_gmf_rela", train_cfg(Method::VbktGmf, true)),
            ],
            seeds: vec![0, 1, 2, 3, 4],
            sigma: SigmaSpec::default(),
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            analysis: AnalysisSpec::default(),
            output_dir: PathBuf::from("runs"),
        }
    }

    /// Noise-shift benchmark without pairs.
    pub fn non_parallel_default() -> Self {
        Self {
            benchmark: BenchmarkSpec::non_parallel_default(),
            methods: vec![
                MethodSpec::new("no_transfer", train_cfg(Method::NoTransfer, false)),
                MethodSpec::new("one_hot", train_cfg(Method::OneHot, false)),
                MethodSpec::new("tsl", train_cfg(Method::Tsl, false)),
                MethodSpec::new("vbkt_eb", train_cfg(Method::VbktEb, false)),
                MethodSpec::new("vbkt_eb_rela", train_cfg(Method::VbktEb, true)),
            ],
            ..Self::parallel_default()
        }
    }

    pub fn from_json(text: &str) -> RunResult<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> RunResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> RunResult<()> {
        let cfg_err = |e: vbkt::Error| RunError::Config(e.to_string());
        if self.seeds.is_empty() {
            return Err(RunError::Config("seeds must be non-empty".into()));
        }
        if self.methods.is_empty() {
            return Err(RunError::Config("methods must be non-empty".into()));
        }
        self.benchmark.validate().map_err(cfg_err)?;
        self.model.validate().map_err(cfg_err)?;
        if self.model.input_dim != self.benchmark.task.input_dim
            || self.model.num_classes != self.benchmark.task.num_classes
        {
            return Err(RunError::Config(
                "model input_dim/num_classes must match the benchmark task".into(),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.methods {
            let valid_name = !m.name.is_empty()
                && m.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !valid_name || !names.insert(&m.name) {
                return Err(RunError::Config(format!(
                    "method name `{}` is empty, invalid or repeated",
                    m.name
                )));
            }
            m.train.validate().map_err(cfg_err)?;
            if m.train.method == Method::VbktGmf && !self.benchmark.parallel {
                return Err(RunError::Config(format!(
                    "{} needs parallel data but the benchmark is non-parallel",
                    m.name
                )));
            }
        }
        if self.sigma.estimate && self.sigma.n_aug < 2 {
            return Err(RunError::Config("sigma.n_aug must be >= 2".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(RunError::Config("variance_floor must be positive".into()));
        }
        if self.source_training.batch_size == 0 || !(self.source_training.learning_rate > 0.0) {
            return Err(RunError::Config("invalid source_training".into()));
        }
        Ok(())
    }

    /// Hex digest of the configuration without `seeds` and `output_dir`.
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.seeds.clear();
        keyed.output_dir = PathBuf::new();
        let text = serde_json::to_string(&keyed).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
    }

    fn needs_prior(&self) -> bool {
        self.methods.iter().any(|m| m.train.method == Method::VbktEb)
    }

    fn needs_sigma(&self) -> bool {
        self.sigma.estimate && self.methods.iter().any(|m| m.train.method == Method::VbktGmf)
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> RunResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> RunResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn dataset_bytes(d: &DomainDataset) -> RunResult<Vec<u8>> {
    let mut buf = Vec::new();
    d.write_to(&mut buf)?;
    Ok(buf)
}

/// Writes source, target-train and target-test files into `out`; returns
/// their paths.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> RunResult<Vec<PathBuf>> {
    let bench = cfg.benchmark.generate()?;
    // Serialize everything before touching the filesystem.
    let files = [
        ("source.csv", dataset_bytes(&bench.source)?),
        ("target-train.csv", dataset_bytes(&bench.target_train)?),
        ("target-test.csv", dataset_bytes(&bench.target_test)?),
    ];
    files
        .iter()
        .map(|(name, bytes)| {
            let path = out.join(name);
            write_atomic(&path, bytes)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub source_test_accuracy: f64,
    pub target_test_accuracy: f64,
    /// Accuracy drop in percentage points.
    pub drop_points: f64,
}

/// Everything shared by the cells of one run directory.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub bench: Benchmark,
    pub source_model: LatentSplitModel,
    pub source_report: SourceReport,
    pub prior: Option<ClassPrior>,
    pub sigma2: Option<SharedVariance>,
}

/// Trains the source model on the source split.
pub fn train_source_model(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
) -> RunResult<LatentSplitModel> {
    let st = &cfg.source_training;
    let init = LatentSplitModel::new_random(cfg.model.clone(), st.seed)?;
    let tc = TrainConfig {
        method: Method::NoTransfer,
        epochs: st.epochs,
        batch_size: st.batch_size,
        learning_rate: st.learning_rate,
        seed: st.seed,
        ..TrainConfig::default()
    };
    let (model, _) = train(init, TrainInputs::new(&bench.source), tc)?;
    Ok(model)
}

fn load_or<T>(
    path: &Path,
    load: impl Fn(&Path) -> vbkt::Result<T>,
    build: impl FnOnce() -> RunResult<T>,
    save: impl Fn(&T, &Path) -> RunResult<()>,
) -> RunResult<T> {
    if path.exists() {
        return Ok(load(path)?);
    }
    let value = build()?;
    save(&value, path)?;
    Ok(value)
}

/// Generates data and the shared source-side artifacts, reusing cached
/// ones found under `out/<hash>`.
pub fn prepare(cfg: &ExperimentConfig, out: &Path) -> RunResult<Prepared> {
    cfg.validate()?;
    let dir = out.join(cfg.hash());
    fs::create_dir_all(&dir)?;
    let mut stored = cfg.clone();
    stored.seeds.clear();
    stored.output_dir = PathBuf::new();
    write_json(&dir.join("config.json"), &stored)?;

    let bench = cfg.benchmark.generate()?;
    let source_model = load_or(
        &dir.join("source").join("checkpoint.json"),
        LatentSplitModel::load,
        || train_source_model(cfg, &bench),
        |m, p| write_atomic(p, m.to_checkpoint().to_string_pretty()?.as_bytes()),
    )?;
    let src = accuracy(&source_model, &bench.source_test)?;
    let tgt = accuracy(&source_model, &bench.target_test)?;
    let source_report = SourceReport {
        source_test_accuracy: src,
        target_test_accuracy: tgt,
        drop_points: 100.0 * (src - tgt),
    };
    write_json(&dir.join("source").join("report.json"), &source_report)?;

    let prior = if cfg.needs_prior() {
        Some(load_or(
            &dir.join("prior.json"),
            ClassPrior::load,
            || Ok(fit_class_priors(&source_model, &bench.source, cfg.variance_floor)?),
            |p, path| write_atomic(path, p.to_checkpoint().to_string_pretty()?.as_bytes()),
        )?)
    } else {
        None
    };
    let sigma2 = if cfg.needs_sigma() {
        Some(cmd_estimate_sigma_with(cfg, &source_model, &bench, &dir.join("sigma.json"))?)
    } else {
        None
    };
    Ok(Prepared {
        config: cfg.clone(),
        dir,
        bench,
        source_model,
        source_report,
        prior,
        sigma2,
    })
}

fn cmd_estimate_sigma_with(
    cfg: &ExperimentConfig,
    source_model: &LatentSplitModel,
    bench: &Benchmark,
    path: &Path,
) -> RunResult<SharedVariance> {
    let s = &cfg.sigma;
    let sigma2 = estimate_sigma(
        source_model,
        &bench.target_train,
        s.n_aug,
        s.strength,
        s.seed,
        s.mode,
        cfg.variance_floor,
    )?;
    write_json(path, &serde_json::json!({ "sigma2": sigma2 }))?;
    Ok(sigma2)
}

/// Fits the class prior and writes it to `path`.
pub fn cmd_fit_prior(cfg: &ExperimentConfig, out: &Path, path: &Path) -> RunResult<ClassPrior> {
    cfg.validate()?;
    let bench = cfg.benchmark.generate()?;
    let source_model = source_model_cached(cfg, &bench, out)?;
    let prior = fit_class_priors(&source_model, &bench.source, cfg.variance_floor)?;
    write_atomic(path, prior.to_checkpoint().to_string_pretty()?.as_bytes())?;
    Ok(prior)
}

/// Estimates sigma^2 from augmented target copies and writes it to `path`.
pub fn cmd_estimate_sigma(
    cfg: &ExperimentConfig,
    out: &Path,
    path: &Path,
) -> RunResult<SharedVariance> {
    cfg.validate()?;
    if cfg.sigma.n_aug < 2 {
        return Err(RunError::Config("sigma.n_aug must be >= 2".into()));
    }
    let bench = cfg.benchmark.generate()?;
    let source_model = source_model_cached(cfg, &bench, out)?;
    cmd_estimate_sigma_with(cfg, &source_model, &bench, path)
}

fn source_model_cached(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    out: &Path,
) -> RunResult<LatentSplitModel> {
    load_or(
        &out.join(cfg.hash()).join("source").join("checkpoint.json"),
        LatentSplitModel::load,
        || train_source_model(cfg, bench),
        |m, p| write_atomic(p, m.to_checkpoint().to_string_pretty()?.as_bytes()),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: String,
    pub seed: u64,
    /// Target test accuracy, or the failure message.
    pub outcome: Result<f64, String>,
    pub skipped: bool,
}

impl Prepared {
    pub fn cell_dir(&self, method: &str, seed: u64) -> PathBuf {
        self.dir.join(method).join(seed.to_string())
    }

    /// Adapts a copy of the source model with one method and seed, without
    /// touching the filesystem.
    pub fn train_cell(
        &self,
        spec: &MethodSpec,
        seed: u64,
    ) -> RunResult<(LatentSplitModel, TrainReport)> {
        let mut tc = spec.train.clone();
        tc.seed = seed;
        if let Some(s) = &self.sigma2 {
            tc.gmf.sigma2 = s.clone();
        }
        let init = initial_model(tc.method, &self.source_model, seed)?;
        let inputs = TrainInputs {
            target: &self.bench.target_train,
            source_model: Some(&self.source_model),
            source: Some(&self.bench.source),
            prior: self.prior.as_ref(),
        };
        let (model, mut report) = train(init, inputs, tc)?;
        report.target_accuracy = Some(accuracy(&model, &self.bench.target_test)?);
        Ok((model, report))
    }

    fn run_cell(&self, spec: &MethodSpec, seed: u64) -> CellResult {
        let dir = self.cell_dir(&spec.name, seed);
        let report_path = dir.join("report.json");
        let done = fs::read_to_string(&report_path)
            .ok()
            .and_then(|t| serde_json::from_str::<TrainReport>(&t).ok())
            .filter(|_| dir.join("checkpoint.json").exists());
        if let Some(r) = done {
            return CellResult {
                method: spec.name.clone(),
                seed,
                outcome: r.target_accuracy.ok_or_else(|| "report lacks accuracy".into()),
                skipped: true,
            };
        }
        let outcome = self
            .train_cell(spec, seed)
            .and_then(|(model, report)| {
                write_atomic(
                    &dir.join("checkpoint.json"),
                    model.to_checkpoint().to_string_pretty()?.as_bytes(),
                )?;
                write_json(
                    &dir.join("timing.json"),
                    &serde_json::json!({ "wall_clock_seconds": report.wall_clock_seconds }),
                )?;
                // The report goes last: its presence marks the cell complete.
                write_json(&report_path, &report)?;
                Ok(report.target_accuracy.unwrap_or(f64::NAN))
            })
            .map_err(|e| e.to_string());
        CellResult {
            method: spec.name.clone(),
            seed,
            outcome,
            skipped: false,
        }
    }

    /// Runs every (method, seed) cell, at most `jobs` at a time, and writes
    /// `results.csv`.
    pub fn run_all(&self, jobs: usize) -> RunResult<Vec<CellResult>> {
        let cells: Vec<(&MethodSpec, u64)> = self
            .config
            .methods
            .iter()
            .flat_map(|m| self.config.seeds.iter().map(move |&s| (m, s)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| RunError::Runtime(e.to_string()))?;
        let results: Vec<CellResult> =
            pool.install(|| cells.par_iter().map(|(m, s)| self.run_cell(m, *s)).collect());
        write_atomic(
            &self.dir.join("results.csv"),
            results_table(&self.config, &results)?.as_bytes(),
        )?;
        Ok(results)
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `method,seed,status,accuracy_pct` rows per cell, then `mean` and `std`
/// rows per method (over successful cells).
pub fn results_table(cfg: &ExperimentConfig, results: &[CellResult]) -> RunResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| RunError::Runtime(e.to_string());
    w.write_record(["method", "seed", "status", "accuracy_pct"])
        .map_err(csv_err)?;
    for m in &cfg.methods {
        let mut accs = Vec::new();
        for r in results.iter().filter(|r| r.method == m.name) {
            let (status, acc) = match &r.outcome {
                Ok(a) => {
                    accs.push(100.0 * a);
                    ("ok".to_string(), format!("{:.4}", 100.0 * a))
                }
                Err(e) => (format!("failed: {e}"), String::new()),
            };
            w.write_record([m.name.clone(), r.seed.to_string(), status, acc])
                .map_err(csv_err)?;
        }
        if !accs.is_empty() {
            let (mean, std) = mean_std(&accs);
            w.write_record([&m.name, "mean", "ok", &format!("{mean:.4}")])
                .map_err(csv_err)?;
            w.write_record([&m.name, "std", "ok", &format!("{std:.4}")])
                .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| RunError::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| RunError::Runtime(e.to_string()))
}

/// Prepares and runs an experiment; returns the run directory and results.
pub fn cmd_run(
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: usize,
) -> RunResult<(PathBuf, Vec<CellResult>)> {
    let prepared = prepare(cfg, out)?;
    let results = prepared.run_all(jobs)?;
    Ok((prepared.dir, results))
}

/// Writes per-class discrepancy matrices, a summary table and embeddings
/// for every trained cell of `run_dir`; returns the files written.
pub fn cmd_analyze(run_dir: &Path, seeds: &[u64]) -> RunResult<Vec<PathBuf>> {
    let cfg_path = run_dir.join("config.json");
    let text = fs::read_to_string(&cfg_path)
        .map_err(|e| RunError::Config(format!("{}: {e}", cfg_path.display())))?;
    // The stored config has its seeds cleared; the caller supplies them.
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| RunError::Config(e.to_string()))?;
    cfg.seeds = if seeds.is_empty() {
        ExperimentConfig::default().seeds
    } else {
        seeds.to_vec()
    };
    cfg.validate()?;
    let bench = cfg.benchmark.generate()?;
    let classes = cfg.benchmark.task.num_classes;
    let mut written = Vec::new();
    let mut summary = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| RunError::Runtime(e.to_string());
    summary
        .write_record(["method", "seed", "class", "mean_off_diagonal"])
        .map_err(csv_err)?;
    for m in &cfg.methods {
        for &seed in &cfg.seeds {
            let cell = run_dir.join(&m.name).join(seed.to_string());
            let ck = cell.join("checkpoint.json");
            if !ck.exists() {
                return Err(RunError::Runtime(format!(
                    "missing checkpoint {}",
                    ck.display()
                )));
            }
            let model = LatentSplitModel::load(&ck)?;
            let out = run_dir.join("analysis").join(&m.name).join(seed.to_string());
            for c in 0..classes {
                let d = intra_class_discrepancy(
                    &model,
                    &bench.target_test,
                    c,
                    cfg.analysis.n_samples,
                    cfg.analysis.seed,
                )?;
                let mut buf = Vec::new();
                d.write_csv(&mut buf)?;
                let path = out.join(format!("discrepancy_class{c}.csv"));
                write_atomic(&path, &buf)?;
                written.push(path);
                summary
                    .write_record([
                        m.name.clone(),
                        seed.to_string(),
                        c.to_string(),
                        d.mean_off_diagonal().to_string(),
                    ])
                    .map_err(csv_err)?;
            }
            let mut buf = Vec::new();
            export_embeddings(
                &model,
                &[&bench.target_train, &bench.target_test],
                &mut buf,
            )?;
            let path = out.join("embeddings.csv");
            write_atomic(&path, &buf)?;
            written.push(path);
        }
    }
    let bytes = summary
        .into_inner()
        .map_err(|e| RunError::Runtime(e.to_string()))?;
    let path = run_dir.join("analysis").join("discrepancy_summary.csv");
    write_atomic(&path, &bytes)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for cfg in [
            ExperimentConfig::parallel_default(),
            ExperimentConfig::non_parallel_default(),
        ] {
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        }
        assert_eq!(
            ExperimentConfig::from_json("{}").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn hash_ignores_seeds() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seeds = vec![9];
        assert_eq!(a.hash(), b.hash());
        b.benchmark.seed = 5;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let e = ExperimentConfig::from_json("{\"seeds\": []}").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = ExperimentConfig::from_json("{not json").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let mut cfg = ExperimentConfig::non_parallel_default();
        cfg.methods.push(MethodSpec::new("g", train_cfg(Method::VbktGmf, false)));
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
