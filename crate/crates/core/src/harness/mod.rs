//! Experiment configuration, scheduling and result collection.

mod results;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::CellVariant;
use crate::datagen::{DistributionSpec, Operation, TaskKind, TaskSpec, DIV_MIN_DIVISOR, MAX_RESAMPLE_ATTEMPTS};
use crate::error::{config, Error, Result};
use crate::trainer::{self, gradient_check, GradCheckReport, InitSpec, ModelSpec, TrainConfig, SMOOTHING_STEPS};

pub use results::{
    aggregate_init_grid, fmt_sci, meta_path, round6, write_init_grid, write_results, InitGridCell, ResultRecord,
    RunStatus, HEADER, INIT_SUCCESS_THRESHOLD, SUCCESS_THRESHOLD,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Gradcheck,
}

impl ExperimentId {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Exp4 => "exp4",
            ExperimentId::Gradcheck => "gradcheck",
        }
    }

    fn task_kind(self) -> TaskKind {
        match self {
            ExperimentId::Exp1 | ExperimentId::Gradcheck => TaskKind::Minimal,
            ExperimentId::Exp2 => TaskKind::Simple,
            ExperimentId::Exp3 | ExperimentId::Exp4 => TaskKind::Function,
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ExperimentId::Exp1, ExperimentId::Exp2, ExperimentId::Exp3, ExperimentId::Exp4, ExperimentId::Gradcheck]
            .into_iter()
            .find(|e| e.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// A training distribution and the extrapolation distributions evaluated after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistPair {
    pub train: DistributionSpec,
    pub extrap: Vec<DistributionSpec>,
}

impl DistPair {
    pub fn new(train: DistributionSpec, extrap: Vec<DistributionSpec>) -> Self {
        Self { train, extrap }
    }

    pub fn extrap_label(&self) -> String {
        self.extrap.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("+")
    }
}

fn u(low: f64, high: f64) -> DistributionSpec {
    DistributionSpec::Uniform { low, high }
}

fn n(mean: f64, std: f64) -> DistributionSpec {
    DistributionSpec::TruncatedNormal { mean, std }
}

fn e(rate: f64) -> DistributionSpec {
    DistributionSpec::Exponential { rate }
}

/// Approximation of the distribution grid of the first two experiments.
pub fn default_grid() -> Vec<DistPair> {
    vec![
        DistPair::new(u(-3.0, 3.0), vec![u(-5.0, 5.0)]),
        DistPair::new(u(0.0, 3.0), vec![u(3.0, 5.0)]),
        DistPair::new(n(0.0, 1.0), vec![n(3.0, 1.0)]),
        DistPair::new(n(-4.0, 2.0), vec![n(4.0, 2.0)]),
        DistPair::new(e(0.2), vec![e(0.1)]),
        DistPair::new(e(0.8), vec![e(0.4)]),
    ]
}

/// Extrapolation sets for the function task: the intervals `[3, 4]` and
/// `[−5, −3]`, as uniforms or as normals truncated to them.
pub fn function_grid() -> Vec<DistPair> {
    vec![
        DistPair::new(u(-3.0, 3.0), vec![u(3.0, 4.0), u(-5.0, -3.0)]),
        DistPair::new(n(0.0, 1.0), vec![n(3.5, 1.0 / 6.0), n(-4.0, 1.0 / 3.0)]),
    ]
}

/// Every mean triple from `means³` combined with each σ, applied to all groups.
pub fn init_grid(means: &[f64], sigmas: &[f64]) -> Vec<InitSpec> {
    let mut out = Vec::new();
    for &g in means {
        for &m in means {
            for &w in means {
                for &s in sigmas {
                    out.push(InitSpec::with_means(g, m, w, s));
                }
            }
        }
    }
    out
}

pub fn seeds_from(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base + i).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub variants: Vec<CellVariant>,
    pub operations: Vec<Operation>,
    pub grid: Vec<DistPair>,
    pub seeds: Vec<u64>,
    pub sample_count: Option<usize>,
    pub train: TrainConfig,
    /// Initializations to sweep; empty means `train.init` only.
    pub init_grid: Vec<InitSpec>,
    /// Width of the hidden layer of the function task.
    pub hidden_width: usize,
    pub record_timing: bool,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub progress: bool,
}

impl ExperimentConfig {
    /// Defaults for `id`: full variant and operation lists, the id's grid and
    /// 10 seeds (20 for the initialization sweep) starting at 0.
    pub fn new(id: ExperimentId) -> Self {
        let (variants, grid, seeds, init_grid) = match id {
            ExperimentId::Exp3 => (
                vec![CellVariant::InaluSharedWeights],
                function_grid().into_iter().filter(|p| matches!(p.train, DistributionSpec::TruncatedNormal { .. })).collect(),
                seeds_from(0, 20),
                init_grid(&[-1.0, 0.0, 1.0], &[0.1, 0.5]),
            ),
            ExperimentId::Exp4 => (CellVariant::ALL.to_vec(), function_grid(), seeds_from(0, 10), Vec::new()),
            _ => (CellVariant::ALL.to_vec(), default_grid(), seeds_from(0, 10), Vec::new()),
        };
        Self {
            experiment: id,
            variants,
            operations: Operation::ALL.to_vec(),
            grid,
            seeds,
            sample_count: None,
            train: TrainConfig::default(),
            init_grid,
            hidden_width: 2,
            record_timing: false,
            workers: 1,
            progress: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return config("no model variants configured");
        }
        if self.seeds.is_empty() {
            return config("no seeds configured");
        }
        if self.experiment != ExperimentId::Gradcheck {
            if self.operations.is_empty() {
                return config("no operations configured");
            }
            if self.grid.is_empty() || self.grid.iter().any(|p| p.extrap.is_empty()) {
                return config("every grid entry needs a training and at least one extrapolation distribution");
            }
            for p in &self.grid {
                p.train.validate()?;
                p.extrap.iter().try_for_each(|d| d.validate())?;
            }
        }
        if self.sample_count == Some(0) {
            return config("sample count must be positive");
        }
        if self.hidden_width == 0 {
            return config("hidden width must be positive");
        }
        if self.workers == 0 {
            return config("need at least one worker");
        }
        self.init_grid.iter().try_for_each(|i| i.validate())?;
        self.train.validate()
    }

    fn inits(&self) -> Vec<InitSpec> {
        if self.init_grid.is_empty() {
            vec![self.train.init]
        } else {
            self.init_grid.clone()
        }
    }

    fn model(&self, variant: CellVariant) -> ModelSpec {
        let input = self.experiment.task_kind().input_dim();
        let widths = match self.experiment.task_kind() {
            TaskKind::Function => vec![input, self.hidden_width, 1],
            _ => vec![input, 1],
        };
        ModelSpec { variant, widths }
    }
}

/// One scheduled run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub variant: CellVariant,
    pub operation: Operation,
    pub pair: DistPair,
    pub init: InitSpec,
    pub seed: u64,
}

/// Runs in record order: variant, operation, distribution, init, seed.
pub fn plan(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let inits = cfg.inits();
    let mut out = Vec::new();
    for &variant in &cfg.variants {
        for &operation in &cfg.operations {
            for pair in &cfg.grid {
                for &init in &inits {
                    for &seed in &cfg.seeds {
                        out.push(RunSpec { variant, operation, pair: pair.clone(), init, seed });
                    }
                }
            }
        }
    }
    out
}

/// Trains one run; failures become a record with status `failed`.
pub fn run_one(cfg: &ExperimentConfig, spec: &RunSpec) -> ResultRecord {
    let started = Instant::now();
    let base = ResultRecord {
        experiment: cfg.experiment,
        variant: spec.variant,
        operation: spec.operation,
        train_dist: spec.pair.train.to_string(),
        extrap_dist: spec.pair.extrap_label(),
        init: spec.init,
        seed: spec.seed,
        interp_mse: f64::NAN,
        extrap_mse: f64::NAN,
        success: false,
        reinit_count: 0,
        epochs_run: 0,
        wall_time_seconds: None,
        status: RunStatus::Failed,
        extrap_parts: Vec::new(),
        detail: String::new(),
    };
    let mut task = TaskSpec::new(
        spec.operation,
        cfg.experiment.task_kind(),
        spec.seed,
        spec.pair.train,
        spec.pair.extrap.clone(),
    );
    if let Some(n) = cfg.sample_count {
        task = task.with_sample_count(n);
    }
    let train_cfg = TrainConfig { init: spec.init, ..cfg.train.clone() };
    let prefix = format!(
        "progress exp={} variant={} op={} train={} init={} seed={}",
        cfg.experiment, spec.variant, spec.operation, spec.pair.train, spec.init, spec.seed
    );
    let mut observer = |p: &trainer::Progress| {
        if cfg.progress {
            println!("{prefix} {}", p.line());
        }
    };
    let outcome = trainer::train_with_observer(&cfg.model(spec.variant), &task, &train_cfg, spec.seed, &mut observer);
    let elapsed = cfg.record_timing.then(|| started.elapsed().as_secs_f64());
    match outcome {
        Ok(o) => {
            let r = o.report;
            ResultRecord {
                reinit_count: r.reinit_count,
                epochs_run: r.epochs_run,
                wall_time_seconds: elapsed,
                status: RunStatus::Completed,
                detail: if r.skipped_steps > 0 { format!("skipped_steps={}", r.skipped_steps) } else { String::new() },
                ..base
            }
            .with_mse(r.interp_mse, r.extrap_mse, r.extrap_parts)
        }
        Err(e) => ResultRecord { wall_time_seconds: elapsed, detail: e.to_string(), ..base },
    }
}

/// Runs every planned run on `cfg.workers` threads. Records come back in plan
/// order whatever order the runs finish in.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    if cfg.experiment == ExperimentId::Gradcheck {
        return config("gradient checks are run with run_gradcheck");
    }
    let runs = plan(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| runs.par_iter().map(|r| run_one(cfg, r)).collect()))
}

fn expect(cfg: &ExperimentConfig, id: ExperimentId) -> Result<()> {
    if cfg.experiment != id {
        return config(format!("expected a {id} config, got {}", cfg.experiment));
    }
    Ok(())
}

pub fn run_exp1(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    expect(cfg, ExperimentId::Exp1)?;
    run_experiment(cfg)
}

pub fn run_exp2(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    expect(cfg, ExperimentId::Exp2)?;
    run_experiment(cfg)
}

/// Initialization sweep; returns the raw records and the per-(means, operation) table.
pub fn run_exp3(cfg: &ExperimentConfig) -> Result<(Vec<ResultRecord>, Vec<InitGridCell>)> {
    expect(cfg, ExperimentId::Exp3)?;
    if cfg.init_grid.is_empty() {
        return config("the initialization sweep needs a non-empty init grid");
    }
    let records = run_experiment(cfg)?;
    let cells = aggregate_init_grid(&records);
    Ok((records, cells))
}

pub fn run_exp4(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    expect(cfg, ExperimentId::Exp4)?;
    run_experiment(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckRecord {
    pub variant: CellVariant,
    pub seed: u64,
    pub dims: (usize, usize),
    pub report: GradCheckReport,
}

/// Gradient check of every configured variant on `(3, 2)` and `(2, 1)` layers.
pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<GradCheckRecord>> {
    expect(cfg, ExperimentId::Gradcheck)?;
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &variant in &cfg.variants {
        for dims in [(2, 1), (3, 2)] {
            for &seed in &cfg.seeds {
                jobs.push((variant, dims, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(variant, dims, seed)| {
                Ok(GradCheckRecord { variant, seed, dims, report: gradient_check(variant, dims, seed)? })
            })
            .collect()
    })
}

pub fn write_gradcheck(records: &[GradCheckRecord], path: &std::path::Path) -> Result<()> {
    use std::fmt::Write as _;
    if records.is_empty() {
        return config("refusing to write an empty gradient-check table");
    }
    let mut out = String::from("variant,in,out,seed,max_rel_error,checked,boundary\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.variant,
            r.dims.0,
            r.dims.1,
            r.seed,
            fmt_sci(r.report.max_rel_error),
            r.report.checked,
            r.report.boundary.len()
        )
        .expect("writing to a string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Constants fixed in code that shape the results.
#[derive(Clone, Debug, Serialize)]
pub struct DesignConstants {
    pub success_threshold: f64,
    pub init_success_threshold: f64,
    pub div_min_divisor: f64,
    pub div_max_resample_attempts: usize,
    pub reinit_smoothing_steps: usize,
    pub grad_clip_norm: f64,
    pub reinit_loss_threshold: f64,
    pub reinit_stale_steps: usize,
    pub reinit_check_every_epochs: usize,
    pub reg_threshold: f64,
    pub reg_activation_epoch: usize,
    pub reg_activation_loss: f64,
    pub epsilon: f64,
    pub omega: f64,
    pub hidden_width: usize,
}

/// Sidecar written next to every results table.
#[derive(Clone, Debug, Serialize)]
pub struct Metadata<'a> {
    pub library: &'static str,
    pub version: &'static str,
    pub config: &'a ExperimentConfig,
    pub constants: DesignConstants,
    pub notes: Vec<&'static str>,
}

impl<'a> Metadata<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        let t = &cfg.train;
        Self {
            library: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            constants: DesignConstants {
                success_threshold: SUCCESS_THRESHOLD,
                init_success_threshold: INIT_SUCCESS_THRESHOLD,
                div_min_divisor: DIV_MIN_DIVISOR,
                div_max_resample_attempts: MAX_RESAMPLE_ATTEMPTS,
                reinit_smoothing_steps: SMOOTHING_STEPS,
                grad_clip_norm: t.grad_clip_norm,
                reinit_loss_threshold: t.reinit_loss_threshold,
                reinit_stale_steps: t.reinit_stale_steps,
                reinit_check_every_epochs: t.reinit_check_every_epochs,
                reg_threshold: t.reg.threshold,
                reg_activation_epoch: t.reg.activation_epoch,
                reg_activation_loss: t.reg.activation_loss,
                epsilon: t.hyper.epsilon,
                omega: t.hyper.omega,
                hidden_width: cfg.hidden_width,
            },
            notes: vec![
                "gradient clipping, regularization and reinitialization are applied to every variant, the NALU baseline included",
                "the default distribution grid is an approximation chosen for coverage of each family",
                "the reinitialization stale window is capped at the steps between two checks",
                "the stall check compares the best loss inside the window with the best loss before it",
                "an interpolation set is drawn separately from the training set, from the same distribution",
                "wall_time_seconds is NA unless timing was requested, so reruns are byte-identical",
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: ExperimentId) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(id);
        cfg.variants = vec![CellVariant::InaluIndependentWeights];
        cfg.operations = vec![Operation::Add];
        cfg.grid.truncate(1);
        cfg.seeds = seeds_from(3, 2);
        cfg.sample_count = Some(128);
        cfg.train.epochs = 2;
        cfg
    }

    #[test]
    fn zero_seeds_is_config_error() {
        let mut cfg = small(ExperimentId::Exp1);
        cfg.seeds.clear();
        assert!(matches!(run_exp1(&cfg), Err(Error::Config(_))));
        let mut cfg = small(ExperimentId::Exp1);
        cfg.variants.clear();
        assert!(run_exp1(&cfg).is_err());
    }

    #[test]
    fn wrong_experiment_is_rejected() {
        assert!(run_exp2(&small(ExperimentId::Exp1)).is_err());
    }

    #[test]
    fn plan_order_and_count() {
        let mut cfg = ExperimentConfig::new(ExperimentId::Exp1);
        cfg.seeds = seeds_from(0, 3);
        let p = plan(&cfg);
        assert_eq!(p.len(), 4 * 4 * 6 * 3);
        assert_eq!(p[0].variant, CellVariant::NaluVectorGate);
        assert_eq!((p[1].seed, p[3].seed), (1, 0));
        let exp3 = ExperimentConfig::new(ExperimentId::Exp3);
        assert_eq!(exp3.init_grid.len(), 54);
        assert_eq!(plan(&exp3).len(), 54 * 4 * 20);
    }

    #[test]
    fn every_run_yields_one_record_in_plan_order() {
        let mut cfg = small(ExperimentId::Exp1);
        cfg.operations = vec![Operation::Add, Operation::Div];
        cfg.workers = 3;
        let recs = run_exp1(&cfg).unwrap();
        let planned = plan(&cfg);
        assert_eq!(recs.len(), planned.len());
        for (r, p) in recs.iter().zip(&planned) {
            assert_eq!((r.operation, r.seed), (p.operation, p.seed));
            assert_eq!(r.success, r.extrap_mse <= SUCCESS_THRESHOLD);
        }
        cfg.workers = 1;
        assert_eq!(run_exp1(&cfg).unwrap(), recs);
    }

    #[test]
    fn function_task_uses_two_layers() {
        let cfg = small(ExperimentId::Exp4);
        assert_eq!(cfg.model(CellVariant::NaluMatrixGate).widths, vec![100, 2, 1]);
        let recs = run_exp4(&cfg).unwrap();
        assert_eq!(recs[0].extrap_parts.len(), 2);
        assert_eq!(recs[0].extrap_dist, "U(3,4)+U(-5,-3)");
    }

    #[test]
    fn failed_run_is_recorded() {
        let mut cfg = small(ExperimentId::Exp1);
        // Products of these inputs overflow, so the first loss is not finite.
        cfg.grid = vec![DistPair::new(u(1e200, 1e201), vec![u(1e200, 1e201)])];
        cfg.operations = vec![Operation::Mul];
        let recs = run_exp1(&cfg).unwrap();
        assert!(recs.iter().all(|r| r.status == RunStatus::Failed && !r.success && !r.detail.is_empty()));
    }

    #[test]
    fn gradcheck_runs() {
        let mut cfg = ExperimentConfig::new(ExperimentId::Gradcheck);
        cfg.seeds = vec![0];
        let recs = run_gradcheck(&cfg).unwrap();
        assert_eq!(recs.len(), 8);
        assert!(recs.iter().all(|r| r.report.max_rel_error < 1e-4), "{recs:?}");
    }
}
