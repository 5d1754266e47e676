use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use inalu::harness::{
    self, run_exp1, run_exp2, run_exp3, run_exp4, run_gradcheck, seeds_from, write_gradcheck, write_init_grid,
    write_results, DistPair, ExperimentConfig, ExperimentId, Metadata, RunStatus,
};
use inalu::{CellVariant, InitSpec, Operation};

#[derive(Parser)]
#[command(name = "inalu", version, about = "Train NALU/iNALU cells on synthetic arithmetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two inputs, one output, one layer.
    Exp1(RunArgs),
    /// Ten inputs with two relevant ones, one layer.
    Exp2(RunArgs),
    /// Initialization sweep on the 100-input function task.
    Exp3(RunArgs),
    /// 100-input function task with two stacked layers.
    Exp4(RunArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// Number of seeds, counted up from --base-seed.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Samples per dataset (default 64000).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated variant tags, e.g. `inalu_iw,nalu_m`.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Comma-separated operations: ADD, SUB, MUL, DIV.
    #[arg(long, value_delimiter = ',')]
    operations: Option<Vec<String>>,
    /// Results table path.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Regularization on or off (ablation).
    #[arg(long, value_enum, default_value = "on")]
    reg: Toggle,
    /// JSON file with a list of `{"train": "U(-3,3)", "extrap": ["U(-5,5)"]}` entries.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Init mean triples `g,m,w` separated by `;` (exp3 sweep, or a single one elsewhere).
    #[arg(long)]
    init_means: Option<String>,
    /// Init standard deviations, comma-separated.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// Hidden width of the function task.
    #[arg(long)]
    hidden: Option<usize>,
    /// Print one progress line per epoch and run.
    #[arg(long)]
    progress: bool,
    /// Fill wall_time_seconds (makes the table differ between reruns).
    #[arg(long)]
    record_timing: bool,
}

fn parse_means(s: &str) -> Result<Vec<(f64, f64, f64)>> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let v = t
                .split(',')
                .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad init mean `{x}`")))
                .collect::<Result<Vec<_>>>()?;
            match v[..] {
                [g, m, w] => Ok((g, m, w)),
                _ => bail!("init means need three values `g,m,w`, got `{t}`"),
            }
        })
        .collect()
}

fn build_config(id: ExperimentId, a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(id);
    let count = a.seeds.unwrap_or(cfg.seeds.len());
    cfg.seeds = seeds_from(a.base_seed, count);
    cfg.sample_count = a.samples;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(v) = &a.variants {
        cfg.variants = v.iter().map(|s| s.parse::<CellVariant>()).collect::<Result<_, _>>()?;
    }
    if let Some(o) = &a.operations {
        cfg.operations = o.iter().map(|s| s.parse::<Operation>()).collect::<Result<_, _>>()?;
    }
    if let Some(path) = &a.grid {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.grid = serde_json::from_str::<Vec<DistPair>>(&text).with_context(|| format!("parsing {}", path.display()))?;
    }
    cfg.train.regularize = matches!(a.reg, Toggle::On);
    if let Some(h) = a.hidden {
        cfg.hidden_width = h;
    }
    let sigmas = a.sigmas.clone();
    match (&a.init_means, id) {
        (Some(m), ExperimentId::Exp3) => {
            let sig = sigmas.unwrap_or_else(|| vec![0.1, 0.5]);
            cfg.init_grid = parse_means(m)?
                .into_iter()
                .flat_map(|(g, mm, w)| sig.iter().map(move |&s| InitSpec::with_means(g, mm, w, s)))
                .collect();
        }
        (None, ExperimentId::Exp3) => {
            if let Some(sig) = sigmas {
                cfg.init_grid = harness::init_grid(&[-1.0, 0.0, 1.0], &sig);
            }
        }
        (Some(m), _) => {
            let means = parse_means(m)?;
            let [(g, mm, w)] = means[..] else { bail!("outside exp3 give exactly one init mean triple") };
            cfg.train.init = InitSpec::with_means(g, mm, w, sigmas.as_ref().and_then(|s| s.first().copied()).unwrap_or(0.5));
        }
        (None, _) => {
            if let Some(s) = sigmas.as_ref().and_then(|s| s.first().copied()) {
                let i = cfg.train.init;
                cfg.train.init = InitSpec::with_means(i.gate.mean, i.m_hat.mean, i.w_hat.mean, s);
            }
        }
    }
    cfg.workers = a.workers;
    cfg.progress = a.progress;
    cfg.record_timing = a.record_timing;
    cfg.validate()?;
    Ok(cfg)
}

fn with_suffix(path: &std::path::Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn run(cli: Cli) -> Result<bool> {
    let (id, args) = match &cli.command {
        Command::Exp1(a) => (ExperimentId::Exp1, a),
        Command::Exp2(a) => (ExperimentId::Exp2, a),
        Command::Exp3(a) => (ExperimentId::Exp3, a),
        Command::Exp4(a) => (ExperimentId::Exp4, a),
        Command::Gradcheck(a) => (ExperimentId::Gradcheck, a),
    };
    let cfg = build_config(id, args)?;

    if id == ExperimentId::Gradcheck {
        let recs = run_gradcheck(&cfg)?;
        let worst = recs.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
        write_gradcheck(&recs, &args.out)?;
        println!("{} checks, worst relative error {worst:.3e}, written to {}", recs.len(), args.out.display());
        return Ok(true);
    }

    let records = match id {
        ExperimentId::Exp1 => run_exp1(&cfg)?,
        ExperimentId::Exp2 => run_exp2(&cfg)?,
        ExperimentId::Exp3 => {
            let (records, cells) = run_exp3(&cfg)?;
            let table = with_suffix(&args.out, "init");
            write_init_grid(&cells, &table)?;
            for c in &cells {
                println!(
                    "init ({}, {}, {}) {} max_extrap_mse={} stable={}",
                    c.means.0,
                    c.means.1,
                    c.means.2,
                    c.operation,
                    harness::fmt_sci(c.max_extrap_mse),
                    c.stable
                );
            }
            records
        }
        _ => run_exp4(&cfg)?,
    };
    write_results(&records, &args.out, &Metadata::new(&cfg))?;

    let failed: Vec<_> = records.iter().filter(|r| r.status == RunStatus::Failed).collect();
    let solved = records.iter().filter(|r| r.success).count();
    println!(
        "{} runs, {} solved, {} failed, written to {}",
        records.len(),
        solved,
        failed.len(),
        args.out.display()
    );
    for r in &failed {
        eprintln!("failed: {} {} {} seed {}: {}", r.variant, r.operation, r.train_dist, r.seed, r.detail);
    }
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
