//! Result records, the results table and its metadata sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cells::CellVariant;
use crate::datagen::Operation;
use crate::error::{config, Result};
use crate::trainer::InitSpec;

use super::ExperimentId;

/// Extrapolation MSE at or below which a run counts as solved.
pub const SUCCESS_THRESHOLD: f64 = 1e-4;
/// Max-over-seeds MSE below which an initialization counts as stable.
pub const INIT_SUCCESS_THRESHOLD: f64 = 1e-3;

pub const HEADER: [&str; 16] = [
    "experiment_id",
    "variant",
    "operation",
    "train_dist",
    "extrap_dist",
    "init_spec",
    "seed",
    "interp_mse",
    "extrap_mse",
    "success",
    "reinit_count",
    "epochs_run",
    "wall_time_seconds",
    "status",
    "extrap_parts",
    "detail",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// One training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRecord {
    pub experiment: ExperimentId,
    pub variant: CellVariant,
    pub operation: Operation,
    pub train_dist: String,
    pub extrap_dist: String,
    pub init: InitSpec,
    pub seed: u64,
    pub interp_mse: f64,
    pub extrap_mse: f64,
    pub success: bool,
    pub reinit_count: usize,
    pub epochs_run: usize,
    pub wall_time_seconds: Option<f64>,
    pub status: RunStatus,
    pub extrap_parts: Vec<f64>,
    pub detail: String,
}

/// Rounds to the six significant digits written to the table.
pub fn round6(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    fmt_sci(v).parse().unwrap_or(v)
}

pub fn fmt_sci(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.5e}")
    }
}

impl ResultRecord {
    /// Fills MSE fields rounded to table precision so `success` agrees with
    /// what a reader recomputes from the file.
    pub fn with_mse(mut self, interp: f64, extrap: f64, parts: Vec<f64>) -> Self {
        self.interp_mse = round6(interp);
        self.extrap_mse = round6(extrap);
        self.extrap_parts = parts.into_iter().map(round6).collect();
        self.success = self.extrap_mse <= SUCCESS_THRESHOLD;
        self
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.experiment.tag().to_string(),
            self.variant.to_string(),
            self.operation.to_string(),
            self.train_dist.clone(),
            self.extrap_dist.clone(),
            self.init.to_string(),
            self.seed.to_string(),
            fmt_sci(self.interp_mse),
            fmt_sci(self.extrap_mse),
            self.success.to_string(),
            self.reinit_count.to_string(),
            self.epochs_run.to_string(),
            self.wall_time_seconds.map_or_else(|| "NA".to_string(), |t| format!("{t:.3}")),
            match self.status {
                RunStatus::Completed => "completed".into(),
                RunStatus::Failed => "failed".into(),
            },
            self.extrap_parts.iter().map(|&v| fmt_sci(v)).collect::<Vec<_>>().join(";"),
            self.detail.clone(),
        ]
    }
}

/// Path of the metadata file written next to `path`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes the results table and a `<path>.meta.json` sidecar holding `meta`.
pub fn write_results<M: Serialize>(records: &[ResultRecord], path: &Path, meta: &M) -> Result<()> {
    if records.is_empty() {
        return config("refusing to write an empty result table");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(r.row()).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    fs::write(path, bytes)?;
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    fs::write(meta_path(path), json)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e.to_string()))
}

/// One cell of the initialization table: an init mean triple and an operation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitGridCell {
    /// `(μ_g, μ_M̂, μ_Ŵ)`
    pub means: (f64, f64, f64),
    pub operation: Operation,
    /// Max over every σ setting and seed; failed runs count as infinite.
    pub max_extrap_mse: f64,
    /// Fraction of runs with extrapolation MSE ≤ 1e−4.
    pub success_fraction: f64,
    pub runs: usize,
    /// `max_extrap_mse < 1e−3`
    pub stable: bool,
}

fn mean_key(init: &InitSpec) -> (u64, u64, u64) {
    (init.gate.mean.to_bits(), init.m_hat.mean.to_bits(), init.w_hat.mean.to_bits())
}

/// Groups records by (init means, operation), in first-seen order.
pub fn aggregate_init_grid(records: &[ResultRecord]) -> Vec<InitGridCell> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<((u64, u64, u64), Operation), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        let key = (mean_key(&r.init), r.operation);
        let entry = groups.entry(key).or_default();
        if entry.is_empty() {
            order.push((key, (r.init.gate.mean, r.init.m_hat.mean, r.init.w_hat.mean)));
        }
        entry.push(r);
    }
    order
        .into_iter()
        .map(|(key, means)| {
            let rs = &groups[&key];
            let max = rs
                .iter()
                .map(|r| if r.status == RunStatus::Completed && !r.extrap_mse.is_nan() { r.extrap_mse } else { f64::INFINITY })
                .fold(f64::NEG_INFINITY, f64::max);
            let ok = rs.iter().filter(|r| r.success).count();
            InitGridCell {
                means,
                operation: key.1,
                max_extrap_mse: max,
                success_fraction: ok as f64 / rs.len() as f64,
                runs: rs.len(),
                stable: max < INIT_SUCCESS_THRESHOLD,
            }
        })
        .collect()
}

/// `mu_g,mu_m_hat,mu_w_hat,operation,max_extrap_mse,success_fraction,runs,stable`
pub fn write_init_grid(cells: &[InitGridCell], path: &Path) -> Result<()> {
    if cells.is_empty() {
        return config("refusing to write an empty initialization table");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mu_g", "mu_m_hat", "mu_w_hat", "operation", "max_extrap_mse", "success_fraction", "runs", "stable"])
        .map_err(csv_err)?;
    for c in cells {
        w.write_record([
            c.means.0.to_string(),
            c.means.1.to_string(),
            c.means.2.to_string(),
            c.operation.to_string(),
            fmt_sci(c.max_extrap_mse),
            format!("{:.3}", c.success_fraction),
            c.runs.to_string(),
            c.stable.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(seed: u64, extrap: f64) -> ResultRecord {
        ResultRecord {
            experiment: ExperimentId::Exp1,
            variant: CellVariant::InaluIndependentWeights,
            operation: Operation::Add,
            train_dist: "U(-3,3)".into(),
            extrap_dist: "U(-5,5)".into(),
            init: InitSpec::default(),
            seed,
            interp_mse: 0.0,
            extrap_mse: 0.0,
            success: false,
            reinit_count: 0,
            epochs_run: 100,
            wall_time_seconds: None,
            status: RunStatus::Completed,
            extrap_parts: Vec::new(),
            detail: String::new(),
        }
        .with_mse(extrap / 2.0, extrap, vec![extrap])
    }

    #[test]
    fn one_record_two_lines_and_rewrite_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs = vec![record(0, 1.234_567_89e-5)];
        write_results(&recs, &path, &"meta").unwrap();
        let first = fs::read(&path).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), HEADER.join(","));
        assert!(text.contains("1.23457e-5"), "{text}");
        assert!(text.contains(",NA,"));
        assert!(meta_path(&path).exists());
        write_results(&recs, &path, &"meta").unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn empty_records_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        assert!(write_results(&[], &path, &"meta").is_err());
        assert!(!path.exists());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("r.csv");
        assert!(matches!(write_results(&[record(0, 1.0)], &path, &"m"), Err(crate::Error::Io(_))));
    }

    #[test]
    fn success_matches_stored_value() {
        // 1.0000004e-4 is stored as 1.00000e-4, which counts as solved.
        let r = record(0, 1.000_000_4e-4);
        assert_eq!(r.extrap_mse, 1e-4);
        assert!(r.success);
        assert!(!record(0, 1.000_01e-4).success);
        assert!(!record(0, f64::NAN).success);
    }

    #[test]
    fn init_grid_max_matches_hand_built_records() {
        let mut recs = Vec::new();
        for (seed, mse) in [(0, 1e-6), (1, 5e-4), (2, 2e-7)] {
            recs.push(record(seed, mse));
        }
        let mut other = record(3, 3.0);
        other.init = InitSpec::with_means(1.0, 1.0, 1.0, 0.5);
        recs.push(other);
        let mut failed = record(4, 0.0);
        failed.init = InitSpec::with_means(1.0, 1.0, 1.0, 0.5);
        failed.status = RunStatus::Failed;
        recs.push(failed);

        let cells = aggregate_init_grid(&recs);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].means, (0.0, -1.0, 1.0));
        assert_eq!(cells[0].max_extrap_mse, 5e-4);
        assert!(cells[0].stable);
        assert!((cells[0].success_fraction - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(cells[1].max_extrap_mse, f64::INFINITY);
        assert!(!cells[1].stable);
    }
}
