//! CSV outputs.

use std::path::Path;

use critflow_core::metrics::{EvalRecord, Metric, SuiteReport, RECORD_HEADER};
use critflow_core::selectors::SelectionMethod;
use critflow_core::trainer::{Environment, Experience, IterationLog};

use crate::error::CliError;

pub struct Csv {
    writer: csv::Writer<std::fs::File>,
    path: String,
}

impl Csv {
    pub fn create(path: &Path, header: &[&str]) -> Result<Csv, CliError> {
        let mut csv = Csv {
            writer: csv::Writer::from_path(path)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?,
            path: path.display().to_string(),
        };
        csv.row(header)?;
        Ok(csv)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", self.path)))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer
            .flush()
            .map_err(|e| CliError::Runtime(format!("{}: {e}", self.path)))
    }
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), CliError> {
    let mut csv = Csv::create(path, &RECORD_HEADER)?;
    for r in records {
        csv.row(r.to_row())?;
    }
    csv.finish()
}

/// Empirical CDF of every metric per method: `method, metric, x, F`.
pub fn write_cdf(path: &Path, report: &SuiteReport) -> Result<(), CliError> {
    let mut csv = Csv::create(path, &["method", "metric", "x", "F"])?;
    for ((method, metric), s) in &report.summaries {
        for (x, f) in &s.cdf {
            csv.row([method.name().to_string(), metric.name().to_string(), x.to_string(), f.to_string()])?;
        }
    }
    csv.finish()
}

pub fn write_summary(path: &Path, report: &SuiteReport, methods: &[SelectionMethod]) -> Result<(), CliError> {
    let mut csv = Csv::create(path, &["method", "metric", "mean", "std", "count"])?;
    for &m in methods {
        for metric in Metric::ALL {
            if let Some(s) = report.summary(m, metric) {
                csv.row([
                    m.name().to_string(),
                    metric.name().to_string(),
                    s.mean.to_string(),
                    s.std.to_string(),
                    s.count.to_string(),
                ])?;
            }
        }
    }
    csv.finish()
}

/// Per-update training log. Without `wall_time` the time column is 0.
pub fn write_train_log(path: &Path, log: &[IterationLog], wall_time: bool) -> Result<(), CliError> {
    let mut csv = Csv::create(path, &["iteration", "mean_reward", "mean_entropy", "alpha", "wall_ms"])?;
    for e in log {
        csv.row([
            e.iteration.to_string(),
            e.mean_reward.to_string(),
            e.mean_entropy.to_string(),
            e.alpha.to_string(),
            if wall_time { e.wall_ms.to_string() } else { "0".into() },
        ])?;
    }
    csv.finish()
}

/// Every experience of every update; `flows` is space-separated action ids.
pub fn write_experiences<E: Environment>(path: &Path, env: &E, history: &[Vec<Experience>]) -> Result<(), CliError> {
    let mut csv = Csv::create(
        path,
        &["update", "state", "tm_id", "flows", "reward", "baseline", "advantage", "entropy"],
    )?;
    for (update, batch) in history.iter().enumerate() {
        for e in batch {
            let flows: Vec<String> = e.solution.actions.iter().map(usize::to_string).collect();
            csv.row([
                update.to_string(),
                e.state.to_string(),
                env.state(e.state).id().to_string(),
                flows.join(" "),
                e.reward.to_string(),
                e.baseline.to_string(),
                e.advantage.to_string(),
                e.entropy.to_string(),
            ])?;
        }
    }
    csv.finish()
}
