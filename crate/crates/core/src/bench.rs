//! Runs several strategies over one list of query/target pairs and summarises
//! steps-to-target and per-iteration target ranks.

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::session::{run_session, Engine, SessionLog, Status, Strategy};
use crate::{Error, Result};

/// A strategy to benchmark, with the engine (and so re-ranker) it runs on.
pub struct StrategySpec<'a> {
    pub label: String,
    pub strategy: Strategy,
    pub engine: &'a Engine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub label: String,
    pub strategy: Strategy,
    pub sessions: usize,
    pub mean_steps: f64,
    pub std_steps: f64,
    pub found: usize,
    pub capped: usize,
    pub exhausted: usize,
    /// Steps of every session, in pair order.
    pub steps: Vec<usize>,
    /// Mean and standard deviation of the target rank before the first round
    /// (index 0) and after each round. Finished sessions hold their last rank.
    pub rank_curve_mean: Vec<f64>,
    pub rank_curve_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub pairs: usize,
    pub seed: u64,
    pub max_steps: usize,
    pub gallery_size: usize,
    pub strategies: Vec<StrategyReport>,
    /// Resolved configuration of the run that produced the report.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Aggregates per-session results (population standard deviations).
pub fn summarize(
    label: &str,
    strategy: Strategy,
    sessions: &[(usize, Status, Vec<usize>)],
) -> StrategyReport {
    let steps: Vec<usize> = sessions.iter().map(|s| s.0).collect();
    let (mean_steps, std_steps) = mean_std(steps.iter().map(|&s| s as f64));
    let count = |st: Status| sessions.iter().filter(|s| s.1 == st).count();
    let len = sessions.iter().map(|s| s.2.len()).max().unwrap_or(0);
    let at = |curve: &Vec<usize>, t: usize| *curve.get(t).or(curve.last()).unwrap_or(&0) as f64;
    let (rank_curve_mean, rank_curve_std) = (0..len)
        .map(|t| mean_std(sessions.iter().map(move |s| at(&s.2, t))))
        .unzip();
    StrategyReport {
        label: label.to_string(),
        strategy,
        sessions: sessions.len(),
        mean_steps,
        std_steps,
        found: count(Status::Found),
        capped: count(Status::Capped),
        exhausted: count(Status::Exhausted),
        steps,
        rank_curve_mean,
        rank_curve_std,
    }
}

/// Rebuilds a strategy's summary from its emitted session logs.
pub fn report_from_logs(label: &str, logs: &[SessionLog]) -> Result<StrategyReport> {
    let strategy = logs
        .first()
        .ok_or(Error::Empty("session logs"))?
        .header
        .strategy;
    let sessions = logs
        .iter()
        .map(|l| {
            let curve = l
                .rank_curve()
                .ok_or(Error::Empty("target ranks in session log"))?;
            Ok((l.steps_taken(), l.final_status(), curve))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(label, strategy, &sessions))
}

/// Runs every strategy on the same `pairs` (gallery positions of query and
/// target). Returns the report and, per strategy, the session logs in pair order.
pub fn benchmark(
    specs: &[StrategySpec<'_>],
    pairs: &[(usize, usize)],
    max_steps: usize,
    seed: u64,
) -> Result<(BenchmarkReport, Vec<Vec<SessionLog>>)> {
    if pairs.is_empty() {
        return Err(Error::Empty("benchmark pairs"));
    }
    let gallery_size = specs.first().map_or(0, |s| s.engine.gallery.len());
    let mut strategies = Vec::with_capacity(specs.len());
    let mut all_logs = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.engine.supports(spec.strategy)?;
        let mut sessions = Vec::with_capacity(pairs.len());
        let mut logs = Vec::with_capacity(pairs.len());
        for &(q, t) in pairs {
            let out = run_session(spec.engine, q, t, spec.strategy, max_steps)?;
            sessions.push((out.steps, out.status, out.rank_curve));
            logs.push(out.log);
        }
        let report = summarize(&spec.label, spec.strategy, &sessions);
        info!(label = %spec.label, mean_steps = report.mean_steps, "benchmarked strategy");
        strategies.push(report);
        all_logs.push(logs);
    }
    Ok((
        BenchmarkReport {
            pairs: pairs.len(),
            seed,
            max_steps,
            gallery_size,
            strategies,
            config: serde_json::Value::Null,
        },
        all_logs,
    ))
}

impl BenchmarkReport {
    /// Rank curves as CSV: `iteration` then `<label>_mean,<label>_std` per strategy.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("iteration");
        for s in &self.strategies {
            let name: String = s
                .label
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
                .collect();
            out.push_str(&format!(",{name}_mean,{name}_std"));
        }
        out.push('\n');
        let len = self
            .strategies
            .iter()
            .map(|s| s.rank_curve_mean.len())
            .max()
            .unwrap_or(0);
        for t in 0..len {
            out.push_str(&t.to_string());
            for s in &self.strategies {
                let m = s
                    .rank_curve_mean
                    .get(t)
                    .or(s.rank_curve_mean.last())
                    .copied()
                    .unwrap_or(0.0);
                let d = s
                    .rank_curve_std
                    .get(t)
                    .or(s.rank_curve_std.last())
                    .copied()
                    .unwrap_or(0.0);
                out.push_str(&format!(",{m},{d}"));
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width table of mean steps per strategy.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>10} {:>8} {:>7} {:>7}\n",
            "Method", "Mean steps", "Std", "Found", "Capped"
        );
        for s in &self.strategies {
            out.push_str(&format!(
                "{:<20} {:>10.2} {:>8.2} {:>7} {:>7}\n",
                s.label, s.mean_steps, s.std_steps, s.found, s.capped
            ));
        }
        out
    }
}
