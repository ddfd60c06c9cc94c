//! Cross-seed statistics over finished runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::Bounds;
use crate::harness::log::RunLog;

/// Interquartile mean: the mean after dropping `floor(n/4)` values from each end.
pub fn iqm(scores: &[f64]) -> f64 {
    assert!(!scores.is_empty(), "iqm of no scores");
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let cut = s.len() / 4;
    let mid = &s[cut..s.len() - cut];
    mid.iter().sum::<f64>() / mid.len() as f64
}

/// Mean shortfall below a normalized score of 1.
pub fn optimality_gap(scores: &[f64]) -> f64 {
    assert!(!scores.is_empty(), "optimality gap of no scores");
    scores.iter().map(|&x| (1.0 - x).max(0.0)).sum::<f64>() / scores.len() as f64
}

/// Mean and standard error of the mean (zero for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Environments generated since the start of the run.
    pub budget_step: usize,
    pub mean: f64,
    pub stderr: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub seeds: Vec<u64>,
    /// Final mean test return per run.
    pub final_returns: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub iqm: f64,
    pub optimality_gap: f64,
    pub curve: Vec<CurvePoint>,
    /// One curve per test environment, in test-set order.
    pub per_env_curves: Vec<Vec<CurvePoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub bounds: Bounds,
    pub methods: Vec<MethodReport>,
}

fn curve(rows: &BTreeMap<usize, Vec<f64>>) -> Vec<CurvePoint> {
    rows.iter()
        .map(|(&budget_step, xs)| {
            let (mean, stderr) = mean_stderr(xs);
            CurvePoint {
                budget_step,
                mean,
                stderr,
                runs: xs.len(),
            }
        })
        .collect()
}

/// Groups runs by teacher kind. All logs must share a test set; scores are
/// final test means mapped through `bounds` (the first log's when absent).
pub fn aggregate(logs: &[RunLog], bounds: Option<Bounds>) -> Result<AggregateReport> {
    let first = logs
        .first()
        .ok_or_else(|| Error::IncompatibleLogs("no logs given".into()))?;
    for l in &logs[1..] {
        if l.header.test_set != first.header.test_set || l.header.config.family != first.header.config.family {
            return Err(Error::IncompatibleLogs(format!(
                "run with seed {} was evaluated on a different test set than run with seed {}",
                l.header.config.seed, first.header.config.seed
            )));
        }
    }
    let bounds = bounds.unwrap_or_else(|| first.header.config.bounds());
    let mut groups: BTreeMap<String, Vec<&RunLog>> = BTreeMap::new();
    for l in logs {
        groups.entry(l.header.config.teacher.name().to_string()).or_default().push(l);
    }
    let n_test = first.header.test_set.len();
    let mut methods = Vec::new();
    for (method, runs) in groups {
        let mut seeds = Vec::new();
        let mut finals = Vec::new();
        let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut env_rows: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); n_test];
        for run in runs {
            let fin = run.final_test_mean().ok_or_else(|| {
                Error::IncompatibleLogs(format!("run with seed {} has no test evaluation", run.header.config.seed))
            })?;
            seeds.push(run.header.config.seed);
            finals.push(fin);
            let t = run.header.config.env_budget;
            for (episode, envs, returns, mean) in run.test_evals() {
                if returns.len() != n_test {
                    return Err(Error::IncompatibleLogs(format!(
                        "run with seed {} logged {} test returns for a {n_test}-environment test set",
                        run.header.config.seed,
                        returns.len()
                    )));
                }
                let at = episode * t + envs;
                rows.entry(at).or_default().push(mean);
                for (i, &r) in returns.iter().enumerate() {
                    env_rows[i].entry(at).or_default().push(r);
                }
            }
        }
        let scores: Vec<f64> = finals.iter().map(|&x| bounds.normalize(x)).collect();
        let (mean, stderr) = mean_stderr(&finals);
        methods.push(MethodReport {
            method,
            seeds,
            mean,
            stderr,
            iqm: iqm(&scores),
            optimality_gap: optimality_gap(&scores),
            final_returns: finals,
            curve: curve(&rows),
            per_env_curves: env_rows.iter().map(curve).collect(),
        });
    }
    Ok(AggregateReport { bounds, methods })
}

fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["budget_step", "mean_return", "stderr", "lower", "upper", "runs"])?;
    for p in points {
        w.write_record([
            p.budget_step.to_string(),
            p.mean.to_string(),
            p.stderr.to_string(),
            (p.mean - p.stderr).to_string(),
            (p.mean + p.stderr).to_string(),
            p.runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One CSV per test curve plus a per-method summary table.
pub fn export_plots(report: &AggregateReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let summary = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["method", "runs", "mean_return", "stderr", "iqm", "optimality_gap"])?;
    for m in &report.methods {
        w.write_record([
            m.method.clone(),
            m.final_returns.len().to_string(),
            m.mean.to_string(),
            m.stderr.to_string(),
            m.iqm.to_string(),
            m.optimality_gap.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(summary);
    for m in &report.methods {
        let p = dir.join(format!("{}-test-mean.csv", m.method));
        write_curve(&p, &m.curve)?;
        written.push(p);
        for (i, c) in m.per_env_curves.iter().enumerate() {
            let p = dir.join(format!("{}-test-env{i:02}.csv", m.method));
            write_curve(&p, c)?;
            written.push(p);
        }
    }
    Ok(written)
}
