//! RMSE evaluation: per-horizon position error of the MAP trajectory,
//! stratified by maneuver class, with a side-by-side comparison renderer.
//!
//! RMSE is always computed in Cartesian meters. Models emitting polar
//! parameters have their per-step means mapped through the polar-to-
//! Cartesian conversion first; the mapped mean of a nonlinear transform is
//! not exactly the mean of the mapped distribution, which is accepted here
//! as the evaluation convention so every strategy is scored in one space.

use crate::dataset::{EvalClass, SceneSample};
use crate::error::{Error, Result};
use crate::model::{Model, PredictMode};
use crate::pooling::PoolingStrategy;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Report row keys: the four maneuver classes plus the union.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportClass {
    Overall,
    Keep,
    Merge,
    Left,
    Right,
}

impl ReportClass {
    pub fn label(&self) -> &'static str {
        match self {
            ReportClass::Overall => "overall",
            ReportClass::Keep => "keep",
            ReportClass::Merge => "merge",
            ReportClass::Left => "left",
            ReportClass::Right => "right",
        }
    }

    pub fn from_eval(class: EvalClass) -> Self {
        match class {
            EvalClass::Keep => ReportClass::Keep,
            EvalClass::Merge => ReportClass::Merge,
            EvalClass::Left => ReportClass::Left,
            EvalClass::Right => ReportClass::Right,
        }
    }

    pub const ALL: [ReportClass; 5] = [
        ReportClass::Overall,
        ReportClass::Keep,
        ReportClass::Merge,
        ReportClass::Left,
        ReportClass::Right,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Horizons to report, in whole seconds.
    pub horizons_s: [u32; 5],
    /// Effective frame rate of the futures (Hz).
    pub rate_hz: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizons_s: [1, 2, 3, 4, 5],
            rate_hz: 5.0,
        }
    }
}

impl EvalConfig {
    /// 0-based future index of a horizon; the frame at `h` seconds is the
    /// (h * rate)-th one after the anchor.
    pub fn horizon_index(&self, horizon_s: u32, future_len: usize) -> Result<usize> {
        let idx = (horizon_s as f64 * self.rate_hz).round() as usize;
        if idx == 0 || idx > future_len {
            return Err(Error::Usage(format!(
                "horizon {horizon_s} s is outside the {future_len}-frame future at {} Hz",
                self.rate_hz
            )));
        }
        Ok(idx - 1)
    }
}

/// One class row: the sample count and the RMSE at each horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub count: usize,
    pub rmse: Vec<f64>,
}

/// Maneuver-stratified RMSE table. Classes with zero test samples are
/// absent rather than reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub horizons_s: Vec<u32>,
    pub rows: BTreeMap<ReportClass, ClassRow>,
}

impl RmseReport {
    pub fn row(&self, class: ReportClass) -> Option<&ClassRow> {
        self.rows.get(&class)
    }
}

/// A (predicted, ground-truth) pair of mean position sequences.
pub type TrajectoryPair = (Vec<(f64, f64)>, Vec<(f64, f64)>);

/// RMSE at the requested horizons over prediction pairs, pooled over all
/// pairs.
pub fn rmse_by_horizon(
    pairs: &[TrajectoryPair],
    horizons_s: &[u32],
    cfg: &EvalConfig,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::Usage("no prediction pairs to evaluate".into()));
    }
    let future_len = pairs[0].1.len();
    let mut out = Vec::with_capacity(horizons_s.len());
    for &h in horizons_s {
        let idx = cfg.horizon_index(h, future_len)?;
        let mut sq_sum = 0.0;
        for (pred, truth) in pairs {
            if pred.len() < future_len || truth.len() != future_len {
                return Err(Error::shape(
                    "rmse sequence length",
                    &[future_len],
                    &[pred.len().min(truth.len())],
                ));
            }
            let (px, py) = pred[idx];
            let (tx, ty) = truth[idx];
            sq_sum += (px - tx).powi(2) + (py - ty).powi(2);
        }
        out.push((sq_sum / pairs.len() as f64).sqrt());
    }
    Ok(out)
}

type ClassSums = BTreeMap<ReportClass, (usize, Vec<f64>)>;

fn sum_chunk(model: &Model, chunk: &[SceneSample], horizon_idx: &[usize]) -> Result<ClassSums> {
    let future_len = model.cfg.future_len;
    let mut sums: ClassSums = BTreeMap::new();
    for sample in chunk {
        let output = model.predict(sample, PredictMode::Map)?;
        let pred = output.modes[0].seq.mean_xy();
        let truth: Vec<(f64, f64)> = sample.future.iter().map(|p| (p.dx, p.dy)).collect();
        if truth.len() != future_len {
            return Err(Error::shape(
                "sample future length",
                &[future_len],
                &[truth.len()],
            ));
        }
        let class = ReportClass::from_eval(sample.label.eval_class);
        for key in [ReportClass::Overall, class] {
            let entry = sums
                .entry(key)
                .or_insert_with(|| (0, vec![0.0; horizon_idx.len()]));
            entry.0 += 1;
            for (slot, &idx) in entry.1.iter_mut().zip(horizon_idx) {
                let (px, py) = pred[idx];
                let (tx, ty) = truth[idx];
                *slot += (px - tx).powi(2) + (py - ty).powi(2);
            }
        }
    }
    Ok(sums)
}

/// MAP-decode every test sample and tabulate RMSE by maneuver class. The
/// overall row is computed over the union of all samples, not by averaging
/// class rows.
pub fn evaluate_by_maneuver(
    model: &Model,
    test: &[SceneSample],
    cfg: &EvalConfig,
) -> Result<RmseReport> {
    evaluate_by_maneuver_threads(model, test, cfg, 1)
}

/// As [`evaluate_by_maneuver`], spreading samples over up to `threads`
/// workers. Chunks are contiguous and merged in chunk order, so the result
/// is deterministic for a fixed thread count.
pub fn evaluate_by_maneuver_threads(
    model: &Model,
    test: &[SceneSample],
    cfg: &EvalConfig,
    threads: usize,
) -> Result<RmseReport> {
    if test.is_empty() {
        return Err(Error::Usage("empty test set".into()));
    }
    let future_len = model.cfg.future_len;
    let horizon_idx: Vec<usize> = cfg
        .horizons_s
        .iter()
        .map(|&h| cfg.horizon_index(h, future_len))
        .collect::<Result<Vec<_>>>()?;

    let threads = threads.clamp(1, test.len());
    let chunk_len = test.len().div_ceil(threads);
    let chunk_sums: Vec<Result<ClassSums>> = if threads == 1 {
        vec![sum_chunk(model, test, &horizon_idx)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = test
                .chunks(chunk_len)
                .map(|chunk| scope.spawn(|| sum_chunk(model, chunk, &horizon_idx)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    };

    let mut sums: ClassSums = BTreeMap::new();
    for partial in chunk_sums {
        for (class, (count, sq)) in partial? {
            let entry = sums
                .entry(class)
                .or_insert_with(|| (0, vec![0.0; horizon_idx.len()]));
            entry.0 += count;
            for (slot, v) in entry.1.iter_mut().zip(&sq) {
                *slot += v;
            }
        }
    }

    let rows = sums
        .into_iter()
        .map(|(class, (count, sq))| {
            let rmse = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
            (class, ClassRow { count, rmse })
        })
        .collect();
    Ok(RmseReport {
        horizons_s: cfg.horizons_s.to_vec(),
        rows,
    })
}

/// Published full-scale NGSIM reference results (RMSE in meters at 1..5 s),
/// printed alongside desk-scale tables for context. Desk-scale runs are not
/// expected to reproduce them.
pub fn reference_rmse(strategy: PoolingStrategy, class: ReportClass) -> [f64; 5] {
    use PoolingStrategy::*;
    use ReportClass::*;
    match (class, strategy) {
        (Overall, Slstm) => [0.33, 0.97, 1.72, 2.65, 3.83],
        (Overall, Csp) => [0.34, 0.98, 1.73, 2.68, 3.87],
        (Overall, Sgan) => [0.34, 0.98, 1.73, 2.66, 3.84],
        (Overall, Polar) => [0.34, 0.96, 1.71, 2.66, 3.85],
        (Overall, PolarVr) => [0.25, 0.84, 1.58, 2.53, 3.75],
        (Keep, Slstm) => [0.37, 1.01, 1.72, 2.57, 3.60],
        (Keep, Csp) => [0.38, 1.02, 1.76, 2.64, 3.72],
        (Keep, Sgan) => [0.38, 1.02, 1.75, 2.61, 3.66],
        (Keep, Polar) => [0.38, 1.01, 1.72, 2.58, 3.63],
        (Keep, PolarVr) => [0.29, 0.89, 1.62, 2.51, 3.62],
        (Merge, Slstm) => [0.35, 1.03, 1.89, 2.93, 4.19],
        (Merge, Csp) => [0.36, 1.06, 1.94, 2.96, 4.18],
        (Merge, Sgan) => [0.37, 1.07, 1.95, 2.93, 4.08],
        (Merge, Polar) => [0.34, 0.99, 1.82, 2.75, 3.85],
        (Merge, PolarVr) => [0.25, 0.91, 1.76, 2.81, 4.04],
        (Left, Slstm) => [0.54, 1.50, 2.70, 4.14, 5.87],
        (Left, Csp) => [0.53, 1.50, 2.72, 4.18, 5.88],
        (Left, Sgan) => [0.54, 1.54, 2.77, 4.23, 5.93],
        (Left, Polar) => [0.48, 1.41, 2.61, 4.09, 5.83],
        (Left, PolarVr) => [0.37, 1.22, 2.38, 3.88, 5.69],
        (Right, Slstm) => [0.60, 1.93, 3.53, 5.47, 7.59],
        (Right, Csp) => [0.62, 1.87, 3.46, 5.46, 7.76],
        (Right, Sgan) => [0.58, 1.76, 3.38, 5.35, 7.64],
        (Right, Polar) => [0.54, 1.72, 3.28, 5.16, 7.32],
        (Right, PolarVr) => [0.39, 1.38, 2.83, 4.63, 6.74],
    }
}

/// Human-readable table of one report, with the published full-scale
/// reference row for the same strategy printed underneath each class.
pub fn render_report(report: &RmseReport, strategy: Option<PoolingStrategy>) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<10} {:>7}", "class", "count"));
    for h in &report.horizons_s {
        out.push_str(&format!(" {:>8}", format!("{h}s")));
    }
    out.push('\n');
    for class in ReportClass::ALL {
        match report.rows.get(&class) {
            Some(row) => {
                out.push_str(&format!("{:<10} {:>7}", class.label(), row.count));
                for v in &row.rmse {
                    out.push_str(&format!(" {v:>8.3}"));
                }
                out.push('\n');
                if let Some(strategy) = strategy {
                    if report.horizons_s == [1, 2, 3, 4, 5] {
                        let reference = reference_rmse(strategy, class);
                        out.push_str(&format!("{:<10} {:>7}", "  (ngsim)", "-"));
                        for v in reference {
                            out.push_str(&format!(" {v:>8.3}"));
                        }
                        out.push('\n');
                    }
                }
            }
            None => {
                out.push_str(&format!("{:<10} {:>7}  (absent)\n", class.label(), 0));
            }
        }
    }
    out
}

/// Side-by-side comparison across strategies, one block per class.
pub fn render_comparison(reports: &[(String, RmseReport)]) -> String {
    let mut out = String::new();
    let horizons = match reports.first() {
        Some((_, r)) => r.horizons_s.clone(),
        None => return out,
    };
    for class in ReportClass::ALL {
        if !reports.iter().any(|(_, r)| r.rows.contains_key(&class)) {
            continue;
        }
        out.push_str(&format!("== {} ==\n", class.label()));
        out.push_str(&format!("{:<12} {:>7}", "strategy", "count"));
        for h in &horizons {
            out.push_str(&format!(" {:>8}", format!("{h}s")));
        }
        out.push('\n');
        for (name, report) in reports {
            match report.rows.get(&class) {
                Some(row) => {
                    out.push_str(&format!("{name:<12} {:>7}", row.count));
                    for v in &row.rmse {
                        out.push_str(&format!(" {v:>8.3}"));
                    }
                    out.push('\n');
                }
                None => out.push_str(&format!("{name:<12} {:>7}  (absent)\n", 0)),
            }
        }
        for (name, _) in reports {
            if let Ok(strategy) = PoolingStrategy::from_key(name) {
                if horizons == [1, 2, 3, 4, 5] {
                    let reference = reference_rmse(strategy, class);
                    out.push_str(&format!("{:<12} {:>7}", format!("ngsim:{name}"), "-"));
                    for v in reference {
                        out.push_str(&format!(" {v:>8.3}"));
                    }
                    out.push('\n');
                }
            }
        }
        out.push('\n');
    }
    out
}
