//! End-point and path-shape metrics plus the summary table.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use super::io::Metrics;
use super::teach::PathSample;

fn mean_nearest(from: &[[f64; 2]], to: &[[f64; 2]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| (p[0] - q[0]).hypot(p[1] - q[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric mean nearest-neighbour distance between two point sets.
/// `None` when either set is empty.
pub fn chamfer(a: &[[f64; 2]], b: &[[f64; 2]]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(0.5 * (mean_nearest(a, b) + mean_nearest(b, a)))
}

pub fn path_chamfer(a: &[PathSample], b: &[PathSample]) -> Option<f64> {
    let pa: Vec<[f64; 2]> = a.iter().map(|s| s.pose.position()).collect();
    let pb: Vec<[f64; 2]> = b.iter().map(|s| s.pose.position()).collect();
    chamfer(&pa, &pb)
}

/// Per-scenario aggregate over runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub runs: usize,
    pub successes: usize,
    pub mean_end_point: f64,
    pub max_end_point: f64,
    pub mean_chamfer: Option<f64>,
}

impl ScenarioSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.runs as f64
    }
}

pub fn summarize(rows: &[Metrics]) -> Vec<ScenarioSummary> {
    let mut groups: BTreeMap<String, Vec<&Metrics>> = BTreeMap::new();
    for r in rows {
        let mut key = r.scenario.clone();
        if r.single_goal {
            key.push_str(" [single-goal]");
        }
        if !r.expansion {
            key.push_str(" [no-expansion]");
        }
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(scenario, rs)| {
            let n = rs.len() as f64;
            let chamfers: Vec<f64> = rs.iter().filter_map(|r| r.chamfer_distance).collect();
            ScenarioSummary {
                scenario,
                runs: rs.len(),
                successes: rs.iter().filter(|r| r.success).count(),
                mean_end_point: rs.iter().map(|r| r.end_point_distance).sum::<f64>() / n,
                max_end_point: rs.iter().map(|r| r.end_point_distance).fold(0.0, f64::max),
                mean_chamfer: (!chamfers.is_empty())
                    .then(|| chamfers.iter().sum::<f64>() / chamfers.len() as f64),
            }
        })
        .collect()
}

/// Aligned text table, one line per scenario.
pub fn format_table(summary: &[ScenarioSummary]) -> String {
    let width = summary
        .iter()
        .map(|s| s.scenario.len())
        .max()
        .unwrap_or(0)
        .max(8);
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>4}  {:>7}  {:>10}  {:>10}  {:>8}",
        "scenario", "runs", "success", "mean_end_m", "max_end_m", "chamfer"
    )
    .unwrap();
    for s in summary {
        let chamfer = s
            .mean_chamfer
            .map_or("-".to_string(), |c| format!("{c:.3}"));
        writeln!(
            out,
            "{:<width$}  {:>4}  {:>6.0}%  {:>10.3}  {:>10.3}  {:>8}",
            s.scenario,
            s.runs,
            100.0 * s.success_rate(),
            s.mean_end_point,
            s.max_end_point,
            chamfer
        )
        .unwrap();
    }
    out
}
