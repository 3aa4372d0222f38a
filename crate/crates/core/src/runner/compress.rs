//! Offline keyframe clustering of a saved map.

use std::fmt::Write;

use super::RunError;
use crate::geometry::CameraIntrinsics;
use crate::map::TopoMetricMap;
use crate::map_ops::{reduce_redundancy, ClusterConfig, ClusterReport};
use crate::place_recognition::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct CompressReport {
    pub clusters: ClusterReport,
    /// Points per alive keyframe after clustering, in keyframe order.
    pub points: Vec<usize>,
}

impl CompressReport {
    /// Text report with a points-per-keyframe histogram in 100-point bins.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "keyframes before: {}", self.clusters.before).unwrap();
        writeln!(out, "keyframes after:  {}", self.clusters.after).unwrap();
        writeln!(out, "clusters merged:  {}", self.clusters.clusters).unwrap();
        writeln!(out, "points per keyframe:").unwrap();
        let max = self.points.iter().copied().max().unwrap_or(0);
        for lo in (0..=max).step_by(100) {
            let n = self
                .points
                .iter()
                .filter(|&&p| p >= lo && p < lo + 100)
                .count();
            writeln!(out, "  {:>4}-{:<4} {:>5}", lo, lo + 99, n).unwrap();
        }
        out
    }
}

pub fn run_compress(
    map: &mut TopoMetricMap,
    vocab: &Vocabulary,
    intrinsics: &CameraIntrinsics<f64>,
    cfg: &ClusterConfig,
) -> Result<CompressReport, RunError> {
    map.check_vocabulary(vocab)?;
    map.index_bow(vocab);
    let clusters = reduce_redundancy(map, vocab, intrinsics, cfg)?;
    let points = map.keyframes().map(|k| k.points.len()).collect();
    Ok(CompressReport { clusters, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins() {
        let r = CompressReport {
            clusters: ClusterReport {
                before: 10,
                after: 4,
                clusters: 2,
            },
            points: vec![50, 120, 150, 250],
        };
        let text = r.to_text();
        assert!(text.contains("keyframes after:  4"));
        assert!(text.contains("     0-99       1"));
        assert!(text.contains("   100-199      2"));
        assert!(text.contains("   200-299      1"));
    }
}
