//! On-disk artifacts: maps with their sidecars, trajectory and record CSVs.
//!
//! A map `X.vtrmap` travels with `X.vtrvoc` (vocabulary), `X.teach.csv`
//! (true teach path) and `X.keyframes.csv` (true keyframe poses).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::repeat::{AttachmentRecord, MatchRecord, RunReport};
use super::teach::{KeyframePose, PathSample};
use super::RunError;
use crate::geometry::Pose2;
use crate::map::TopoMetricMap;
use crate::place_recognition::Vocabulary;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MATCHES_FILE: &str = "matches.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ATTACHMENTS_FILE: &str = "attachments.csv";
pub const MAP_FILE: &str = "map.vtrmap";

/// `X.vtrmap` → `X.<suffix>`.
pub fn sidecar(map_path: &Path, suffix: &str) -> PathBuf {
    let stem = map_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("map");
    map_path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PoseRow {
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct KeyframeRow {
    id: u64,
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
}

pub fn write_rows<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_trajectory(path: &Path, samples: &[PathSample]) -> Result<(), RunError> {
    write_rows(
        path,
        samples.iter().map(|s| PoseRow {
            t: s.t,
            x: s.pose.x,
            y: s.pose.y,
            theta: s.pose.theta,
        }),
    )
}

pub fn read_trajectory(path: &Path) -> Result<Vec<PathSample>, RunError> {
    Ok(read_rows::<PoseRow>(path)?
        .into_iter()
        .map(|r| PathSample {
            t: r.t,
            pose: Pose2::new(r.x, r.y, r.theta),
        })
        .collect())
}

pub fn write_keyframes(path: &Path, kfs: &[KeyframePose]) -> Result<(), RunError> {
    write_rows(
        path,
        kfs.iter().map(|k| KeyframeRow {
            id: k.id,
            t: k.t,
            x: k.pose.x,
            y: k.pose.y,
            theta: k.pose.theta,
        }),
    )
}

pub fn read_keyframes(path: &Path) -> Result<Vec<KeyframePose>, RunError> {
    Ok(read_rows::<KeyframeRow>(path)?
        .into_iter()
        .map(|r| KeyframePose {
            id: r.id,
            t: r.t,
            pose: Pose2::new(r.x, r.y, r.theta),
        })
        .collect())
}

/// A map file with everything that travels alongside it.
#[derive(Debug, Clone)]
pub struct MapBundle {
    pub map: TopoMetricMap,
    pub vocab: Vocabulary,
    pub teach_path: Vec<PathSample>,
    pub keyframes: Vec<KeyframePose>,
}

impl MapBundle {
    pub fn teach_end(&self) -> [f64; 2] {
        self.teach_path
            .last()
            .map_or([0.0, 0.0], |s| s.pose.position())
    }

    pub fn save(&self, map_path: &Path) -> Result<(), RunError> {
        if let Some(dir) = map_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(map_path, self.map.to_bytes())?;
        fs::write(sidecar(map_path, "vtrvoc"), self.vocab.to_bytes())?;
        write_trajectory(&sidecar(map_path, "teach.csv"), &self.teach_path)?;
        write_keyframes(&sidecar(map_path, "keyframes.csv"), &self.keyframes)?;
        Ok(())
    }

    pub fn load(map_path: &Path) -> Result<Self, RunError> {
        let map = TopoMetricMap::from_bytes(&fs::read(map_path)?)?;
        let vocab = Vocabulary::from_bytes(&fs::read(sidecar(map_path, "vtrvoc"))?)?;
        map.check_vocabulary(&vocab)?;
        let teach_path = read_trajectory(&sidecar(map_path, "teach.csv"))?;
        let keyframes = read_keyframes(&sidecar(map_path, "keyframes.csv"))?;
        Ok(Self {
            map,
            vocab,
            teach_path,
            keyframes,
        })
    }
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub termination: String,
    pub success: bool,
    pub end_point_distance: f64,
    pub chamfer_distance: Option<f64>,
    pub duration: f64,
    pub distance: f64,
    pub matches: usize,
    pub match_attempts: usize,
    pub matches_per_meter: f64,
    pub goal_staleness_max: f64,
    pub attachments: usize,
    pub single_goal: bool,
    pub expansion: bool,
}

impl Metrics {
    pub fn from_report(
        scenario: &str,
        seed: u64,
        single_goal: bool,
        expansion: bool,
        r: &RunReport,
    ) -> Self {
        Self {
            scenario: scenario.to_string(),
            seed,
            termination: r.termination.as_str().to_string(),
            success: r.success,
            end_point_distance: r.end_point_distance,
            chamfer_distance: r.chamfer_distance,
            duration: r.path.last().map_or(0.0, |s| s.t),
            distance: r.distance_travelled(),
            matches: r.matches.len(),
            match_attempts: r.match_attempts,
            matches_per_meter: r.matches_per_meter(),
            goal_staleness_max: r.goal_staleness_max,
            attachments: r.attachments.len(),
            single_goal,
            expansion,
        }
    }
}

/// Writes the per-run files of a repeat output directory.
pub fn write_run(dir: &Path, report: &RunReport, metrics: &Metrics) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    write_trajectory(&dir.join(TRAJECTORY_FILE), &report.path)?;
    write_matches(&dir.join(MATCHES_FILE), &report.matches)?;
    write_rows(&dir.join(ATTACHMENTS_FILE), report.attachments.iter())?;
    write_rows(&dir.join(METRICS_FILE), [metrics])?;
    Ok(())
}

pub fn write_matches(path: &Path, matches: &[MatchRecord]) -> Result<(), RunError> {
    write_rows(path, matches.iter())
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchRecord>, RunError> {
    read_rows(path)
}

pub fn read_attachments(path: &Path) -> Result<Vec<AttachmentRecord>, RunError> {
    read_rows(path)
}

pub fn read_metrics(path: &Path) -> Result<Vec<Metrics>, RunError> {
    read_rows(path)
}
