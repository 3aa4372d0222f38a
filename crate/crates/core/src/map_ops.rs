//! Post-teach keyframe clustering and repeat-time map expansion.

use std::collections::HashMap;

use log::debug;
use nalgebra::Vector3;

use crate::descriptor::{Descriptor, Feature};
use crate::geometry::{CameraIntrinsics, Z_MIN};
use crate::map::{Link, LowLevelFrame, MapError, TopoMetricMap};
use crate::place_recognition::{similarity, Vocabulary};
use crate::sim::Frame;
use crate::Pose3;

/// Descriptors closer than this (and within the pixel radius) are duplicates.
pub const DEDUPE_HAMMING: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub tau_cluster: f64,
    pub max_points_per_keyframe: usize,
    pub dedupe_radius_px: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            tau_cluster: 0.35,
            max_points_per_keyframe: 600,
            dedupe_radius_px: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    /// Minimum time between the two bracketing matches, seconds.
    pub min_match_interval: f64,
    /// Give attachments a BoW vector so loop queries can return them.
    pub attach_bow: bool,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            min_match_interval: 1.0,
            attach_bow: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClusterReport {
    pub before: usize,
    pub after: usize,
    pub clusters: usize,
}

fn dedupe_and_cap(
    features: &mut Vec<Feature>,
    points: &mut Vec<Vector3<f64>>,
    cfg: &ClusterConfig,
) {
    let r2 = cfg.dedupe_radius_px * cfg.dedupe_radius_px;
    let mut kept_f: Vec<Feature> = Vec::with_capacity(features.len());
    let mut kept_p = Vec::with_capacity(points.len());
    for (f, p) in features.iter().zip(points.iter()) {
        if kept_p.len() >= cfg.max_points_per_keyframe {
            break;
        }
        let dup = kept_f.iter().any(|k| {
            k.pixel_distance_sq(f.u, f.v) <= r2
                && k.descriptor.hamming(&f.descriptor) < DEDUPE_HAMMING
        });
        if !dup {
            kept_f.push(*f);
            kept_p.push(*p);
        }
    }
    *features = kept_f;
    *points = kept_p;
}

/// Merges runs of similar consecutive keyframes into the first keyframe of
/// each run. Keyframes already carrying a cluster link are left alone, so
/// running this twice changes nothing.
pub fn reduce_redundancy(
    map: &mut TopoMetricMap,
    vocab: &Vocabulary,
    intrinsics: &CameraIntrinsics<f64>,
    cfg: &ClusterConfig,
) -> Result<ClusterReport, MapError> {
    let chain = map.chain();
    let mut report = ClusterReport {
        before: chain.len(),
        ..Default::default()
    };
    // erased id -> (representative, pose of erased keyframe in representative's frame)
    let mut absorbed: HashMap<u64, (u64, Pose3)> = HashMap::new();
    let mut pos = 0;
    while pos + 1 < chain.len() {
        let rep = chain[pos];
        let rep_kf = map.keyframe(rep).ok_or(MapError::NotAlive(rep))?;
        if rep_kf.cluster_link.is_some() {
            pos += 1;
            continue;
        }
        let Some(rep_bow) = rep_kf.bow.clone() else {
            pos += 1;
            continue;
        };
        let mut end = pos + 1;
        // the tail is never merged so the final goal survives
        while end + 1 < chain.len() {
            let kf = map
                .keyframe(chain[end])
                .ok_or(MapError::NotAlive(chain[end]))?;
            let similar = kf.cluster_link.is_none()
                && kf
                    .bow
                    .as_ref()
                    .is_some_and(|b| similarity(&rep_bow, b) >= cfg.tau_cluster);
            if !similar {
                break;
            }
            end += 1;
        }
        if end == pos + 1 {
            pos += 1;
            continue;
        }
        let stop = chain[end];
        let to_stop = map.chain_transform(rep, stop)?;
        let mut features = rep_kf.features.clone();
        let mut points = rep_kf.points.clone();
        let mut attached = Vec::new();
        let mut moved_loop = None;
        for &m in &chain[pos + 1..end] {
            let rel = map.chain_transform(rep, m)?;
            let kf = map.keyframe(m).unwrap();
            for (f, p) in kf.features.iter().zip(&kf.points) {
                let q = rel.transform_point(p);
                if q.z <= Z_MIN {
                    continue;
                }
                let px = intrinsics.project_unchecked(&q);
                if !intrinsics.contains(&px) {
                    continue;
                }
                features.push(Feature::new(px.x, px.y, f.descriptor).quantized());
                points.push(q);
            }
            for att in &kf.attached {
                attached.push(LowLevelFrame {
                    anchor_offset: rel.compose(&att.anchor_offset),
                    ..att.clone()
                });
            }
            if let Some(l) = kf.loop_link {
                if moved_loop.is_none() && l.target < rep {
                    moved_loop = Some(Link {
                        target: l.target,
                        rel: l.rel.compose(&rel.inverse()),
                    });
                }
            }
            absorbed.insert(m, (rep, rel));
        }
        dedupe_and_cap(&mut features, &mut points, cfg);
        let descs: Vec<Descriptor> = features.iter().map(|f| f.descriptor).collect();
        let bow = vocab.to_bow(&descs).ok();
        for &m in &chain[pos + 1..end] {
            map.erase(m);
        }
        let kf = map.keyframe_mut(rep).unwrap();
        debug!("keyframe {rep} absorbs {} successors", end - pos - 1);
        kf.features = features;
        kf.points = points;
        kf.bow = bow;
        kf.attached.extend(attached);
        if kf.loop_link.is_none() {
            kf.loop_link = moved_loop;
        }
        kf.cluster_link = Some(Link {
            target: stop,
            rel: to_stop,
        });
        report.clusters += 1;
        pos = end;
    }
    // loops pointing at erased keyframes now point at their representative
    let ids: Vec<u64> = map.alive_ids().collect();
    for id in ids {
        let kf = map.keyframe_mut(id).unwrap();
        if let Some(l) = kf.loop_link {
            if let Some((rep, rel)) = absorbed.get(&l.target) {
                kf.loop_link = Some(Link {
                    target: *rep,
                    rel: rel.compose(&l.rel),
                });
            }
        }
    }
    map.compact();
    report.after = map.len();
    Ok(report)
}

/// A successful match used to bracket a run of unmatched frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketMatch {
    pub keyframe: u64,
    /// Live camera pose in the keyframe's frame.
    pub pose: Pose3,
    pub time: f64,
}

/// Pose of `s` in `a`'s frame, for any two chain keyframes.
fn relative_on_chain(map: &TopoMetricMap, a: u64, s: u64) -> Result<Pose3, MapError> {
    if s >= a {
        map.chain_transform(a, s)
    } else {
        Ok(map.chain_transform(s, a)?.inverse())
    }
}

/// Attaches frames recorded between two successful matches to their nearest
/// keyframe in the bracketed segment. `unmatched` must start with the frame
/// right after match `a`; poses follow from `a` by composed odometry.
/// Returns `(index into unmatched, keyframe)` for every attached frame.
pub fn expand_map(
    map: &mut TopoMetricMap,
    unmatched: &[Frame],
    a: &BracketMatch,
    b: &BracketMatch,
    vocab: Option<&Vocabulary>,
    cfg: &ExpansionConfig,
) -> Result<Vec<(usize, u64)>, MapError> {
    if unmatched.is_empty() || b.time - a.time < cfg.min_match_interval {
        return Ok(Vec::new());
    }
    let (lo, hi) = (a.keyframe.min(b.keyframe), a.keyframe.max(b.keyframe));
    let segment: Vec<(u64, Pose3)> = map
        .chain()
        .into_iter()
        .filter(|id| (lo..=hi).contains(id))
        .map(|s| relative_on_chain(map, a.keyframe, s).map(|r| (s, r)))
        .collect::<Result<_, _>>()?;
    if segment.is_empty() {
        return Ok(Vec::new());
    }
    let mut pose = a.pose;
    let mut added = Vec::new();
    for (i, frame) in unmatched.iter().enumerate() {
        pose = pose.compose(&frame.odom_delta);
        if frame.features.is_empty() {
            continue;
        }
        let (best, offset) = segment
            .iter()
            .map(|(s, rel)| (*s, rel.inverse().compose(&pose)))
            .min_by(|x, y| x.1.translation.norm().total_cmp(&y.1.translation.norm()))
            .unwrap();
        let bow = match (cfg.attach_bow, vocab) {
            (true, Some(v)) => v.to_bow(&frame.descriptors()).ok(),
            _ => None,
        };
        map.keyframe_mut(best)
            .ok_or(MapError::NotAlive(best))?
            .attached
            .push(LowLevelFrame {
                features: frame.features.iter().map(Feature::quantized).collect(),
                points: frame.points_cam.clone(),
                anchor_offset: offset,
                bow,
            });
        added.push((i, best));
    }
    debug!(
        "expansion attached {} frames between keyframes {lo} and {hi}",
        added.len()
    );
    Ok(added)
}
