//! Windowed frame-to-keyframe matching and the correspondence grid filter.

use nalgebra::{Vector2, Vector3};

use crate::descriptor::Feature;
use crate::map::Keyframe;
use crate::scalar::Real;

/// A 3-D map point (keyframe camera frame) paired with a live pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<T: Real> {
    pub point: Vector3<T>,
    pub pixel: Vector2<T>,
    pub hamming: u32,
    /// Index of the map feature the point came from.
    pub map_index: usize,
    /// Index of the live feature the pixel came from.
    pub live_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Search window radius around each map feature, pixels.
    pub gamma: f64,
    /// Largest accepted descriptor distance.
    pub tau_hamming: u32,
    pub grid_cols: u32,
    pub grid_rows: u32,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            gamma: 40.0,
            tau_hamming: 40,
            grid_cols: 8,
            grid_rows: 6,
        }
    }
}

/// Features and keyframe-frame points to match against: the keyframe's own
/// set, or one attachment with its points moved into the keyframe's frame.
pub fn match_target(kf: &Keyframe, attachment: Option<usize>) -> (Vec<Feature>, Vec<Vector3<f64>>) {
    match attachment.and_then(|i| kf.attached.get(i)) {
        None => (kf.features.clone(), kf.points.clone()),
        Some(att) => (
            att.features.clone(),
            att.points
                .iter()
                .map(|p| att.anchor_offset.transform_point(p))
                .collect(),
        ),
    }
}

/// For every map feature, picks the closest-descriptor live feature inside
/// the `gamma` window. Live features are claimed at most once; earlier map
/// features win and later ones fall back to their next-best candidate.
pub fn match_features(
    map_features: &[Feature],
    map_points: &[Vector3<f64>],
    live: &[Feature],
    cfg: &MatchConfig,
) -> Vec<Correspondence<f64>> {
    let gamma_sq = cfg.gamma * cfg.gamma;
    let mut claimed = vec![false; live.len()];
    let mut out = Vec::new();
    for (mi, (mf, point)) in map_features.iter().zip(map_points).enumerate() {
        let mut best: Option<(u32, usize)> = None;
        for (li, lf) in live.iter().enumerate() {
            if claimed[li] || lf.pixel_distance_sq(mf.u, mf.v) >= gamma_sq {
                continue;
            }
            let h = mf.descriptor.hamming(&lf.descriptor);
            if h <= cfg.tau_hamming && best.is_none_or(|(bh, _)| h < bh) {
                best = Some((h, li));
            }
        }
        if let Some((hamming, li)) = best {
            claimed[li] = true;
            out.push(Correspondence {
                point: *point,
                pixel: Vector2::new(live[li].u, live[li].v),
                hamming,
                map_index: mi,
                live_index: li,
            });
        }
    }
    out
}

/// Keeps at most one correspondence per image cell: the lowest Hamming
/// distance, ties to the lowest map index. Output is in row-major cell order.
pub fn grid_filter<T: Real>(
    correspondences: &[Correspondence<T>],
    cfg: &MatchConfig,
    width: u32,
    height: u32,
) -> Vec<Correspondence<T>> {
    let cols = cfg.grid_cols.max(1) as usize;
    let rows = cfg.grid_rows.max(1) as usize;
    let cell_w = width as f64 / cols as f64;
    let cell_h = height as f64 / rows as f64;
    let mut cells: Vec<Option<Correspondence<T>>> = vec![None; cols * rows];
    for c in correspondences {
        let cx = ((c.pixel.x.to_f64_lossy() / cell_w).floor().max(0.0) as usize).min(cols - 1);
        let cy = ((c.pixel.y.to_f64_lossy() / cell_h).floor().max(0.0) as usize).min(rows - 1);
        let slot = &mut cells[cy * cols + cx];
        let better = match slot {
            None => true,
            Some(cur) => (c.hamming, c.map_index) < (cur.hamming, cur.map_index),
        };
        if better {
            *slot = Some(*c);
        }
    }
    cells.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::Descriptor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(n: usize, seed: u64) -> (Vec<Feature>, Vec<Vector3<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = (0..n)
            .map(|_| {
                Feature::new(
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                    Descriptor::random(&mut rng),
                )
            })
            .collect();
        let pts = (0..n).map(|i| Vector3::new(i as f64, 0.0, 2.0)).collect();
        (feats, pts)
    }

    #[test]
    fn identical_frame_matches_itself() {
        let (feats, pts) = scene(30, 1);
        let out = match_features(&feats, &pts, &feats, &MatchConfig::default());
        assert_eq!(out.len(), 30);
        for c in &out {
            assert_eq!(c.hamming, 0);
            assert_eq!(c.map_index, c.live_index);
            assert_eq!(
                c.pixel,
                Vector2::new(feats[c.map_index].u, feats[c.map_index].v)
            );
        }
    }

    #[test]
    fn displaced_feature_is_not_matched() {
        let cfg = MatchConfig::default();
        let (feats, pts) = scene(1, 2);
        let mut live = feats.clone();
        live[0].u += 2.0 * cfg.gamma;
        assert!(match_features(&feats, &pts, &live, &cfg).is_empty());
    }

    // Exhaustive reference: every (map, live) pair, sequential claiming.
    fn brute_force(
        map: &[Feature],
        live: &[Feature],
        cfg: &MatchConfig,
    ) -> Vec<(usize, usize, u32)> {
        let mut pairs = Vec::new();
        let mut used = std::collections::HashSet::new();
        for (i, m) in map.iter().enumerate() {
            let mut cands: Vec<(u32, usize)> = live
                .iter()
                .enumerate()
                .filter(|(_, l)| ((l.u - m.u).powi(2) + (l.v - m.v).powi(2)).sqrt() < cfg.gamma)
                .map(|(j, l)| (m.descriptor.hamming(&l.descriptor), j))
                .filter(|(h, _)| *h <= cfg.tau_hamming)
                .collect();
            cands.sort();
            if let Some((h, j)) = cands.into_iter().find(|(_, j)| !used.contains(j)) {
                used.insert(j);
                pairs.push((i, j, h));
            }
        }
        pairs
    }

    #[test]
    fn matches_exhaustive_search() {
        let cfg = MatchConfig {
            gamma: 60.0,
            ..MatchConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..50 {
            let (map, pts) = scene(20, 100 + trial);
            // live view: perturbed copies plus distractors sharing descriptors
            let mut live: Vec<Feature> = map
                .iter()
                .map(|f| {
                    Feature::new(
                        f.u + rng.random_range(-50.0..50.0),
                        f.v + rng.random_range(-50.0..50.0),
                        f.descriptor.with_bit_flips(0.08, &mut rng),
                    )
                })
                .collect();
            for f in map.iter().take(6) {
                live.push(Feature::new(
                    f.u + 5.0,
                    f.v,
                    f.descriptor.with_bit_flips(0.05, &mut rng),
                ));
            }
            let got: Vec<_> = match_features(&map, &pts, &live, &cfg)
                .iter()
                .map(|c| (c.map_index, c.live_index, c.hamming))
                .collect();
            assert_eq!(got, brute_force(&map, &live, &cfg));
        }
    }

    #[test]
    fn live_features_are_claimed_once() {
        let d = Descriptor([5, 6, 7, 8]);
        let map = vec![Feature::new(100.0, 100.0, d), Feature::new(102.0, 100.0, d)];
        let pts = vec![Vector3::zeros(); 2];
        let mut near = d;
        near.set_bit(0, !near.bit(0));
        let live = vec![
            Feature::new(101.0, 100.0, d),
            Feature::new(110.0, 100.0, near),
        ];
        let out = match_features(&map, &pts, &live, &MatchConfig::default());
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].map_index, out[0].live_index), (0, 0));
        assert_eq!(
            (out[1].map_index, out[1].live_index, out[1].hamming),
            (1, 1, 1)
        );
    }

    fn corr(u: f64, v: f64, hamming: u32, map_index: usize) -> Correspondence<f64> {
        Correspondence {
            point: Vector3::zeros(),
            pixel: Vector2::new(u, v),
            hamming,
            map_index,
            live_index: map_index,
        }
    }

    #[test]
    fn grid_filter_keeps_one_per_cell_row_major() {
        let cfg = MatchConfig::default();
        let input = vec![
            corr(630.0, 470.0, 3, 0),
            corr(10.0, 10.0, 5, 1),
            corr(90.0, 10.0, 1, 2),
        ];
        let out = grid_filter(&input, &cfg, 640, 480);
        let idx: Vec<usize> = out.iter().map(|c| c.map_index).collect();
        assert_eq!(idx, vec![1, 2, 0]);
        assert!(grid_filter::<f64>(&[], &cfg, 640, 480).is_empty());
    }

    #[test]
    fn grid_filter_picks_cell_minimum() {
        let cfg = MatchConfig::default();
        let input: Vec<_> = (0..10)
            .map(|i| corr(5.0 + i as f64, 5.0, [9, 7, 4, 8, 4, 6, 5, 9, 10, 11][i], i))
            .collect();
        let out = grid_filter(&input, &cfg, 640, 480);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].hamming, out[0].map_index), (4, 2));
    }

    #[test]
    fn grid_filter_output_is_bounded_and_cellwise_minimal() {
        let cfg = MatchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input: Vec<_> = (0..400)
            .map(|i| {
                corr(
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                    rng.random_range(0..40),
                    i,
                )
            })
            .collect();
        let out = grid_filter(&input, &cfg, 640, 480);
        assert!(out.len() <= 48);
        for c in &out {
            let cell = |x: &Correspondence<f64>| {
                ((x.pixel.x / 80.0) as usize, (x.pixel.y / 80.0) as usize)
            };
            let min = input
                .iter()
                .filter(|x| cell(x) == cell(c))
                .map(|x| x.hamming)
                .min()
                .unwrap();
            assert_eq!(c.hamming, min);
        }
    }
}
