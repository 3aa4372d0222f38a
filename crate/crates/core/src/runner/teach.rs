//! Scripted teach drive: waypoint follower, keyframe recording, vocabulary
//! training and teach-time loop links.

use log::{debug, info};
use rand_chacha::ChaCha8Rng;

use super::scenario::{route_length, Scenario};
use super::{rng_stream, RunError};
use crate::descriptor::{Descriptor, Feature};
use crate::geometry::{CameraIntrinsics, Pose2};
use crate::map::{TeachRecorder, TopoMetricMap};
use crate::matching::{grid_filter, match_features, match_target, MatchConfig};
use crate::place_recognition::{query_loops, Exclusion, LoopCandidate, Vocabulary};
use crate::pose_solver::{solve, SolverConfig};
use crate::sim::{step_dynamics, RobotState};
use crate::Pose3;

/// True robot pose at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub pose: Pose2,
}

/// True base pose at which a keyframe was recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframePose {
    pub id: u64,
    pub t: f64,
    pub pose: Pose2,
}

/// Pure-pursuit follower along a polyline.
#[derive(Debug, Clone)]
pub struct PathFollower {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    progress: f64,
    lookahead: f64,
}

impl PathFollower {
    pub fn new(points: &[[f64; 2]], lookahead: f64) -> Self {
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
        }
        Self {
            points: points.to_vec(),
            cumulative,
            progress: 0.0,
            lookahead,
        }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        let i = self
            .cumulative
            .partition_point(|&c| c <= s)
            .clamp(1, self.points.len() - 1);
        let (a, b) = (self.points[i - 1], self.points[i]);
        let seg = self.cumulative[i] - self.cumulative[i - 1];
        let f = if seg > 0.0 {
            (s - self.cumulative[i - 1]) / seg
        } else {
            0.0
        };
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
    }

    /// Closest path parameter not behind the current progress and within
    /// two lookaheads of it.
    fn project(&self, p: [f64; 2]) -> f64 {
        let window = self.progress + 2.0 * self.lookahead;
        let mut best = (f64::INFINITY, self.progress);
        for i in 1..self.points.len() {
            if self.cumulative[i] < self.progress || self.cumulative[i - 1] > window {
                continue;
            }
            let (a, b) = (self.points[i - 1], self.points[i]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let f = if len2 > 0.0 {
                (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let s = (self.cumulative[i - 1] + f * len2.sqrt()).clamp(self.progress, window);
            let q = self.point_at(s);
            let dist = (q[0] - p[0]).hypot(q[1] - p[1]);
            if dist < best.0 {
                best = (dist, s);
            }
        }
        best.1
    }

    /// `(v, omega)` toward the lookahead point, `None` once the end is reached.
    pub fn command(&mut self, pose: &Pose2, speed: f64, dt: f64) -> Option<(f64, f64)> {
        self.progress = self.project(pose.position());
        let end = *self.points.last().unwrap();
        let end_local = pose.inverse().transform_point(end);
        let d_end = end_local[0].hypot(end_local[1]);
        let remaining = self.length() - self.progress;
        if remaining < self.lookahead && (d_end < 0.01 || end_local[0] <= 0.0) {
            return None;
        }
        let target = pose
            .inverse()
            .transform_point(self.point_at(self.progress + self.lookahead));
        let ld = target[0].hypot(target[1]).max(1e-9);
        let alpha = target[1].atan2(target[0]);
        let v = if remaining < self.lookahead {
            speed.min(d_end / dt)
        } else {
            speed
        };
        Some((v, 2.0 * v * alpha.sin() / ld))
    }
}

/// Successful frame-to-map match.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub candidate: LoopCandidate,
    /// Live camera pose in the matched keyframe's frame.
    pub pose: Pose3,
    pub used: usize,
    pub mean_reproj_px: f64,
}

/// Windowed matching, grid filter and pose solve against one candidate.
pub fn try_candidate(
    map: &TopoMetricMap,
    cand: &LoopCandidate,
    live: &[Feature],
    intrinsics: &CameraIntrinsics<f64>,
    matching: &MatchConfig,
    solver: &SolverConfig<f64>,
) -> Option<MatchOutcome> {
    let kf = map.keyframe(cand.keyframe)?;
    let (features, points) = match_target(kf, cand.attachment);
    let raw = match_features(&features, &points, live, matching);
    let filtered = grid_filter(&raw, matching, intrinsics.width, intrinsics.height);
    match solve(&filtered, intrinsics, solver) {
        Ok(r) if r.converged => Some(MatchOutcome {
            candidate: *cand,
            pose: r.pose,
            used: r.used,
            mean_reproj_px: r.mean_reproj_px,
        }),
        Ok(r) => {
            debug!(
                "keyframe {} rejected: mean reprojection {:.2} px",
                cand.keyframe, r.mean_reproj_px
            );
            None
        }
        Err(e) => {
            debug!("keyframe {} rejected: {e}", cand.keyframe);
            None
        }
    }
}

#[derive(Debug, Clone)]
pub struct TeachOutput {
    pub map: TopoMetricMap,
    pub vocab: Vocabulary,
    pub path: Vec<PathSample>,
    pub keyframes: Vec<KeyframePose>,
    pub loops: usize,
}

impl TeachOutput {
    /// Final true teach position.
    pub fn end_point(&self) -> [f64; 2] {
        self.path.last().map_or([0.0, 0.0], |s| s.pose.position())
    }
}

/// Drives the teach route and builds the map.
pub fn run_teach(s: &Scenario) -> Result<TeachOutput, RunError> {
    s.validate()?;
    let world = s.teach_world()?;
    let rig = s.rig()?;
    let odometry = s.odometry();
    let dt = s.dt();
    let mount = rig.camera.mounting;
    let mount_inv = mount.inverse();
    let mut cam_rng: ChaCha8Rng = rng_stream(s.seed, 0, 1);
    let mut odo_rng: ChaCha8Rng = rng_stream(s.seed, 0, 2);
    let timeout = s
        .teach
        .timeout
        .unwrap_or(3.0 * route_length(&s.teach.waypoints) / s.teach.speed + 30.0);

    let mut state = RobotState {
        pose: s.start_pose(),
        time: 0.0,
    };
    let mut follower = PathFollower::new(&s.teach.waypoints, s.teach.lookahead);
    let mut recorder = TeachRecorder::new(s.teach.keyframe_cadence);
    let mut raw = TopoMetricMap::new();
    let mut keyframes = Vec::new();
    let mut path = vec![PathSample {
        t: 0.0,
        pose: state.pose,
    }];

    let mut tick = 0u64;
    let mut frame = world.sense_camera(&state, &rig.camera, &mut cam_rng);
    if let Some(id) = recorder.insert_keyframe(&mut raw, &frame) {
        keyframes.push(KeyframePose {
            id,
            t: 0.0,
            pose: state.pose,
        });
    }
    while let Some((v, w)) = follower.command(&state.pose, s.teach.speed, dt) {
        if state.time > timeout {
            return Err(RunError::Stuck { time: state.time });
        }
        let next = step_dynamics(&state, v, w, dt).state;
        let measured = odometry.odometry_step(&state.pose.between(&next.pose), dt, &mut odo_rng);
        state = next;
        tick += 1;
        frame = world.sense_camera(&state, &rig.camera, &mut cam_rng);
        frame.id = tick;
        frame.odom_delta = mount_inv.compose(&measured).compose(&mount);
        if let Some(id) = recorder.insert_keyframe(&mut raw, &frame) {
            keyframes.push(KeyframePose {
                id,
                t: state.time,
                pose: state.pose,
            });
        }
        path.push(PathSample {
            t: state.time,
            pose: state.pose,
        });
    }
    if let Some(id) = recorder.finish(&mut raw, &frame) {
        keyframes.push(KeyframePose {
            id,
            t: state.time,
            pose: state.pose,
        });
    }
    if raw.is_empty() {
        return Err(RunError::EmptyMap);
    }

    let descriptors: Vec<Descriptor> = raw.keyframes().flat_map(|k| k.descriptors()).collect();
    let vocab = Vocabulary::train(
        &descriptors,
        s.vocabulary.branching,
        s.vocabulary.depth,
        s.vocabulary.seed,
    )?;

    // replay keyframes in order so each loop query only sees earlier ones
    let mut map = TopoMetricMap::new();
    let mut loops = 0;
    for kf in raw.keyframes() {
        let bow = vocab.to_bow(&kf.descriptors()).ok();
        let cands = bow
            .as_ref()
            .map(|b| {
                query_loops(
                    &map,
                    b,
                    s.recognition.tau_loop,
                    Exclusion::RecentKeyframes(s.recognition.teach_exclusion),
                )
            })
            .unwrap_or_default();
        let id = map.push_keyframe(kf.t_prev, kf.features.clone(), kf.points.clone());
        map.keyframe_mut(id).unwrap().bow = bow;
        for c in cands.iter().take(s.recognition.candidates) {
            if let Some(m) = try_candidate(
                &map,
                c,
                &kf.features,
                &rig.camera.intrinsics,
                &s.matching,
                &s.solver,
            ) {
                map.attach_loop(id, c.keyframe, m.pose)?;
                loops += 1;
                debug!("teach loop {id} -> {}", c.keyframe);
                break;
            }
        }
    }
    map.vocab_hash = vocab.content_hash();
    info!(
        "teach: {} ticks, {} keyframes, {} loop links, {} words",
        tick,
        map.len(),
        loops,
        vocab.word_count()
    );
    Ok(TeachOutput {
        map,
        vocab,
        path,
        keyframes,
        loops,
    })
}
