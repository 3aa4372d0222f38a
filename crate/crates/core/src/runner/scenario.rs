//! Scenario files: one TOML document drives teach, compress and repeat.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::descriptor::Descriptor;
use crate::geometry::{CameraIntrinsics, Pose2};
use crate::map_ops::{ClusterConfig, ExpansionConfig};
use crate::matching::MatchConfig;
use crate::planner::PlannerConfig;
use crate::pose_solver::SolverConfig;
use crate::sim::{
    band_landmarks, forward_camera_mounting, scatter_landmarks, CameraRig, Landmark, LaserRig,
    Obstacle, OdometryModel, SensorRig, World, WorldError,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tick_rate")]
    pub tick_rate: f64,
    /// Ticks between repeat-time match attempts.
    #[serde(default = "default_match_period")]
    pub match_period: usize,
    #[serde(default)]
    pub world: WorldSpec,
    pub teach: TeachSpec,
    #[serde(default)]
    pub repeat: RepeatSpec,
    #[serde(default)]
    pub rig: RigSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub vocabulary: VocabularySpec,
    #[serde(default)]
    pub recognition: RecognitionSpec,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub solver: SolverConfig<f64>,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub expansion: ExpansionConfig,
    #[serde(default)]
    pub goals: GoalSpec,
    #[serde(default)]
    pub planner: PlannerConfig,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_tick_rate() -> f64 {
    10.0
}
fn default_match_period() -> usize {
    5
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    /// Walled rectangle `[xmin, ymin, xmax, ymax]` visible to the laser.
    pub bounds: Option<[f64; 4]>,
    #[serde(default)]
    pub scatter: Vec<ScatterSpec>,
    #[serde(default)]
    pub band: Vec<BandSpec>,
    /// Explicit landmark positions `[x, y, z]`.
    #[serde(default)]
    pub landmarks: Vec<[f64; 3]>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub churn: Vec<ChurnSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterSpec {
    pub region: [f64; 4],
    pub count: usize,
    #[serde(default = "default_z")]
    pub z: [f64; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub polyline: Vec<[f64; 2]>,
    /// Lateral distance range from the polyline, both sides.
    pub offset: [f64; 2],
    /// Landmarks per meter per side.
    pub density: f64,
    #[serde(default = "default_z")]
    pub z: [f64; 2],
}

fn default_z() -> [f64; 2] {
    [0.0, 2.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleSpec {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub circle: Option<CircleSpec>,
    pub polygon: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub spawn_time: f64,
    /// Landmarks painted on the obstacle surface.
    #[serde(default)]
    pub texture: usize,
    #[serde(default = "default_texture_z")]
    pub texture_z: [f64; 2],
}

fn default_texture_z() -> [f64; 2] {
    [0.1, 1.5]
}

/// Landmarks inside `region` switch off at time `at`; with `replace`, the
/// same number of fresh landmarks switch on there.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnSpec {
    pub region: [f64; 4],
    pub at: f64,
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default)]
    pub replace: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeachSpec {
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default = "default_lookahead")]
    pub lookahead: f64,
    #[serde(default = "default_cadence")]
    pub keyframe_cadence: usize,
    /// Seconds; defaults to three times the nominal driving time plus 30 s.
    pub timeout: Option<f64>,
}

fn default_speed() -> f64 {
    0.3
}
fn default_lookahead() -> f64 {
    0.5
}
fn default_cadence() -> usize {
    crate::map::DEFAULT_KEYFRAME_CADENCE
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepeatSpec {
    /// Lateral spawn offset from the teach start, meters (sign drawn per seed).
    pub spawn_lateral: f64,
    /// Heading spawn offset, degrees (sign drawn per seed).
    pub spawn_heading_deg: f64,
    /// Explicit spawn pose `[x, y, theta_deg]`, overriding the offsets.
    pub spawn: Option<[f64; 3]>,
    pub max_time: Option<f64>,
    pub lost_timeout: f64,
    pub success_radius: f64,
    pub seed: u64,
    /// Scripted path: the robot follows it instead of the planner.
    pub path: Option<Vec<[f64; 2]>>,
    pub path_speed: f64,
    /// Extra world content present only during repeat.
    pub world: WorldSpec,
}

impl Default for RepeatSpec {
    fn default() -> Self {
        Self {
            spawn_lateral: 0.2,
            spawn_heading_deg: 5.0,
            spawn: None,
            max_time: None,
            lost_timeout: 30.0,
            success_radius: 0.5,
            seed: 0,
            path: None,
            path_speed: 0.3,
            world: WorldSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub max_range: f64,
    /// Mounting: forward offset and height on the base.
    pub mount_x: f64,
    pub mount_z: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            fx: 380.0,
            fy: 380.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            fov_deg: 90.0,
            max_range: 8.0,
            mount_x: 0.2,
            mount_z: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaserSpec {
    pub beams: usize,
    pub span_deg: f64,
    pub max_range: f64,
    pub mount_x: f64,
}

impl Default for LaserSpec {
    fn default() -> Self {
        Self {
            beams: 360,
            span_deg: 270.0,
            max_range: 10.0,
            mount_x: 0.15,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSpec {
    pub camera: CameraSpec,
    pub laser: LaserSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_px: f64,
    pub sigma_depth: f64,
    pub p_flip: f64,
    pub v_bias_ppm: f64,
    pub w_bias_ppm: f64,
    pub v_sigma: f64,
    pub w_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_px: 0.5,
            sigma_depth: 0.01,
            p_flip: 0.02,
            v_bias_ppm: 0.0,
            w_bias_ppm: 0.0,
            v_sigma: 0.0,
            w_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabularySpec {
    pub branching: u32,
    pub depth: u32,
    pub seed: u64,
}

impl Default for VocabularySpec {
    fn default() -> Self {
        Self {
            branching: 8,
            depth: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognitionSpec {
    pub tau_loop: f64,
    /// Most recent keyframes skipped by teach-time loop queries.
    pub teach_exclusion: usize,
    /// Ranked candidates tried per match attempt.
    pub candidates: usize,
}

impl Default for RecognitionSpec {
    fn default() -> Self {
        Self {
            tau_loop: 0.35,
            teach_exclusion: 20,
            candidates: 3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalSpec {
    pub arrival_radius: f64,
    pub terminal_radius: f64,
    pub max_bearing_deg: f64,
}

impl Default for GoalSpec {
    fn default() -> Self {
        Self {
            arrival_radius: 0.3,
            terminal_radius: 0.05,
            max_bearing_deg: 60.0,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.teach.waypoints.len() < 2 {
            return invalid("teach route needs at least two waypoints");
        }
        if route_length(&self.teach.waypoints) <= 0.0 {
            return invalid("teach route has zero length");
        }
        if !(5.0..=100.0).contains(&self.tick_rate) {
            return invalid(format!("tick_rate {} outside [5, 100] Hz", self.tick_rate));
        }
        if self.match_period == 0 {
            return invalid("match_period must be at least 1");
        }
        if self.teach.speed <= 0.0 || self.teach.lookahead <= 0.0 {
            return invalid("teach speed and lookahead must be positive");
        }
        if self.planner.candidates < 3 || self.planner.candidates.is_multiple_of(2) {
            return invalid("planner.candidates must be odd and at least 3");
        }
        if let Some(p) = &self.repeat.path {
            if p.len() < 2 || route_length(p) <= 0.0 {
                return invalid("repeat.path needs at least two distinct points");
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn rig(&self) -> Result<SensorRig, ScenarioError> {
        let c = &self.rig.camera;
        let intrinsics = CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let l = &self.rig.laser;
        Ok(SensorRig {
            camera: CameraRig {
                intrinsics,
                mounting: forward_camera_mounting(c.mount_x, c.mount_z),
                max_range: c.max_range,
                fov: c.fov_deg.to_radians(),
                sigma_px: self.noise.sigma_px,
                sigma_depth: self.noise.sigma_depth,
                p_flip: self.noise.p_flip,
            },
            laser: LaserRig {
                beam_count: l.beams,
                span: l.span_deg.to_radians(),
                max_range: l.max_range,
                mounting: Pose2::new(l.mount_x, 0.0, 0.0),
            },
        })
    }

    pub fn odometry(&self) -> OdometryModel {
        OdometryModel {
            v_bias_ppm: self.noise.v_bias_ppm,
            w_bias_ppm: self.noise.w_bias_ppm,
            v_sigma: self.noise.v_sigma,
            w_sigma: self.noise.w_sigma,
            seed: self.seed,
        }
    }

    /// Pose at the first waypoint facing the second.
    pub fn start_pose(&self) -> Pose2 {
        let [a, b] = [self.teach.waypoints[0], self.teach.waypoints[1]];
        Pose2::new(a[0], a[1], (b[1] - a[1]).atan2(b[0] - a[0]))
    }

    /// World as seen while teaching.
    pub fn teach_world(&self) -> Result<World, ScenarioError> {
        let mut world = World {
            bounds: self.world.bounds,
            ..World::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        add_content(&mut world, &self.world, &mut rng)?;
        world.validate()?;
        Ok(world)
    }

    /// Teach world plus repeat-only content.
    pub fn repeat_world(&self) -> Result<World, ScenarioError> {
        let mut world = self.teach_world()?;
        if let Some(b) = self.repeat.world.bounds {
            world.bounds = Some(b);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(7);
        add_content(&mut world, &self.repeat.world, &mut rng)?;
        world.validate()?;
        Ok(world)
    }
}

pub fn route_length(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

fn in_region(r: &[f64; 4], x: f64, y: f64) -> bool {
    (r[0]..=r[2]).contains(&x) && (r[1]..=r[3]).contains(&y)
}

fn add_content(
    world: &mut World,
    spec: &WorldSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(), ScenarioError> {
    for s in &spec.scatter {
        let first = world.next_landmark_id();
        world.landmarks.extend(scatter_landmarks(
            s.region,
            s.count,
            (s.z[0], s.z[1]),
            first,
            rng,
        ));
    }
    for b in &spec.band {
        let first = world.next_landmark_id();
        world.landmarks.extend(band_landmarks(
            &b.polyline,
            (b.offset[0], b.offset[1]),
            b.density,
            (b.z[0], b.z[1]),
            first,
            rng,
        ));
    }
    for p in &spec.landmarks {
        let id = world.next_landmark_id();
        world.landmarks.push(Landmark {
            id,
            position: nalgebra::Vector3::new(p[0], p[1], p[2]),
            descriptor: Descriptor::random(rng),
            active_interval: (0.0, f64::INFINITY),
        });
    }
    for o in &spec.obstacles {
        let obstacle = match (&o.circle, &o.polygon) {
            (Some(c), None) => Obstacle::circle(c.center, c.radius, o.spawn_time)?,
            (None, Some(p)) => Obstacle::polygon(p.clone(), o.spawn_time)?,
            _ => return invalid("an obstacle needs exactly one of `circle` or `polygon`"),
        };
        if o.texture > 0 {
            for q in obstacle.boundary_samples(o.texture, 0.02) {
                let id = world.next_landmark_id();
                world.landmarks.push(Landmark {
                    id,
                    position: nalgebra::Vector3::new(
                        q[0],
                        q[1],
                        rng.random_range(o.texture_z[0]..=o.texture_z[1]),
                    ),
                    descriptor: Descriptor::random(rng),
                    active_interval: (o.spawn_time, f64::INFINITY),
                });
            }
        }
        world.obstacles.push(obstacle);
    }
    for c in &spec.churn {
        let mut switched = 0;
        for l in &mut world.landmarks {
            if in_region(&c.region, l.position.x, l.position.y)
                && l.active_interval.1 > c.at
                && rng.random_bool(c.fraction.clamp(0.0, 1.0))
            {
                l.active_interval.1 = c.at.max(l.active_interval.0);
                switched += 1;
            }
        }
        if c.replace && switched > 0 {
            let first = world.next_landmark_id();
            let mut fresh = scatter_landmarks(c.region, switched, (0.0, 2.0), first, rng);
            for l in &mut fresh {
                l.active_interval = (c.at, f64::INFINITY);
            }
            world.landmarks.extend(fresh);
        }
    }
    Ok(())
}
