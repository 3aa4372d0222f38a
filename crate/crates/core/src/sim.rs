//! Deterministic 2.5-D simulation world.
//!
//! Landmarks are 3-D points with binary descriptors. Obstacles are vertical
//! prisms described by their planar footprint; they occlude the camera and
//! reflect laser beams. The robot is a unicycle driven by `(v, omega)`.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::descriptor::{Descriptor, Feature};
use crate::geometry::{CameraIntrinsics, Pose2, Z_MIN};
use crate::Pose3;

/// Command limits enforced by [`step_dynamics`].
pub const MAX_LINEAR_SPEED: f64 = 1.0;
pub const MAX_ANGULAR_SPEED: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
    pub descriptor: Descriptor,
    /// Active over `[t_start, t_end]`, seconds.
    pub active_interval: (f64, f64),
}

impl Landmark {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.active_interval.0 && t <= self.active_interval.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    /// Convex polygon, vertices in either winding order.
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub shape: Shape,
    pub spawn_time: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WorldError {
    #[error("obstacle radius must be positive")]
    BadRadius,
    #[error("polygon obstacles need at least three vertices and must be convex")]
    BadPolygon,
    #[error("landmark {0} has t_start > t_end")]
    BadInterval(u64),
    #[error("duplicate landmark id {0}")]
    DuplicateLandmark(u64),
}

impl Obstacle {
    pub fn circle(center: [f64; 2], radius: f64, spawn_time: f64) -> Result<Self, WorldError> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(WorldError::BadRadius);
        }
        Ok(Self {
            shape: Shape::Circle { center, radius },
            spawn_time,
        })
    }

    pub fn polygon(vertices: Vec<[f64; 2]>, spawn_time: f64) -> Result<Self, WorldError> {
        if vertices.len() < 3 || !is_convex(&vertices) {
            return Err(WorldError::BadPolygon);
        }
        Ok(Self {
            shape: Shape::Polygon { vertices },
            spawn_time,
        })
    }

    pub fn is_spawned(&self, t: f64) -> bool {
        t >= self.spawn_time
    }

    /// Whether the open segment `a -> b` passes through the obstacle interior.
    pub fn blocks_segment(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        match &self.shape {
            Shape::Circle { center, radius } => segment_point_distance(a, b, *center) < *radius,
            Shape::Polygon { vertices } => {
                point_in_convex(vertices, a)
                    || point_in_convex(vertices, b)
                    || polygon_edges(vertices).any(|(p, q)| segments_cross(a, b, p, q))
            }
        }
    }

    /// Distance along the ray to the first boundary hit, if any.
    pub fn ray_hit(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        match &self.shape {
            Shape::Circle { center, radius } => ray_circle(origin, dir, *center, *radius),
            Shape::Polygon { vertices } => polygon_edges(vertices)
                .filter_map(|(p, q)| ray_segment(origin, dir, p, q))
                .min_by(f64::total_cmp),
        }
    }

    /// Points evenly spaced around the boundary, pushed `offset` outward.
    pub fn boundary_samples(&self, count: usize, offset: f64) -> Vec<[f64; 2]> {
        match &self.shape {
            Shape::Circle { center, radius } => (0..count)
                .map(|i| {
                    let a = i as f64 / count as f64 * std::f64::consts::TAU;
                    [
                        center[0] + (radius + offset) * a.cos(),
                        center[1] + (radius + offset) * a.sin(),
                    ]
                })
                .collect(),
            Shape::Polygon { vertices } => {
                let n = vertices.len() as f64;
                let c = vertices
                    .iter()
                    .fold([0.0, 0.0], |acc, v| [acc[0] + v[0] / n, acc[1] + v[1] / n]);
                let edges: Vec<_> = polygon_edges(vertices).collect();
                let perimeter: f64 = edges.iter().map(|(p, q)| dist(*p, *q)).sum();
                (0..count)
                    .map(|i| {
                        let mut s = (i as f64 + 0.5) / count as f64 * perimeter;
                        for (p, q) in &edges {
                            let len = dist(*p, *q);
                            if s <= len {
                                let t = s / len;
                                let pt = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                                let (dx, dy) = (pt[0] - c[0], pt[1] - c[1]);
                                let norm = dx.hypot(dy).max(1e-12);
                                return [pt[0] + offset * dx / norm, pt[1] + offset * dy / norm];
                            }
                            s -= len;
                        }
                        *vertices.last().unwrap()
                    })
                    .collect()
            }
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_edges(v: &[[f64; 2]]) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
    (0..v.len()).map(move |i| (v[i], v[(i + 1) % v.len()]))
}

fn is_convex(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    let mut sign = 0.0f64;
    for i in 0..n {
        let c = cross(v[i], v[(i + 1) % n], v[(i + 2) % n]);
        if c.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    sign != 0.0
}

fn point_in_convex(v: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut sign = 0.0f64;
    for (a, b) in polygon_edges(v) {
        let c = cross(a, b, p);
        if c.abs() < 1e-12 {
            return false;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    true
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

pub(crate) fn segment_point_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    dist([a[0] + t * dx, a[1] + t * dy], p)
}

fn ray_circle(o: [f64; 2], d: [f64; 2], c: [f64; 2], r: f64) -> Option<f64> {
    let (fx, fy) = (o[0] - c[0], o[1] - c[1]);
    let b = fx * d[0] + fy * d[1];
    let cc = fx * fx + fy * fy - r * r;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t0 = -b - s;
    let t1 = -b + s;
    if t0 >= 0.0 {
        Some(t0)
    } else if t1 >= 0.0 {
        Some(0.0)
    } else {
        None
    }
}

fn ray_segment(o: [f64; 2], d: [f64; 2], p: [f64; 2], q: [f64; 2]) -> Option<f64> {
    let e = [q[0] - p[0], q[1] - p[1]];
    let denom = d[0] * e[1] - d[1] * e[0];
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = [p[0] - o[0], p[1] - o[1]];
    let t = (w[0] * e[1] - w[1] * e[0]) / denom;
    let s = (w[0] * d[1] - w[1] * d[0]) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

/// The static description of a simulated environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct World {
    pub landmarks: Vec<Landmark>,
    pub obstacles: Vec<Obstacle>,
    /// Optional walled rectangle `[xmin, ymin, xmax, ymax]` seen by the laser.
    pub bounds: Option<[f64; 4]>,
}

impl World {
    pub fn validate(&self) -> Result<(), WorldError> {
        let mut ids = std::collections::HashSet::new();
        for l in &self.landmarks {
            if l.active_interval.0 > l.active_interval.1 {
                return Err(WorldError::BadInterval(l.id));
            }
            if !ids.insert(l.id) {
                return Err(WorldError::DuplicateLandmark(l.id));
            }
        }
        Ok(())
    }

    pub fn next_landmark_id(&self) -> u64 {
        self.landmarks.iter().map(|l| l.id + 1).max().unwrap_or(0)
    }

    fn occluded(&self, a: [f64; 2], b: [f64; 2], t: f64) -> bool {
        self.obstacles
            .iter()
            .any(|o| o.is_spawned(t) && o.blocks_segment(a, b))
    }

    /// Camera observation at the robot's current state.
    pub fn sense_camera<R: Rng + ?Sized>(
        &self,
        state: &RobotState,
        rig: &CameraRig,
        rng: &mut R,
    ) -> Frame {
        let world_cam = state.pose.to_pose3().compose(&rig.mounting);
        let cam_world = world_cam.inverse();
        let origin = [world_cam.translation.x, world_cam.translation.y];
        let half_fov = rig.fov * 0.5;
        let px_noise = Normal::new(0.0, rig.sigma_px.max(0.0)).unwrap();
        let unit = Normal::new(0.0, 1.0).unwrap();

        let mut frame = Frame {
            timestamp: state.time,
            ..Frame::default()
        };
        for lm in &self.landmarks {
            if !lm.is_active(state.time) {
                continue;
            }
            let p = cam_world.transform_point(&lm.position);
            if p.z <= Z_MIN || p.norm() > rig.max_range || p.x.atan2(p.z).abs() > half_fov {
                continue;
            }
            let px = rig.intrinsics.project_unchecked(&p);
            if !rig.intrinsics.contains(&px) {
                continue;
            }
            if self.occluded(origin, [lm.position.x, lm.position.y], state.time) {
                continue;
            }
            let (u, v) = if rig.sigma_px > 0.0 {
                (px.x + px_noise.sample(rng), px.y + px_noise.sample(rng))
            } else {
                (px.x, px.y)
            };
            let descriptor = lm.descriptor.with_bit_flips(rig.p_flip, rng);
            let point = if rig.sigma_depth > 0.0 {
                let z = p.z + unit.sample(rng) * rig.sigma_depth * p.z;
                p * (z.max(Z_MIN) / p.z)
            } else {
                p
            };
            let noisy = nalgebra::Vector2::new(u, v);
            if !rig.intrinsics.contains(&noisy) {
                continue;
            }
            frame.features.push(Feature::new(u, v, descriptor));
            frame.points_cam.push(point);
            frame.landmark_ids.push(lm.id);
        }
        frame
    }

    /// Laser ranges, beams ordered from the most negative angle.
    pub fn sense_laser(&self, state: &RobotState, rig: &LaserRig) -> Vec<f64> {
        let pose = state.pose.compose(&rig.mounting);
        let origin = [pose.x, pose.y];
        let mut segments: Vec<([f64; 2], [f64; 2])> = Vec::new();
        if let Some([x0, y0, x1, y1]) = self.bounds {
            segments.extend([
                ([x0, y0], [x1, y0]),
                ([x1, y0], [x1, y1]),
                ([x1, y1], [x0, y1]),
                ([x0, y1], [x0, y0]),
            ]);
        }
        let active: Vec<&Obstacle> = self
            .obstacles
            .iter()
            .filter(|o| o.is_spawned(state.time))
            .collect();
        rig.beam_angles()
            .map(|a| {
                let th = pose.theta + a;
                let dir = [th.cos(), th.sin()];
                let mut best = rig.max_range;
                for o in &active {
                    if let Some(t) = o.ray_hit(origin, dir) {
                        best = best.min(t);
                    }
                }
                for (p, q) in &segments {
                    if let Some(t) = ray_segment(origin, dir, *p, *q) {
                        best = best.min(t);
                    }
                }
                best
            })
            .collect()
    }
}

/// Uniformly scattered landmarks inside `region = [xmin, ymin, xmax, ymax]`.
pub fn scatter_landmarks<R: Rng + ?Sized>(
    region: [f64; 4],
    count: usize,
    z_range: (f64, f64),
    first_id: u64,
    rng: &mut R,
) -> Vec<Landmark> {
    (0..count)
        .map(|i| Landmark {
            id: first_id + i as u64,
            position: Vector3::new(
                rng.random_range(region[0]..=region[2]),
                rng.random_range(region[1]..=region[3]),
                rng.random_range(z_range.0..=z_range.1),
            ),
            descriptor: Descriptor::random(rng),
            active_interval: (0.0, f64::INFINITY),
        })
        .collect()
}

/// Landmarks on both sides of a polyline, at lateral offsets drawn from
/// `offset_range`, with `density` landmarks per meter per side.
pub fn band_landmarks<R: Rng + ?Sized>(
    polyline: &[[f64; 2]],
    offset_range: (f64, f64),
    density: f64,
    z_range: (f64, f64),
    first_id: u64,
    rng: &mut R,
) -> Vec<Landmark> {
    let mut out = Vec::new();
    let mut id = first_id;
    for w in polyline.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = dist(a, b);
        if len == 0.0 {
            continue;
        }
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let normal = [-dir[1], dir[0]];
        let count = (len * density).round() as usize;
        for side in [1.0, -1.0] {
            for _ in 0..count {
                let s = rng.random_range(0.0..len);
                let off = side * rng.random_range(offset_range.0..=offset_range.1);
                out.push(Landmark {
                    id,
                    position: Vector3::new(
                        a[0] + dir[0] * s + normal[0] * off,
                        a[1] + dir[1] * s + normal[1] * off,
                        rng.random_range(z_range.0..=z_range.1),
                    ),
                    descriptor: Descriptor::random(rng),
                    active_interval: (0.0, f64::INFINITY),
                });
                id += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotState {
    pub pose: Pose2,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: RobotState,
    /// Set when the command or time step had to be clamped.
    pub clamped: bool,
}

/// Unicycle kinematics integrated exactly along the commanded arc. The arc
/// solution is exact for any positive `dt`; non-positive steps are no-ops.
pub fn step_dynamics(state: &RobotState, v: f64, w: f64, dt: f64) -> StepOutcome {
    let vc = v.clamp(-MAX_LINEAR_SPEED, MAX_LINEAR_SPEED);
    let wc = w.clamp(-MAX_ANGULAR_SPEED, MAX_ANGULAR_SPEED);
    let dtc = dt;
    let mut clamped = vc != v || wc != w;
    if dtc.is_nan() || dtc <= 0.0 {
        return StepOutcome {
            state: *state,
            clamped: true,
        };
    }
    let p = &state.pose;
    let pose = if wc.abs() < 1e-9 {
        Pose2::new(
            p.x + vc * dtc * p.theta.cos(),
            p.y + vc * dtc * p.theta.sin(),
            p.theta,
        )
    } else {
        let r = vc / wc;
        let th1 = p.theta + wc * dtc;
        Pose2::new(
            p.x + r * (th1.sin() - p.theta.sin()),
            p.y - r * (th1.cos() - p.theta.cos()),
            th1,
        )
    };
    clamped |= !pose.x.is_finite();
    StepOutcome {
        state: RobotState {
            pose,
            time: state.time + dtc,
        },
        clamped,
    }
}

/// Dead-reckoning error model: proportional biases plus white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryModel {
    pub v_bias_ppm: f64,
    pub w_bias_ppm: f64,
    /// Linear velocity noise, m/s.
    pub v_sigma: f64,
    /// Angular velocity noise, rad/s.
    pub w_sigma: f64,
    pub seed: u64,
}

impl Default for OdometryModel {
    fn default() -> Self {
        Self {
            v_bias_ppm: 0.0,
            w_bias_ppm: 0.0,
            v_sigma: 0.0,
            w_sigma: 0.0,
            seed: 0,
        }
    }
}

impl OdometryModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    /// Measured motion for a true planar increment taken over `dt` seconds,
    /// lifted to 3-D. Standstill is reported exactly.
    pub fn odometry_step<R: Rng + ?Sized>(
        &self,
        true_delta: &Pose2,
        dt: f64,
        rng: &mut R,
    ) -> Pose3 {
        if true_delta.x == 0.0 && true_delta.y == 0.0 && true_delta.theta == 0.0 {
            return Pose3::identity();
        }
        let unit = Normal::new(0.0, 1.0).unwrap();
        let mut scale = 1.0 + self.v_bias_ppm * 1e-6;
        let dist = true_delta.x.hypot(true_delta.y);
        if self.v_sigma > 0.0 && dist > 0.0 {
            scale += unit.sample(rng) * self.v_sigma * dt / dist;
        }
        let mut dtheta = true_delta.theta * (1.0 + self.w_bias_ppm * 1e-6);
        if self.w_sigma > 0.0 {
            dtheta += unit.sample(rng) * self.w_sigma * dt;
        }
        Pose2::new(true_delta.x * scale, true_delta.y * scale, dtheta).to_pose3()
    }
}

/// Camera model plus mounting on the robot base.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics<f64>,
    /// Camera pose in the base frame (maps camera coordinates to base).
    pub mounting: Pose3,
    pub max_range: f64,
    /// Horizontal field of view, radians.
    pub fov: f64,
    pub sigma_px: f64,
    /// Depth noise as a fraction of depth.
    pub sigma_depth: f64,
    pub p_flip: f64,
}

/// Camera looking along the base x axis: camera z = base x, camera x =
/// -base y, camera y = -base z.
#[rustfmt::skip]
pub fn forward_camera_mounting(x: f64, z: f64) -> Pose3 {
    Pose3 {
        rotation: Matrix3::new(
            0.0,  0.0, 1.0,
            -1.0, 0.0, 0.0,
            0.0, -1.0, 0.0,
        ),
        translation: Vector3::new(x, 0.0, z),
    }
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::new(380.0, 380.0, 320.0, 240.0, 640, 480).unwrap(),
            mounting: forward_camera_mounting(0.2, 0.5),
            max_range: 8.0,
            fov: 90f64.to_radians(),
            sigma_px: 0.5,
            sigma_depth: 0.01,
            p_flip: 0.02,
        }
    }
}

impl CameraRig {
    pub fn noiseless(mut self) -> Self {
        self.sigma_px = 0.0;
        self.sigma_depth = 0.0;
        self.p_flip = 0.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaserRig {
    pub beam_count: usize,
    /// Total angular span, centered on the laser's forward axis.
    pub span: f64,
    pub max_range: f64,
    pub mounting: Pose2,
}

impl Default for LaserRig {
    fn default() -> Self {
        Self {
            beam_count: 360,
            span: 270f64.to_radians(),
            max_range: 10.0,
            mounting: Pose2::new(0.15, 0.0, 0.0),
        }
    }
}

impl LaserRig {
    pub fn beam_angles(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.beam_count.max(2);
        let step = self.span / (n - 1) as f64;
        (0..n).map(move |i| -self.span * 0.5 + step * i as f64)
    }

    /// Beam endpoints in the robot base frame for returns short of max range.
    pub fn endpoints(&self, ranges: &[f64]) -> Vec<[f64; 2]> {
        self.beam_angles()
            .zip(ranges)
            .filter(|(_, r)| **r < self.max_range)
            .map(|(a, r)| self.mounting.transform_point([r * a.cos(), r * a.sin()]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorRig {
    pub camera: CameraRig,
    pub laser: LaserRig,
}

/// One camera frame: features with aligned camera-frame points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub id: u64,
    pub timestamp: f64,
    pub features: Vec<Feature>,
    pub points_cam: Vec<Vector3<f64>>,
    /// Camera motion since the previous frame, expressed in that frame.
    pub odom_delta: Pose3,
    /// Ground-truth landmark ids, for evaluation only.
    pub landmark_ids: Vec<u64>,
}

impl Frame {
    pub fn descriptors(&self) -> Vec<Descriptor> {
        self.features.iter().map(|f| f.descriptor).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}
