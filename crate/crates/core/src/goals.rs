//! Relative goal list built from a keyframe match and carried between
//! matches by odometry. Goals live in the robot base frame.

use nalgebra::Vector3;

use crate::map::{MapError, TopoMetricMap};
use crate::Pose3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goal {
    /// Goal position in the current base frame, meters.
    pub translation: Vector3<f64>,
    pub source_kf: u64,
    /// The route's final keyframe.
    pub terminal: bool,
}

impl Goal {
    pub fn planar_distance(&self) -> f64 {
        self.translation.xy().norm()
    }

    pub fn bearing(&self) -> f64 {
        self.translation.y.atan2(self.translation.x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalConfig {
    /// Camera pose in the base frame.
    pub mounting: Pose3,
    pub arrival_radius: f64,
    /// Arrival radius for the terminal goal.
    pub terminal_radius: f64,
    /// Goal 0 is dropped when its bearing exceeds this, radians.
    pub max_bearing: f64,
    pub max_goals: Option<usize>,
}

impl Default for GoalConfig {
    fn default() -> Self {
        Self {
            mounting: Pose3::identity(),
            arrival_radius: 0.3,
            terminal_radius: 0.05,
            max_bearing: 60f64.to_radians(),
            max_goals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GoalList {
    pub goals: Vec<Goal>,
    pub last_match_kf: Option<u64>,
    /// Seconds since the last rebuild.
    pub staleness: f64,
}

/// What [`GoalList::prune`] removed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PruneOutcome {
    pub removed: usize,
    /// The terminal goal was removed while inside the arrival radius.
    pub reached_terminal: bool,
}

impl GoalList {
    /// Goal list after matching keyframe `kf` with the live camera at
    /// `pose` (live camera in `kf`'s frame). Goal `m` is the chain
    /// successor `m + 1` steps ahead of `kf`. Empty when `kf` is the tail.
    pub fn rebuild(
        map: &TopoMetricMap,
        kf: u64,
        pose: &Pose3,
        cfg: &GoalConfig,
    ) -> Result<Self, MapError> {
        if !map.is_alive(kf) {
            return Err(MapError::NotAlive(kf));
        }
        let tail = map.tail_id();
        let to_cam = pose.inverse();
        let m_inv = cfg.mounting.inverse();
        let mut goals = Vec::new();
        let mut acc = Pose3::identity();
        let mut cur = kf;
        while let Some((next, step)) = map.step_transform(cur) {
            acc = acc.compose(&step);
            let in_base = cfg.mounting.compose(&to_cam.compose(&acc)).compose(&m_inv);
            goals.push(Goal {
                translation: in_base.translation,
                source_kf: next,
                terminal: Some(next) == tail,
            });
            cur = next;
        }
        Ok(Self {
            goals,
            last_match_kf: Some(kf),
            staleness: 0.0,
        })
    }

    /// Single terminal goal from a match against the tail keyframe itself.
    pub fn at_tail(kf: u64, pose: &Pose3, cfg: &GoalConfig) -> Self {
        let in_base = cfg
            .mounting
            .compose(&pose.inverse())
            .compose(&cfg.mounting.inverse());
        Self {
            goals: vec![Goal {
                translation: in_base.translation,
                source_kf: kf,
                terminal: true,
            }],
            last_match_kf: Some(kf),
            staleness: 0.0,
        }
    }

    /// Keeps at most `max_goals` leading goals.
    pub fn cap(&mut self, cfg: &GoalConfig) {
        if let Some(n) = cfg.max_goals {
            self.goals.truncate(n);
        }
    }

    /// Re-expresses goals after the base moved by `delta` (new base pose in
    /// the old base frame) over `dt` seconds.
    pub fn propagate(&mut self, delta: &Pose3, dt: f64) {
        let inv = delta.inverse();
        for g in &mut self.goals {
            g.translation = inv.transform_point(&g.translation);
        }
        self.staleness += dt;
    }

    /// Drops goal 0 while it is outside the bearing window or arrived.
    pub fn prune(&mut self, cfg: &GoalConfig) -> PruneOutcome {
        let mut out = PruneOutcome::default();
        while let Some(g) = self.goals.first() {
            let radius = if g.terminal {
                cfg.terminal_radius
            } else {
                cfg.arrival_radius
            };
            let arrived = g.planar_distance() < radius;
            if !arrived && g.bearing().abs() <= cfg.max_bearing {
                break;
            }
            if g.terminal && g.planar_distance() < cfg.arrival_radius {
                out.reached_terminal = true;
            }
            self.goals.remove(0);
            out.removed += 1;
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::tests::synthetic_map;
    use crate::sim::forward_camera_mounting;
    use proptest::prelude::*;

    fn goal(x: f64, y: f64, kf: u64) -> Goal {
        Goal {
            translation: Vector3::new(x, y, 0.0),
            source_kf: kf,
            terminal: false,
        }
    }

    #[test]
    fn first_goal_is_the_successor_offset() {
        let mut map = TopoMetricMap::new();
        map.push_keyframe(Pose3::identity(), vec![], vec![]);
        map.push_keyframe(
            Pose3::from_translation(Vector3::new(1.0, 0.0, 0.0)),
            vec![],
            vec![],
        );
        let l = GoalList::rebuild(&map, 0, &Pose3::identity(), &GoalConfig::default()).unwrap();
        assert_eq!(l.goals.len(), 1);
        assert_eq!(l.goals[0].translation, Vector3::new(1.0, 0.0, 0.0));
        assert!(l.goals[0].terminal);
    }

    #[test]
    fn goals_follow_the_chain_fold() {
        let map = synthetic_map(30, 1);
        let pose = Pose3::exp(&crate::geometry::Twist::new(
            Vector3::new(0.1, -0.05, 0.2),
            Vector3::new(0.0, 0.1, 0.02),
        ));
        let l = GoalList::rebuild(&map, 7, &pose, &GoalConfig::default()).unwrap();
        assert_eq!(l.goals.len(), 22);
        for (m, g) in l.goals.iter().enumerate() {
            let target = 8 + m as u64;
            let oracle = pose
                .inverse()
                .compose(&map.chain_transform(7, target).unwrap());
            assert_eq!(g.source_kf, target);
            assert!((g.translation - oracle.translation).norm() < 1e-12);
        }
        assert!(l.goals.last().unwrap().terminal);
        assert!(l.goals.windows(2).all(|w| w[0].source_kf < w[1].source_kf));
    }

    #[test]
    fn mounting_conjugates_into_base_frame() {
        // camera 1 m forward along the route: base goal = base displacement
        let mounting = forward_camera_mounting(0.2, 0.5);
        let base_step =
            Pose3::from_parts(Pose3::from_yaw(0.3).rotation, Vector3::new(1.0, 0.2, 0.0));
        let cam_step = mounting.inverse().compose(&base_step).compose(&mounting);
        let mut map = TopoMetricMap::new();
        map.push_keyframe(Pose3::identity(), vec![], vec![]);
        map.push_keyframe(cam_step, vec![], vec![]);
        let cfg = GoalConfig {
            mounting,
            ..GoalConfig::default()
        };
        let l = GoalList::rebuild(&map, 0, &Pose3::identity(), &cfg).unwrap();
        assert!((l.goals[0].translation - base_step.translation).norm() < 1e-12);
    }

    #[test]
    fn tail_match_and_goal_cap() {
        let map = synthetic_map(10, 2);
        let l = GoalList::rebuild(&map, 9, &Pose3::identity(), &GoalConfig::default()).unwrap();
        assert!(l.is_empty());
        let one = GoalConfig {
            max_goals: Some(1),
            ..GoalConfig::default()
        };
        let mut l = GoalList::rebuild(&map, 2, &Pose3::identity(), &one).unwrap();
        assert_eq!(l.goals.len(), 7);
        l.cap(&one);
        assert_eq!(l.goals.len(), 1);
        assert_eq!(l.goals[0].source_kf, 3);
        let t = GoalList::at_tail(
            9,
            &Pose3::from_translation(Vector3::new(-0.5, 0.0, 0.0)),
            &GoalConfig::default(),
        );
        assert_eq!(t.goals[0].translation, Vector3::new(0.5, 0.0, 0.0));
        assert!(t.goals[0].terminal);
    }

    #[test]
    fn propagate_moves_goals_toward_robot() {
        let mut l = GoalList {
            goals: vec![goal(3.0, 0.0, 1)],
            ..GoalList::default()
        };
        l.propagate(&Pose3::identity(), 0.1);
        assert_eq!(l.goals[0].translation, Vector3::new(3.0, 0.0, 0.0));
        l.propagate(&Pose3::from_translation(Vector3::new(1.0, 0.0, 0.0)), 0.1);
        assert!((l.goals[0].translation - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((l.staleness - 0.2).abs() < 1e-15);
    }

    #[test]
    fn prune_rules() {
        let cfg = GoalConfig::default();
        let mut l = GoalList {
            goals: vec![
                goal(-1.0, 0.0, 1),
                goal(
                    2.0 * 30f64.to_radians().cos(),
                    2.0 * 30f64.to_radians().sin(),
                    2,
                ),
            ],
            ..GoalList::default()
        };
        assert_eq!(l.prune(&cfg).removed, 1);
        assert_eq!(l.goals[0].source_kf, 2);
        let mut l = GoalList {
            goals: vec![goal(0.1, 0.0, 1), goal(1.0, 0.0, 2)],
            ..GoalList::default()
        };
        l.prune(&cfg);
        assert_eq!(l.goals.len(), 1);
        // only goal 0 is bearing-tested
        let mut l = GoalList {
            goals: vec![goal(1.0, 0.0, 1), goal(-1.0, 0.0, 2)],
            ..GoalList::default()
        };
        assert_eq!(l.prune(&cfg).removed, 0);
    }

    #[test]
    fn terminal_goal_uses_its_own_radius() {
        let cfg = GoalConfig::default();
        let mut t = goal(0.1, 0.0, 5);
        t.terminal = true;
        let mut l = GoalList {
            goals: vec![t],
            ..GoalList::default()
        };
        assert_eq!(l.prune(&cfg), PruneOutcome::default());
        l.goals[0].translation.x = 0.04;
        assert_eq!(
            l.prune(&cfg),
            PruneOutcome {
                removed: 1,
                reached_terminal: true
            }
        );
        // passing it sideways from close by also counts
        let mut l = GoalList {
            goals: vec![Goal {
                translation: Vector3::new(0.0, -0.2, 0.0),
                ..t
            }],
            ..GoalList::default()
        };
        assert!(l.prune(&cfg).reached_terminal);
    }

    fn arb_goals() -> impl Strategy<Value = Vec<Goal>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..8).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (x, y))| goal(x, y, i as u64))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn prune_is_idempotent_and_order_preserving(goals in arb_goals()) {
            let cfg = GoalConfig::default();
            let mut l = GoalList { goals: goals.clone(), ..GoalList::default() };
            l.prune(&cfg);
            let once = l.clone();
            l.prune(&cfg);
            prop_assert_eq!(&l, &once);
            prop_assert!(goals.ends_with(&once.goals));
        }

        #[test]
        fn propagation_composes(
            a in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            b in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            goals in arb_goals(),
        ) {
            let da = crate::geometry::Pose2::new(a.0, a.1, a.2).to_pose3();
            let db = crate::geometry::Pose2::new(b.0, b.1, b.2).to_pose3();
            let mut two = GoalList { goals: goals.clone(), ..GoalList::default() };
            two.propagate(&da, 0.1);
            two.propagate(&db, 0.1);
            let mut one = GoalList { goals, ..GoalList::default() };
            one.propagate(&da.compose(&db), 0.2);
            for (x, y) in two.goals.iter().zip(&one.goals) {
                prop_assert!((x.translation - y.translation).norm() < 1e-12);
            }
        }
    }
}
