//! Repeat tick loop: periodic matching, goal management, local planning and
//! map expansion.

use log::{debug, info};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{route_length, Scenario};
use super::teach::{try_candidate, MatchOutcome, PathFollower, PathSample};
use super::{rng_stream, RunError};
use crate::geometry::Pose2;
use crate::goals::{GoalConfig, GoalList};
use crate::map::TopoMetricMap;
use crate::map_ops::{expand_map, BracketMatch};
use crate::place_recognition::{query_loops, Exclusion, Vocabulary};
use crate::planner::{Decision, LocalPlanner};
use crate::sim::{step_dynamics, Frame, OdometryModel, RobotState, SensorRig, World};
use crate::Pose3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RepeatOptions {
    /// Track only the nearest goal and score candidates against it alone.
    pub single_goal: bool,
    pub no_expansion: bool,
    /// Overrides the scenario's repeat seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Arrived,
    Lost,
    Timeout,
    /// Scripted probe path finished.
    PathComplete,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Arrived => "arrived",
            Termination::Lost => "lost",
            Termination::Timeout => "timeout",
            Termination::PathComplete => "path_complete",
        }
    }
}

/// One successful repeat-time match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub tick: u64,
    pub t: f64,
    pub keyframe: u64,
    /// Attachment index when the hit came from an expansion frame.
    pub attachment: Option<usize>,
    pub score: f64,
    pub used: usize,
    pub reproj_px: f64,
    /// True robot pose when the frame was taken.
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Ground-truth position of an attached expansion frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttachmentRecord {
    pub keyframe: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub termination: Termination,
    pub end_point_distance: f64,
    pub success: bool,
    pub path: Vec<PathSample>,
    pub matches: Vec<MatchRecord>,
    pub match_attempts: usize,
    pub goal_staleness_max: f64,
    pub attachments: Vec<AttachmentRecord>,
    pub chamfer_distance: Option<f64>,
}

impl RunReport {
    pub fn distance_travelled(&self) -> f64 {
        self.path
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0].pose, w[1].pose);
                (b.x - a.x).hypot(b.y - a.y)
            })
            .sum()
    }

    pub fn matches_per_meter(&self) -> f64 {
        let d = self.distance_travelled();
        if d > 0.0 {
            self.matches.len() as f64 / d
        } else {
            0.0
        }
    }
}

/// Frame waiting for the next successful match, with its true pose.
#[derive(Debug, Clone)]
struct Pending {
    frame: Frame,
    pose: Pose2,
}

/// State of one repeat run. [`RepeatSession::tick`] advances it by one
/// control period.
#[derive(Debug)]
pub struct RepeatSession<'a> {
    scenario: &'a Scenario,
    pub map: TopoMetricMap,
    vocab: &'a Vocabulary,
    world: World,
    rig: SensorRig,
    odometry: OdometryModel,
    planner: LocalPlanner,
    goal_cfg: GoalConfig,
    opts: RepeatOptions,
    follower: Option<PathFollower>,
    teach_end: [f64; 2],
    cam_rng: ChaCha8Rng,
    odo_rng: ChaCha8Rng,
    pub state: RobotState,
    pub goals: GoalList,
    pub tick: u64,
    /// Camera motion since the last sensed frame.
    cam_delta: Pose3,
    /// Odometry accumulated since the last buffered frame.
    since_buffered: Pose3,
    bracket: Option<BracketMatch>,
    pending: Vec<Pending>,
    pub path: Vec<PathSample>,
    pub matches: Vec<MatchRecord>,
    pub match_attempts: usize,
    pub attachments: Vec<AttachmentRecord>,
    pub goal_staleness_max: f64,
    pub last_command: (f64, f64),
    pub termination: Option<Termination>,
    max_time: f64,
}

impl<'a> RepeatSession<'a> {
    /// Starts a run against `map`. `teach_end` is the true end of the teach
    /// route, used only for scoring.
    pub fn new(
        scenario: &'a Scenario,
        map: TopoMetricMap,
        vocab: &'a Vocabulary,
        teach_end: [f64; 2],
        opts: RepeatOptions,
    ) -> Result<Self, RunError> {
        scenario.validate()?;
        map.check_vocabulary(vocab)?;
        let mut map = map;
        map.index_bow(vocab);
        let run_seed = opts.seed.unwrap_or(scenario.repeat.seed);
        let rig = scenario.rig()?;
        let mut spawn_rng = rng_stream(scenario.seed, run_seed, 3);
        let follower = scenario
            .repeat
            .path
            .as_ref()
            .map(|p| PathFollower::new(p, scenario.teach.lookahead));
        let pose = match (&scenario.repeat.path, scenario.repeat.spawn) {
            (Some(p), _) => Pose2::new(
                p[0][0],
                p[0][1],
                (p[1][1] - p[0][1]).atan2(p[1][0] - p[0][0]),
            ),
            (None, Some([x, y, deg])) => Pose2::new(x, y, deg.to_radians()),
            (None, None) => {
                let lateral = if spawn_rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                } * scenario.repeat.spawn_lateral;
                let heading = if spawn_rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                } * scenario.repeat.spawn_heading_deg;
                let start = scenario.start_pose();
                start.compose(&Pose2::new(0.0, lateral, heading.to_radians()))
            }
        };
        let route = match &scenario.repeat.path {
            Some(p) => route_length(p) / scenario.repeat.path_speed,
            None => route_length(&scenario.teach.waypoints) / scenario.planner.v_nominal,
        };
        let max_time = scenario.repeat.max_time.unwrap_or(3.0 * route + 60.0);
        let mut planner_cfg = scenario.planner.clone();
        if opts.single_goal {
            planner_cfg.goals_scored = 1;
        }
        let goal_cfg = GoalConfig {
            mounting: rig.camera.mounting,
            arrival_radius: scenario.goals.arrival_radius,
            terminal_radius: scenario.goals.terminal_radius,
            max_bearing: scenario.goals.max_bearing_deg.to_radians(),
            max_goals: opts.single_goal.then_some(1),
        };
        let state = RobotState { pose, time: 0.0 };
        Ok(Self {
            scenario,
            map,
            vocab,
            world: scenario.repeat_world()?,
            odometry: scenario.odometry(),
            planner: LocalPlanner::new(planner_cfg),
            goal_cfg,
            opts,
            follower,
            teach_end,
            cam_rng: rng_stream(scenario.seed, run_seed, 4),
            odo_rng: rng_stream(scenario.seed, run_seed, 5),
            rig,
            state,
            goals: GoalList::default(),
            tick: 0,
            cam_delta: Pose3::identity(),
            since_buffered: Pose3::identity(),
            bracket: None,
            pending: Vec::new(),
            path: vec![PathSample { t: 0.0, pose }],
            matches: Vec::new(),
            match_attempts: 0,
            attachments: Vec::new(),
            goal_staleness_max: 0.0,
            last_command: (0.0, 0.0),
            termination: None,
            max_time,
        })
    }

    pub fn is_done(&self) -> bool {
        self.termination.is_some()
    }

    /// Best match of `frame` against the map, trying the top candidates.
    fn localize(&self, frame: &Frame) -> Option<MatchOutcome> {
        let bow = self.vocab.to_bow(&frame.descriptors()).ok()?;
        let cands = query_loops(
            &self.map,
            &bow,
            self.scenario.recognition.tau_loop,
            Exclusion::None,
        );
        if cands.is_empty() {
            debug!("tick {}: no keyframe above the loop threshold", self.tick);
        }
        cands
            .iter()
            .take(self.scenario.recognition.candidates)
            .find_map(|c| {
                try_candidate(
                    &self.map,
                    c,
                    &frame.features,
                    &self.rig.camera.intrinsics,
                    &self.scenario.matching,
                    &self.scenario.solver,
                )
            })
    }

    /// Rebuilds goals from a match and runs expansion. Returns whether the
    /// rebuilt list already reached the terminal goal.
    fn on_match(&mut self, m: &MatchOutcome) -> Result<bool, RunError> {
        let kf = m.candidate.keyframe;
        let mut goals = if self.map.tail_id() == Some(kf) {
            GoalList::at_tail(kf, &m.pose, &self.goal_cfg)
        } else {
            GoalList::rebuild(&self.map, kf, &m.pose, &self.goal_cfg)?
        };
        let reached = goals.prune(&self.goal_cfg).reached_terminal;
        goals.cap(&self.goal_cfg);
        self.goals = goals;

        let here = BracketMatch {
            keyframe: kf,
            pose: m.pose,
            time: self.state.time,
        };
        if let Some(prev) = self.bracket {
            if !self.pending.is_empty() && !self.opts.no_expansion {
                let frames: Vec<Frame> = self.pending.iter().map(|p| p.frame.clone()).collect();
                let added = expand_map(
                    &mut self.map,
                    &frames,
                    &prev,
                    &here,
                    Some(self.vocab),
                    &self.scenario.expansion,
                )?;
                for (i, k) in added {
                    let p = self.pending[i].pose;
                    self.attachments.push(AttachmentRecord {
                        keyframe: k,
                        x: p.x,
                        y: p.y,
                    });
                }
            }
        }
        self.pending.clear();
        self.since_buffered = Pose3::identity();
        self.bracket = Some(here);
        Ok(reached)
    }

    /// Sense, match on schedule, manage goals, plan and move one step.
    pub fn tick(&mut self) -> Result<(), RunError> {
        if self.termination.is_some() {
            return Ok(());
        }
        let s = self.scenario;
        let dt = s.dt();
        let mut frame = self
            .world
            .sense_camera(&self.state, &self.rig.camera, &mut self.cam_rng);
        frame.id = self.tick;
        frame.odom_delta = self.cam_delta;
        self.since_buffered = self.since_buffered.compose(&self.cam_delta);

        let mut arrived = false;
        if self.tick.is_multiple_of(s.match_period as u64) {
            self.match_attempts += 1;
            match self.localize(&frame) {
                Some(m) => {
                    debug!(
                        "tick {} matched keyframe {} ({} points)",
                        self.tick, m.candidate.keyframe, m.used
                    );
                    self.matches.push(MatchRecord {
                        tick: self.tick,
                        t: self.state.time,
                        keyframe: m.candidate.keyframe,
                        attachment: m.candidate.attachment,
                        score: m.candidate.score,
                        used: m.used,
                        reproj_px: m.mean_reproj_px,
                        x: self.state.pose.x,
                        y: self.state.pose.y,
                        theta: self.state.pose.theta,
                    });
                    arrived = self.on_match(&m)?;
                }
                None if self.bracket.is_some() && !frame.is_empty() => {
                    frame.odom_delta = std::mem::take(&mut self.since_buffered);
                    self.pending.push(Pending {
                        frame: frame.clone(),
                        pose: self.state.pose,
                    });
                }
                None => {}
            }
        }

        let outcome = self.goals.prune(&self.goal_cfg);
        if (arrived || outcome.reached_terminal) && self.follower.is_none() {
            self.termination = Some(Termination::Arrived);
            return Ok(());
        }

        let (v, w) = match &mut self.follower {
            Some(f) => match f.command(&self.state.pose, s.repeat.path_speed, dt) {
                Some(c) => c,
                None => {
                    self.termination = Some(Termination::PathComplete);
                    return Ok(());
                }
            },
            None => {
                let returns = self
                    .rig
                    .laser
                    .endpoints(&self.world.sense_laser(&self.state, &self.rig.laser));
                let grid = self.planner.grid(&returns);
                let planar: Vec<[f64; 2]> = self
                    .goals
                    .goals
                    .iter()
                    .map(|g| [g.translation.x, g.translation.y])
                    .collect();
                let cmd = self.planner.plan(&grid, &planar);
                let escape = if cmd.decision == Decision::Blocked {
                    self.planner
                        .escape(&grid, 0.5 * self.planner.cfg.inflation_radius)
                } else {
                    None
                };
                match escape {
                    Some(i) => {
                        debug!("tick {}: blocked, escaping along candidate {i}", self.tick);
                        (
                            self.planner.cfg.v_nominal,
                            self.planner.candidates()[i].omega,
                        )
                    }
                    None => (cmd.v, cmd.omega),
                }
            }
        };
        self.last_command = (v, w);

        let next = step_dynamics(&self.state, v, w, dt).state;
        let measured = self.odometry.odometry_step(
            &self.state.pose.between(&next.pose),
            dt,
            &mut self.odo_rng,
        );
        let mount = self.rig.camera.mounting;
        self.cam_delta = mount.inverse().compose(&measured).compose(&mount);
        self.goals.propagate(&measured, dt);
        self.goal_staleness_max = self.goal_staleness_max.max(self.goals.staleness);
        self.state = next;
        self.tick += 1;
        self.path.push(PathSample {
            t: self.state.time,
            pose: self.state.pose,
        });

        if self.follower.is_none() && self.goals.staleness > s.repeat.lost_timeout {
            self.termination = Some(Termination::Lost);
        } else if self.state.time > self.max_time {
            self.termination = Some(Termination::Timeout);
        }
        Ok(())
    }

    /// Runs to termination and scores the result.
    pub fn run(mut self) -> Result<(RunReport, TopoMetricMap), RunError> {
        while !self.is_done() {
            self.tick()?;
        }
        let report = self.report();
        info!(
            "repeat: {} after {:.1} s, end-point distance {:.3} m, {} matches",
            report.termination.as_str(),
            self.state.time,
            report.end_point_distance,
            report.matches.len()
        );
        Ok((report, self.map))
    }

    pub fn report(&self) -> RunReport {
        let [x, y] = self.state.pose.position();
        let end_point_distance = (x - self.teach_end[0]).hypot(y - self.teach_end[1]);
        let termination = self.termination.unwrap_or(Termination::Timeout);
        RunReport {
            termination,
            end_point_distance,
            success: termination == Termination::Arrived
                && end_point_distance < self.scenario.repeat.success_radius,
            path: self.path.clone(),
            matches: self.matches.clone(),
            match_attempts: self.match_attempts,
            goal_staleness_max: self.goal_staleness_max,
            attachments: self.attachments.clone(),
            chamfer_distance: None,
        }
    }
}

/// Full repeat run. Returns the report and the (possibly expanded) map.
pub fn run_repeat(
    scenario: &Scenario,
    map: TopoMetricMap,
    vocab: &Vocabulary,
    teach_end: [f64; 2],
    opts: RepeatOptions,
) -> Result<(RunReport, TopoMetricMap), RunError> {
    RepeatSession::new(scenario, map, vocab, teach_end, opts)?.run()
}
