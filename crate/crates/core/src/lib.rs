pub mod descriptor;
pub mod geometry;
pub mod goals;
pub mod map;
pub mod map_ops;
pub mod matching;
pub mod place_recognition;
pub mod planner;
pub mod pose_solver;
pub mod runner;
pub mod scalar;
pub mod sim;

pub type Pose3 = geometry::Pose3<f64>;
pub type Pose3f = geometry::Pose3<f32>;
pub type Twist = geometry::Twist<f64>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<f64>;
pub type Correspondence = matching::Correspondence<f64>;
pub type SolverConfig = pose_solver::SolverConfig<f64>;
pub type SolveResult = pose_solver::SolveResult<f64>;
