//! Gauss-Newton relative pose from 3-D/2-D correspondences.
//!
//! The iterate `X` maps keyframe points into the live camera frame and is
//! refined as `X <- exp(dxi) * X` with `dxi = -(J^T J)^-1 J^T e`, where
//! `e_n = pi(X p_n) - u_n`. The reported pose is `X^-1`: the live camera
//! expressed in keyframe coordinates.

use nalgebra::{Matrix2x6, Matrix6, SymmetricEigen, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{hat, CameraIntrinsics, Pose3, Twist, Z_MIN};
use crate::matching::Correspondence;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(
    default,
    deny_unknown_fields,
    bound(deserialize = "T: Real + serde::Deserialize<'de>")
)]
pub struct SolverConfig<T: Real> {
    pub max_iters: usize,
    /// Convergence threshold on the increment norm.
    pub step_tol: T,
    pub min_correspondences: usize,
    /// Post-fit acceptance gate on the mean reprojection error, pixels.
    pub max_mean_reproj_px: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 20,
            step_tol: T::lit(1e-8),
            min_correspondences: 6,
            max_mean_reproj_px: T::lit(3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T: Real> {
    /// Live camera pose in keyframe coordinates.
    pub pose: Pose3<T>,
    pub iterations: usize,
    pub mean_reproj_px: T,
    /// Step criterion met and the reprojection gate passed.
    pub converged: bool,
    /// Sum of squared residuals at the start of each iteration.
    pub costs: Vec<T>,
    /// Correspondences used in the final iteration.
    pub used: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Rejection {
    #[error("{have} usable correspondences, need {need}")]
    InsufficientCorrespondences { have: usize, need: usize },
    #[error("normal equations are rank deficient (eigenvalue ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
}

/// Derivative of the residual of a transformed point `p` with respect to a
/// left increment: `d pi / d p * [I, -p^]`.
pub fn residual_jacobian<T: Real>(k: &CameraIntrinsics<T>, p: &Vector3<T>) -> Matrix2x6<T> {
    let dpi = k.project_jacobian(p);
    let mut dp = nalgebra::Matrix3x6::zeros();
    dp.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&nalgebra::Matrix3::identity());
    dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(p)));
    dpi * dp
}

struct Normal<T: Real> {
    h: Matrix6<T>,
    g: Vector6<T>,
    cost: T,
    reproj_sum: T,
    used: usize,
}

fn accumulate<T: Real>(
    x: &Pose3<T>,
    corrs: &[Correspondence<T>],
    k: &CameraIntrinsics<T>,
) -> Normal<T> {
    let mut n = Normal {
        h: Matrix6::zeros(),
        g: Vector6::zeros(),
        cost: T::zero(),
        reproj_sum: T::zero(),
        used: 0,
    };
    for c in corrs {
        let p = x.transform_point(&c.point);
        if p.z <= T::lit(Z_MIN) {
            continue;
        }
        let e = k.project_unchecked(&p) - c.pixel;
        let j = residual_jacobian(k, &p);
        n.h += j.transpose() * j;
        n.g += j.transpose() * e;
        n.cost += e.norm_squared();
        n.reproj_sum += e.norm();
        n.used += 1;
    }
    n
}

/// Smallest over largest eigenvalue of the Jacobi-scaled normal matrix.
fn conditioning<T: Real>(h: &Matrix6<T>) -> T {
    let d = h.diagonal().map(|x| {
        if x > T::zero() {
            T::one() / x.sqrt()
        } else {
            T::zero()
        }
    });
    let scaled = Matrix6::from_fn(|i, j| h[(i, j)] * d[i] * d[j]);
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let max = eig
        .iter()
        .copied()
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    let min = eig
        .iter()
        .copied()
        .fold(max, |a, b| if b < a { b } else { a });
    if max > T::zero() {
        min / max
    } else {
        T::zero()
    }
}

/// Estimates the live camera pose relative to the keyframe that owns the
/// correspondence points, starting from identity.
pub fn solve<T: Real>(
    corrs: &[Correspondence<T>],
    k: &CameraIntrinsics<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveResult<T>, Rejection> {
    let need = cfg.min_correspondences.max(3);
    if corrs.len() < need {
        return Err(Rejection::InsufficientCorrespondences {
            have: corrs.len(),
            need,
        });
    }
    let rank_tol = T::default_epsilon() * T::lit(100.0);
    let mut x = Pose3::identity();
    let mut costs = Vec::new();
    let mut step_converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters.max(1) {
        let n = accumulate(&x, corrs, k);
        if n.used < need {
            return Err(Rejection::InsufficientCorrespondences { have: n.used, need });
        }
        let ratio = conditioning(&n.h);
        if ratio.partial_cmp(&rank_tol) != Some(std::cmp::Ordering::Greater) {
            return Err(Rejection::RankDeficient {
                ratio: ratio.to_f64_lossy(),
            });
        }
        let chol = n.h.cholesky().ok_or(Rejection::RankDeficient {
            ratio: ratio.to_f64_lossy(),
        })?;
        costs.push(n.cost);
        let delta = -chol.solve(&n.g);
        x = Pose3::exp(&Twist::from_vector(&delta)).compose(&x);
        iterations += 1;
        if delta.norm() < cfg.step_tol {
            step_converged = true;
            break;
        }
    }
    let fin = accumulate(&x, corrs, k);
    let mean = if fin.used > 0 {
        fin.reproj_sum / T::lit(fin.used as f64)
    } else {
        T::max_value().unwrap_or(T::lit(f64::MAX))
    };
    Ok(SolveResult {
        pose: x.inverse(),
        iterations,
        mean_reproj_px: mean,
        converged: step_converged && fin.used >= need && mean <= cfg.max_mean_reproj_px,
        costs,
        used: fin.used,
    })
}
