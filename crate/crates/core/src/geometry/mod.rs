//! Rigid-body math, pinhole projection, triangulation, P3P and the
//! two-view bootstrap.
//!
//! Convention: frame 0 is the reference (identity); a relative motion `T_t`
//! maps frame `t-1` coordinates into frame `t`.

mod camera;
mod epipolar;
mod p3p;
mod pose;
mod triangulate;

use thiserror::Error;

pub use camera::{chain_poses, project, rigid_flow, Intrinsics, PixelCoord, Projection};
pub use epipolar::{
    decompose_essential, eight_point, epipolar_bootstrap, lmeds_essential, sampson_error, Bootstrap,
    Correspondence, CHEIRALITY_SAMPLES, LMEDS_TRIALS, MIN_CORRESPONDENCES,
};
pub use p3p::{
    max_reprojection_error, quartic_real_roots, solve_p3p, solve_p3p_bearings, COLLINEAR_AREA,
    REPROJECTION_TOLERANCE,
};
pub use pose::{skew, so3_exp, so3_log, Pose, Twist};
pub use triangulate::{triangulate, triangulate_rays, Triangulation, PARALLEL_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {depth})")]
    BehindCamera { depth: f64 },
    #[error("degenerate configuration: rays are parallel or baseline is zero")]
    Degenerate,
    #[error("world points are collinear")]
    Collinear,
    #[error("no real solution")]
    NoRealSolution,
    #[error("degenerate motion: epipolar geometry is not observable")]
    DegenerateMotion,
    #[error("too few correspondences: {0}")]
    TooFewCorrespondences(usize),
    #[error("intrinsics must have positive focal lengths")]
    InvalidIntrinsics,
}
