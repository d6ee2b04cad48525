//! Small analytic scenes shared by unit tests.

use nalgebra::Vector3;

use crate::depth::DepthMap;
use crate::flow::FlowField;
use crate::geometry::{chain_poses, Intrinsics, PixelCoord, Pose};

pub fn test_intrinsics() -> Intrinsics {
    Intrinsics::new(60.0, 60.0, 32.0, 24.0).unwrap()
}

/// Gentle forward motion with a little yaw, `n` relative poses.
pub fn forward_motion(n: usize) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            Pose::from_rotation_vector(
                Vector3::new(0.002, 0.01 - 0.003 * i as f64, 0.001),
                Vector3::new(0.05, -0.02, -0.6),
            )
        })
        .collect()
}

/// Depth in frame 0 of the world plane `n·X = offset`.
pub fn plane_depth(k: &Intrinsics, w: usize, h: usize, normal: &Vector3<f64>, offset: f64) -> DepthMap {
    DepthMap::from_fn(w, h, |x, y| {
        let ray = k.unproject(PixelCoord::new(x as f64, y as f64));
        offset / normal.dot(&ray)
    })
}

/// Exact flows of the plane `n·X = offset` (frame-0 coordinates) seen by a
/// camera following `relative`.
pub fn plane_flows(
    k: &Intrinsics,
    w: usize,
    h: usize,
    relative: &[Pose],
    normal: &Vector3<f64>,
    offset: f64,
) -> Vec<FlowField> {
    let chain = chain_poses(relative);
    (1..chain.len())
        .map(|t| {
            let inv = chain[t - 1].inverse();
            FlowField::from_fn(w, h, |x, y| {
                let p = PixelCoord::new(x as f64, y as f64);
                let centre = inv.translation;
                let dir = inv.rotation * k.unproject(p);
                let s = (offset - normal.dot(&centre)) / normal.dot(&dir);
                let world = centre + dir * s;
                match k.project_point(&chain[t].transform(&world)) {
                    Some(q) => {
                        let d = q - p;
                        [d.x as f32, d.y as f32]
                    }
                    None => [0.0, 0.0],
                }
            })
        })
        .collect()
}
