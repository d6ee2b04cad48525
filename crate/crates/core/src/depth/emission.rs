use nalgebra::Vector2;
use rayon::prelude::*;

use super::DepthMap;
use crate::flow::FlowField;
use crate::geometry::{chain_poses, Intrinsics, PixelCoord, Pose};
use crate::residual::{ObservationModel, LOG_DENSITY_FLOOR};

/// Read-only view of one batch: intrinsics, flows `X_1..X_N`, the chained
/// poses `[I, T_1, T_2∘T_1, …]` and the observation model.
#[derive(Clone, Debug)]
pub struct BatchView<'a> {
    pub k: &'a Intrinsics,
    pub flows: &'a [FlowField],
    pub chain: Vec<Pose>,
    pub model: &'a ObservationModel,
}

impl<'a> BatchView<'a> {
    /// `relative` may be shorter than `flows`; only that many frames are used.
    pub fn new(
        k: &'a Intrinsics,
        flows: &'a [FlowField],
        relative: &[Pose],
        model: &'a ObservationModel,
    ) -> Self {
        assert!(relative.len() <= flows.len(), "more poses than flows");
        Self {
            k,
            flows,
            chain: chain_poses(relative),
            model,
        }
    }

    /// Number of frames with a known pose.
    pub fn frames(&self) -> usize {
        self.chain.len() - 1
    }

    pub fn width(&self) -> usize {
        self.flows[0].width()
    }

    pub fn height(&self) -> usize {
        self.flows[0].height()
    }
}

/// Observation used for the outlier density of a broken track: bilinear at
/// the clamped position, else the nearest stored vector.
fn clamped_observation(flow: &FlowField, p: PixelCoord) -> Vector2<f64> {
    let x = p.x.clamp(0.0, (flow.width() - 1) as f64);
    let y = p.y.clamp(0.0, (flow.height() - 1) as f64);
    let q = PixelCoord::new(x, y);
    flow.sample(q)
        .unwrap_or_else(|| flow.get(x.round() as usize, y.round() as usize))
}

/// Log-emissions `(ln ρ, ln μ)` for every frame of the track of `pixel` at
/// `depth`. Once the track leaves the image or goes behind a camera it is
/// broken: `ln ρ` takes the floor and `ln μ` is evaluated at the observation
/// nearest to the last position inside the image.
pub fn track_emissions(view: &BatchView, pixel: PixelCoord, depth: f64, out: &mut [(f64, f64)]) {
    let n = view.frames();
    debug_assert!(out.len() >= n);
    let point = view.k.back_project(pixel, depth);
    let mut prev = pixel;
    let mut broken = !(depth > 0.0 && depth.is_finite());
    for t in 1..=n {
        let flow = &view.flows[t - 1];
        if broken {
            out[t - 1] = (LOG_DENSITY_FLOOR, view.model.log_outlier(&clamped_observation(flow, prev)));
            continue;
        }
        let Some(observed) = flow.sample(prev) else {
            broken = true;
            out[t - 1] = (LOG_DENSITY_FLOOR, view.model.log_outlier(&clamped_observation(flow, prev)));
            continue;
        };
        match view.k.project_point(&view.chain[t].transform(&point)) {
            Some(next) if next.is_finite() => {
                out[t - 1] = view.model.log_densities(&(next - prev), &observed);
                prev = next;
            }
            _ => {
                broken = true;
                out[t - 1] = (LOG_DENSITY_FLOOR, view.model.log_outlier(&observed));
            }
        }
    }
}

/// Log-emissions of a single frame `t ∈ 1..=N`.
pub fn emission(view: &BatchView, pixel: PixelCoord, t: usize, depth: f64) -> (f64, f64) {
    assert!(t >= 1 && t <= view.frames());
    let mut buf = vec![(0.0, 0.0); view.frames()];
    track_emissions(view, pixel, depth, &mut buf);
    buf[t - 1]
}

/// `(ln ρ, ln μ)` for every frame and pixel under one depth hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionTable {
    width: usize,
    height: usize,
    frames: usize,
    log_rho: Vec<f64>,
    log_mu: Vec<f64>,
}

impl EmissionTable {
    pub fn from_parts(width: usize, height: usize, frames: usize, log_rho: Vec<f64>, log_mu: Vec<f64>) -> Self {
        let n = width * height * frames;
        assert!(log_rho.len() == n && log_mu.len() == n);
        Self {
            width,
            height,
            frames,
            log_rho,
            log_mu,
        }
    }

    /// Evaluate every pixel of `depth` under `view`, parallel over rows.
    pub fn compute(view: &BatchView, depth: &DepthMap) -> Self {
        let (w, h, n) = (depth.width(), depth.height(), view.frames());
        let rows: Vec<Vec<(f64, f64)>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut row = vec![(0.0, 0.0); w * n];
                for x in 0..w {
                    let d = if depth.is_valid(x, y) { depth.get(x, y) } else { f64::NAN };
                    let pixel = PixelCoord::new(x as f64, y as f64);
                    track_emissions(view, pixel, d, &mut row[x * n..(x + 1) * n]);
                }
                row
            })
            .collect();
        let len = w * h;
        let mut log_rho = vec![0.0; len * n];
        let mut log_mu = vec![0.0; len * n];
        for (y, row) in rows.iter().enumerate() {
            for x in 0..w {
                for k in 0..n {
                    let (r, m) = row[x * n + k];
                    log_rho[k * len + y * w + x] = r;
                    log_mu[k * len + y * w + x] = m;
                }
            }
        }
        Self::from_parts(w, h, n, log_rho, log_mu)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn log_rho(&self, k: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.log_rho[k * n..(k + 1) * n]
    }

    pub fn log_mu(&self, k: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.log_mu[k * n..(k + 1) * n]
    }
}
