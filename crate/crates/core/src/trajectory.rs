//! Absolute camera trajectories.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("frame indices must be strictly increasing (frame {0} follows {1})")]
    NotIncreasing(usize, usize),
}

/// Camera-to-world poses keyed by frame index, world being the first camera
/// frame (the pose convention of KITTI ground-truth files).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(usize, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(usize, Pose)>) -> Result<Self, TrajectoryError> {
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(TrajectoryError::NotIncreasing(w[1].0, w[0].0));
            }
        }
        Ok(Self { entries })
    }

    /// Consecutive frames `0..=n` from poses `T_t` mapping frame `t − 1`
    /// coordinates into frame `t`.
    pub fn from_relative(relative: &[Pose]) -> Self {
        let mut entries = Vec::with_capacity(relative.len() + 1);
        let mut acc = Pose::identity();
        entries.push((0, acc));
        for (i, t) in relative.iter().enumerate() {
            acc = acc.compose(&t.inverse());
            entries.push((i + 1, acc));
        }
        Self { entries }
    }

    /// Consecutive frames numbered from zero.
    pub fn from_poses(poses: Vec<Pose>) -> Self {
        Self {
            entries: poses.into_iter().enumerate().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, Pose)] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.entries.iter().map(|e| &e.1)
    }

    pub fn pose(&self, i: usize) -> &Pose {
        &self.entries[i].1
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|e| e.1.translation).collect()
    }

    /// Relative motions `T_t` between consecutive entries.
    pub fn relative(&self) -> Vec<Pose> {
        self.entries
            .windows(2)
            .map(|w| w[1].1.inverse().compose(&w[0].1))
            .collect()
    }

    /// Total path length through the camera centres.
    pub fn path_length(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| (w[1].1.translation - w[0].1.translation).norm())
            .sum()
    }

    /// Apply `g ∘ pose` to every entry (a change of world frame).
    pub fn transformed(&self, g: &Pose) -> Self {
        Self {
            entries: self.entries.iter().map(|(i, p)| (*i, g.compose(p))).collect(),
        }
    }

    /// Multiply every camera position by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(i, p)| (*i, Pose::new(p.rotation, p.translation * s)))
                .collect(),
        }
    }
}
