use std::error::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{estimate_ground_scale, run_batch_with_rng, BatchConfig, BatchError, BatchResult};
use crate::flow::FlowField;
use crate::geometry::{Intrinsics, Pose};
use crate::trajectory::Trajectory;

/// Random-access provider of the flow fields `X_1, X_2, …` of a sequence.
pub trait FlowSource {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<FlowField, Box<dyn Error + Send + Sync>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FlowSource for [FlowField] {
    fn len(&self) -> usize {
        <[FlowField]>::len(self)
    }

    fn load(&self, index: usize) -> Result<FlowField, Box<dyn Error + Send + Sync>> {
        Ok(self[index].clone())
    }
}

impl FlowSource for Vec<FlowField> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> Result<FlowField, Box<dyn Error + Send + Sync>> {
        Ok(self[index].clone())
    }
}

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("the flow source is empty")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(BatchError),
    #[error("cannot load flow {index}: {message}")]
    Load { index: usize, message: String },
    /// Malformed input found while running a batch (never replaced by a
    /// fallback).
    #[error("batch {index}: {source}")]
    Input { index: usize, source: BatchError },
}

/// What happened to one batch of the sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub index: usize,
    /// Flows `start..end` of the sequence.
    pub start: usize,
    pub end: usize,
    pub bootstrapped: bool,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the batch failed and its new poses are a constant-velocity
    /// fallback.
    pub error: Option<String>,
    /// Factor that maps this batch's estimates onto the scale of the
    /// sequence so far.
    pub chain_scale: f64,
    /// Ground-plane metric scale of this batch alone, if estimated.
    pub ground_scale: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SequenceResult {
    /// Relative motions `T_1..T_M`, metric when ground scaling is enabled.
    pub relative: Vec<Pose>,
    /// Camera-to-world poses of frames `0..=M`.
    pub trajectory: Trajectory,
    /// Per flow: its pose is a fallback rather than an estimate.
    pub fallback: Vec<bool>,
    pub batches: Vec<BatchRecord>,
    /// Per flow: the metric factor applied to its translation.
    pub metric_scale: Vec<f64>,
}

/// [`run_sequence_with`] without an observer.
pub fn run_sequence<S: FlowSource + ?Sized>(
    source: &S,
    k: &Intrinsics,
    config: &BatchConfig,
) -> Result<SequenceResult, SequenceError> {
    run_sequence_with(source, k, config, |_, _| {})
}

fn load_range<S: FlowSource + ?Sized>(source: &S, start: usize, end: usize) -> Result<Vec<FlowField>, SequenceError> {
    (start..end)
        .map(|index| {
            source.load(index).map_err(|e| SequenceError::Load {
                index,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Sliding-window odometry over a whole flow sequence.
///
/// Batches hold `window_size` flows and consecutive batches share one flow:
/// a batch starting at flow `s` re-estimates `T_s`, whose previous estimate
/// seeds its `T_1`, and the new estimate fixes the relative scale with which
/// the batch is appended. Batch `b` draws from stream `b` of a generator
/// seeded with `config.seed`, so the first batch reproduces [`run_batch`].
/// A batch that fails numerically is recorded and its flows get the last
/// estimated motion; malformed input aborts the sequence.
/// With `camera_height` set, each batch's depth yields a ground-plane scale,
/// blended by an exponential moving average with factor 0.5 and applied to
/// the reported translations. `observe` sees every batch as it finishes.
///
/// [`run_batch`]: super::run_batch
pub fn run_sequence_with<S, F>(
    source: &S,
    k: &Intrinsics,
    config: &BatchConfig,
    mut observe: F,
) -> Result<SequenceResult, SequenceError>
where
    S: FlowSource + ?Sized,
    F: FnMut(&BatchRecord, Option<&BatchResult>),
{
    config.validate().map_err(SequenceError::Config)?;
    let total = source.len();
    if total == 0 {
        return Err(SequenceError::Empty);
    }
    let window = config.window_size;
    let mut raw: Vec<Pose> = Vec::with_capacity(total);
    let mut fallback: Vec<bool> = Vec::with_capacity(total);
    let mut metric: Vec<Option<f64>> = Vec::with_capacity(total);
    let mut batches = Vec::new();
    let mut ema: Option<f64> = None;
    let mut start = 0;

    loop {
        let end = (start + window).min(total);
        let index = batches.len();
        let flows = load_range(source, start, end)?;
        // The flow shared with the previous batch, already in `raw`.
        let shared = if index == 0 { None } else { Some(start) };
        let prior = shared.filter(|&s| !fallback[s] && raw[s].translation.norm() > 1e-9).map(|s| raw[s]);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64);
        let outcome = run_batch_with_rng(&flows, k, config, prior.as_ref(), &mut rng);
        if let Err(e) = &outcome {
            if !e.is_numerical() {
                return Err(SequenceError::Input {
                    index,
                    source: e.clone(),
                });
            }
        }
        let first_new = if shared.is_some() { 1 } else { 0 };
        let mut record = BatchRecord {
            index,
            start,
            end,
            bootstrapped: false,
            converged: false,
            iterations: 0,
            error: None,
            chain_scale: 1.0,
            ground_scale: None,
        };

        match &outcome {
            Ok(result) => {
                let chain_scale = match shared {
                    Some(s) => {
                        let (a, b) = (raw[s].translation.norm(), result.poses[0].translation.norm());
                        if a > 1e-12 && b > 1e-12 {
                            a / b
                        } else {
                            1.0
                        }
                    }
                    None => 1.0,
                };
                record.bootstrapped = result.bootstrapped;
                record.converged = result.converged;
                record.iterations = result.diagnostics.len();
                record.chain_scale = chain_scale;
                for p in &result.poses[first_new..] {
                    raw.push(Pose::new(p.rotation, p.translation * chain_scale));
                    fallback.push(false);
                }
                if let Some(height) = config.camera_height {
                    let depth = result.depth.scaled(chain_scale);
                    if let Ok(g) = estimate_ground_scale(&depth, k, height, &config.ground) {
                        record.ground_scale = Some(g);
                        ema = Some(ema.map_or(g, |m| 0.5 * m + 0.5 * g));
                    }
                }
            }
            Err(e) => {
                record.error = Some(e.to_string());
                let last = raw.iter().zip(&fallback).rev().find(|(_, f)| !**f).map(|(p, _)| *p);
                let velocity = last.unwrap_or_else(Pose::identity);
                for _ in (start + first_new)..end {
                    raw.push(velocity);
                    fallback.push(true);
                }
            }
        }
        metric.resize(raw.len(), ema);
        observe(&record, outcome.as_ref().ok());
        batches.push(record);
        if end >= total {
            break;
        }
        start = end - 1;
    }

    // Flows before the first ground estimate take the first one available.
    let first = metric.iter().flatten().next().copied();
    let metric_scale: Vec<f64> = metric.iter().map(|m| m.or(first).unwrap_or(1.0)).collect();
    let relative: Vec<Pose> = raw
        .iter()
        .zip(&metric_scale)
        .map(|(p, s)| Pose::new(p.rotation, p.translation * *s))
        .collect();
    Ok(SequenceResult {
        trajectory: Trajectory::from_relative(&relative),
        relative,
        fallback,
        batches,
        metric_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::run_batch;
    use crate::synth::{generate_scene, SceneSpec};

    fn spec(flows: usize) -> SceneSpec {
        SceneSpec {
            width: 128,
            height: 96,
            intrinsics: Intrinsics::new(100.0, 100.0, 64.0, 48.0).unwrap(),
            flows,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn single_batch_matches_run_batch() {
        let scene = generate_scene(&spec(4), 1).unwrap();
        let config = BatchConfig {
            window_size: 4,
            max_iters: 2,
            ..BatchConfig::default()
        };
        let seq = run_sequence(&scene.flows, scene.intrinsics(), &config).unwrap();
        let batch = run_batch(&scene.flows, scene.intrinsics(), &config, None).unwrap();
        assert_eq!(seq.relative, batch.poses);
        assert_eq!(seq.batches.len(), 1);
    }

    #[test]
    fn batches_overlap_by_one_flow() {
        let scene = generate_scene(&spec(10), 2).unwrap();
        let config = BatchConfig {
            window_size: 4,
            ..BatchConfig::default()
        };
        let seq = run_sequence(&scene.flows, scene.intrinsics(), &config).unwrap();
        let ranges: Vec<(usize, usize)> = seq.batches.iter().map(|b| (b.start, b.end)).collect();
        assert_eq!(ranges, vec![(0, 4), (3, 7), (6, 10)]);
        assert_eq!(seq.relative.len(), 10);
        assert!(seq.batches[1..].iter().all(|b| !b.bootstrapped));
        // Composition of the reported relative poses is the trajectory.
        let again = Trajectory::from_relative(&seq.relative);
        assert_eq!(again, seq.trajectory);
        // Scale carries across batches: translation norms stay close to the
        // first estimate relative to ground truth.
        let s0 = seq.relative[0].translation.norm() / scene.poses[0].translation.norm();
        for (est, truth) in seq.relative.iter().zip(&scene.poses) {
            let s = est.translation.norm() / truth.translation.norm();
            assert!((s / s0 - 1.0).abs() < 0.02, "{s} vs {s0}");
        }
    }

    #[test]
    fn degenerate_batch_falls_back() {
        let scene = generate_scene(&spec(7), 3).unwrap();
        let mut flows = scene.flows.clone();
        for f in flows.iter_mut().skip(3) {
            *f = FlowField::zeros(f.width(), f.height());
        }
        let config = BatchConfig {
            window_size: 3,
            max_iters: 2,
            ..BatchConfig::default()
        };
        let seq = run_sequence(&flows, scene.intrinsics(), &config).unwrap();
        assert!(seq.fallback.iter().any(|f| *f));
        assert!(seq.batches.iter().any(|b| b.error.is_some()));
        assert!(!seq.fallback[0]);
        assert!(seq.trajectory.poses().all(|p| p.is_finite()));
        assert_eq!(seq.trajectory.len(), 8);
    }

    #[test]
    fn ground_scaling_makes_translation_metric() {
        let mut s = SceneSpec {
            flows: 5,
            ..SceneSpec::default()
        };
        s.noise = None;
        let scene = generate_scene(&s, 6).unwrap();
        let config = BatchConfig {
            window_size: 5,
            max_iters: 2,
            camera_height: Some(s.ground_height),
            ..BatchConfig::default()
        };
        let seq = run_sequence(&scene.flows, scene.intrinsics(), &config).unwrap();
        assert!(seq.batches[0].ground_scale.is_some());
        let est: f64 = seq.relative.iter().map(|p| p.translation.norm()).sum();
        let truth: f64 = scene.poses.iter().map(|p| p.translation.norm()).sum();
        assert!((est / truth - 1.0).abs() < 0.03, "{est} vs {truth}");
    }

    #[test]
    fn mismatched_flow_sizes_abort() {
        let scene = generate_scene(&spec(3), 4).unwrap();
        let mut flows = scene.flows.clone();
        flows[2] = FlowField::zeros(64, 48);
        let config = BatchConfig {
            window_size: 3,
            ..BatchConfig::default()
        };
        let r = run_sequence(&flows, scene.intrinsics(), &config);
        assert!(matches!(r, Err(SequenceError::Input { index: 0, .. })), "{r:?}");
    }

    #[test]
    fn empty_source_rejected() {
        let k = Intrinsics::new(60.0, 60.0, 32.0, 24.0).unwrap();
        let r = run_sequence(&Vec::<FlowField>::new(), &k, &BatchConfig::default());
        assert!(matches!(r, Err(SequenceError::Empty)));
    }
}
