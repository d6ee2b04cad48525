//! Synthetic scenes with exact ground truth: a ray-cast world of planes and
//! boxes, a jittered forward-moving camera, Fisk-distributed flow noise and
//! optional independently moving objects.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::DepthMap;
use crate::flow::FlowField;
use crate::geometry::{chain_poses, Intrinsics, PixelCoord, Pose, Twist};
use crate::residual::{fisk_quantile, ResidualModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    Invalid(&'static str),
}

/// Camera motion per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionSpec {
    /// Forward displacement per frame (scene units).
    pub forward: f64,
    /// Uniform jitter bound on each displacement component.
    pub jitter: f64,
    /// Bound on the per-frame yaw, degrees; pitch and roll use a quarter.
    pub max_rotation_deg: f64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            forward: 0.5,
            jitter: 0.03,
            max_rotation_deg: 0.5,
        }
    }
}

/// A fronto-parallel rectangle rigidly attached to the camera, bobbing
/// vertically, so its flow contradicts the static scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingObject {
    /// Centre in camera coordinates at frame 0.
    pub centre: [f64; 3],
    pub half_width: f64,
    pub half_height: f64,
    /// Vertical displacement per frame; the direction reverses every
    /// `period` frames.
    pub vertical_speed: f64,
    pub period: usize,
}

impl MovingObject {
    /// Object covering about 15% of a 256×192 image at focal 200, right of
    /// the principal point.
    pub fn default_for_tests() -> Self {
        Self {
            centre: [1.8, -0.2, 8.0],
            half_width: 1.75,
            half_height: 1.75,
            vertical_speed: 0.04,
            period: 8,
        }
    }

    fn offset(&self, frame: usize) -> f64 {
        // Triangle wave starting at 0.
        let p = self.period.max(1);
        let cycle = frame % (2 * p);
        let steps = if cycle <= p { cycle as f64 } else { (2 * p - cycle) as f64 };
        steps * self.vertical_speed
    }
}

/// Everything needed to generate a scene apart from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    /// Number of flow fields (frames minus one).
    pub flows: usize,
    pub motion: MotionSpec,
    /// Camera height above the ground at frame 0.
    pub ground_height: f64,
    /// Tilt of the ground plane about the camera x axis, degrees.
    pub ground_slant_deg: f64,
    /// Lateral distance of the two side walls.
    pub wall_offset: f64,
    pub backdrop_depth: f64,
    /// Number of random fronto-parallel boxes.
    pub boxes: usize,
    /// Flow noise; `None` renders exact flows.
    pub noise: Option<ResidualModel>,
    pub moving_objects: Vec<MovingObject>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 192,
            intrinsics: Intrinsics {
                fx: 200.0,
                fy: 200.0,
                cx: 128.0,
                cy: 96.0,
            },
            flows: 5,
            motion: MotionSpec::default(),
            ground_height: 1.7,
            ground_slant_deg: 1.0,
            wall_offset: 6.0,
            backdrop_depth: 90.0,
            boxes: 8,
            noise: Some(ResidualModel::KITTI),
            moving_objects: Vec::new(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width < 8 || self.height < 8 {
            return Err(SceneError::Invalid("image must be at least 8×8"));
        }
        if self.flows == 0 {
            return Err(SceneError::Invalid("need at least one flow"));
        }
        if Intrinsics::new(self.intrinsics.fx, self.intrinsics.fy, self.intrinsics.cx, self.intrinsics.cy).is_err() {
            return Err(SceneError::Invalid("invalid intrinsics"));
        }
        if !(self.ground_height > 0.0 && self.wall_offset > 0.0 && self.backdrop_depth > 0.0) {
            return Err(SceneError::Invalid("ground height, wall offset and backdrop depth must be positive"));
        }
        if !(self.motion.forward.is_finite() && self.motion.jitter >= 0.0 && self.motion.max_rotation_deg >= 0.0) {
            return Err(SceneError::Invalid("invalid motion bounds"));
        }
        if let Some(m) = &self.noise {
            m.validate().map_err(|_| SceneError::Invalid("invalid noise model"))?;
        }
        if self
            .moving_objects
            .iter()
            .any(|o| !(o.centre[2] > 0.0 && o.half_width > 0.0 && o.half_height > 0.0))
        {
            return Err(SceneError::Invalid("moving objects need positive depth and extent"));
        }
        Ok(())
    }
}

/// A generated scene and its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub seed: u64,
    /// Relative motions `T_1..T_N`.
    pub poses: Vec<Pose>,
    /// Observed (possibly noisy) flows `X_1..X_N`.
    pub flows: Vec<FlowField>,
    /// Noise-free flows.
    pub clean_flows: Vec<FlowField>,
    /// Depth of the visible surface for frames `0..=N`.
    pub depths: Vec<DepthMap>,
    /// Pixels of frame `t` seeing a moving object, for `t in 0..=N`.
    pub outlier_masks: Vec<Vec<bool>>,
}

impl SyntheticScene {
    pub fn intrinsics(&self) -> &Intrinsics {
        &self.spec.intrinsics
    }

    /// Fraction of frame-`t` pixels on moving objects.
    pub fn outlier_fraction(&self, t: usize) -> f64 {
        let m = &self.outlier_masks[t];
        m.iter().filter(|v| **v).count() as f64 / m.len() as f64
    }
}

#[derive(Clone, Copy, Debug)]
enum Surface {
    /// `n·X = d` in world (frame 0) coordinates.
    Plane { normal: Vector3<f64>, offset: f64 },
    /// Rectangle in the plane `z = depth` of world coordinates.
    Box { centre: Vector3<f64>, half: Vector2<f64> },
}

impl Surface {
    /// Ray parameter of the hit along `dir` (whose camera-frame z is 1, so the
    /// parameter equals the camera depth).
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Surface::Plane { normal, offset } => {
                let den = normal.dot(dir);
                if den.abs() < 1e-12 {
                    return None;
                }
                let s = (offset - normal.dot(origin)) / den;
                (s > 1e-6).then_some(s)
            }
            Surface::Box { centre, half } => {
                if dir.z.abs() < 1e-12 {
                    return None;
                }
                let s = (centre.z - origin.z) / dir.z;
                if s <= 1e-6 {
                    return None;
                }
                let p = origin + dir * s;
                ((p.x - centre.x).abs() <= half.x && (p.y - centre.y).abs() <= half.y).then_some(s)
            }
        }
    }
}

fn build_world<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Vec<Surface> {
    let slant = spec.ground_slant_deg.to_radians();
    let mut surfaces = vec![
        Surface::Plane {
            normal: Vector3::new(0.0, slant.cos(), -slant.sin()),
            offset: spec.ground_height,
        },
        Surface::Plane {
            normal: Vector3::x(),
            offset: spec.wall_offset,
        },
        Surface::Plane {
            normal: -Vector3::x(),
            offset: spec.wall_offset,
        },
        Surface::Plane {
            normal: Vector3::z(),
            offset: spec.backdrop_depth,
        },
    ];
    let near = (spec.motion.forward * spec.flows as f64 + 8.0).max(12.0);
    let far = (near + 30.0).min(spec.backdrop_depth - 1.0).max(near + 1.0);
    for _ in 0..spec.boxes {
        let half = Vector2::new(rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
        let centre = Vector3::new(
            rng.random_range(-0.75 * spec.wall_offset..0.75 * spec.wall_offset),
            rng.random_range(-1.5..spec.ground_height - 0.3),
            rng.random_range(near..far),
        );
        surfaces.push(Surface::Box { centre, half });
    }
    surfaces
}

fn random_motion<R: Rng>(spec: &MotionSpec, n: usize, rng: &mut R) -> Vec<Pose> {
    let yaw = spec.max_rotation_deg.to_radians();
    let j = spec.jitter;
    let mut sym = |b: f64| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
    (0..n)
        .map(|_| {
            let omega = Vector3::new(sym(yaw / 4.0), sym(yaw), sym(yaw / 4.0));
            // Camera displacement expressed in the previous camera frame.
            let c = Vector3::new(sym(j), sym(j / 4.0), spec.forward + sym(j));
            let r = Twist::new(Vector3::zeros(), omega).exp().rotation;
            Pose::new(r, -(r * c))
        })
        .collect()
}

/// What a pixel of frame `t` sees: camera depth and either a static world
/// point or a point on moving object `i` in camera coordinates.
enum Hit {
    Static { depth: f64, world: Vector3<f64> },
    Object { depth: f64, index: usize, camera: Vector3<f64> },
}

fn cast(
    spec: &SceneSpec,
    world: &[Surface],
    camera_to_world: &Pose,
    frame: usize,
    p: PixelCoord,
) -> Option<Hit> {
    let ray = spec.intrinsics.unproject(p);
    let origin = camera_to_world.translation;
    let dir = camera_to_world.rotation * ray;
    let mut best: Option<Hit> = world
        .iter()
        .filter_map(|s| s.hit(&origin, &dir))
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))))
        .map(|s| Hit::Static {
            depth: s,
            world: origin + dir * s,
        });
    for (index, o) in spec.moving_objects.iter().enumerate() {
        let depth = o.centre[2];
        let q = ray * depth;
        let cy = o.centre[1] + o.offset(frame);
        if (q.x - o.centre[0]).abs() <= o.half_width && (q.y - cy).abs() <= o.half_height {
            let nearer = match &best {
                Some(Hit::Static { depth: d, .. }) | Some(Hit::Object { depth: d, .. }) => depth < *d,
                None => true,
            };
            if nearer {
                best = Some(Hit::Object {
                    depth,
                    index,
                    camera: q,
                });
            }
        }
    }
    best
}

/// Generate a scene from `spec` and `seed`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = build_world(spec, &mut rng);
    let poses = random_motion(&spec.motion, spec.flows, &mut rng);
    let chain = chain_poses(&poses);
    let (w, h) = (spec.width, spec.height);
    let k = &spec.intrinsics;

    let mut depths = Vec::with_capacity(spec.flows + 1);
    let mut masks = Vec::with_capacity(spec.flows + 1);
    let mut clean_flows = Vec::with_capacity(spec.flows);
    for t in 0..=spec.flows {
        let to_world = chain[t].inverse();
        let mut depth = vec![f64::NAN; w * h];
        let mut mask = vec![false; w * h];
        let mut flow = vec![[0.0f32; 2]; w * h];
        let mut valid = vec![true; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let p = PixelCoord::new(x as f64, y as f64);
                let target = match cast(spec, &world, &to_world, t, p) {
                    Some(Hit::Static { depth: d, world: xw }) => {
                        depth[i] = d;
                        (t < spec.flows).then(|| chain[t + 1].transform(&xw))
                    }
                    Some(Hit::Object { depth: d, index, camera }) => {
                        depth[i] = d;
                        mask[i] = true;
                        let o = &spec.moving_objects[index];
                        (t < spec.flows).then(|| camera + Vector3::new(0.0, o.offset(t + 1) - o.offset(t), 0.0))
                    }
                    None => None,
                };
                if t < spec.flows {
                    match target.and_then(|q| k.project_point(&q)) {
                        Some(q) => {
                            let d = q - p;
                            flow[i] = [d.x as f32, d.y as f32];
                        }
                        None => valid[i] = false,
                    }
                }
            }
        }
        depths.push(DepthMap::from_vec(w, h, depth));
        masks.push(mask);
        if t < spec.flows {
            clean_flows.push(FlowField::with_validity(w, h, flow, valid));
        }
    }

    let flows = match &spec.noise {
        None => clean_flows.clone(),
        Some(model) => clean_flows
            .iter()
            .map(|f| {
                let mut noisy = f.clone();
                for v in noisy.data_mut() {
                    let mag = ((v[0] as f64).powi(2) + (v[1] as f64).powi(2)).sqrt();
                    let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
                    let epe = fisk_quantile(u, &model.adaptive_params(mag));
                    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    v[0] += (epe * angle.cos()) as f32;
                    v[1] += (epe * angle.sin()) as f32;
                }
                noisy
            })
            .collect(),
    };

    Ok(SyntheticScene {
        spec: spec.clone(),
        seed,
        poses,
        flows,
        clean_flows,
        depths,
        outlier_masks: masks,
    })
}
