use flowvo::depth::{update_depth_map, update_rigidness, BatchView, DepthMap, InverseDepthRange, RigidnessMaps, ScoreKind};
use flowvo::geometry::Pose;
use flowvo::pipeline::{run_batch, BatchConfig};
use flowvo::pose::{update_pose, PoseConfig};
use flowvo::synth::{generate_scene, MovingObject, SceneSpec};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn errors_deg(est: &Pose, truth: &Pose) -> (f64, f64) {
    let rot = est.inverse().compose(truth).rotation_angle().to_degrees();
    let cos = est.translation.normalize().dot(&truth.translation.normalize());
    (rot, cos.clamp(-1.0, 1.0).acos().to_degrees())
}

#[test]
fn pose_update_survives_corrupted_flow() {
    let spec = SceneSpec {
        flows: 1,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec, 11).unwrap();
    let mut flows = scene.flows.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut corrupted = 0;
    for f in flows.iter_mut() {
        for y in 0..f.height() {
            for x in 0..f.width() {
                if rng.random::<f64>() < 0.3 {
                    let jump = Vector2::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0));
                    f.set(x, y, f.get(x, y) + jump);
                    corrupted += 1;
                }
            }
        }
    }
    assert!(corrupted > 14_000);

    // True depth, no rigidness information: the kernel vote alone must
    // reject the corrupted tracks.
    let model = BatchConfig::default().observation_model();
    let view = BatchView::new(scene.intrinsics(), &flows, &scene.poses, &model);
    let ones = vec![1.0; spec.width * spec.height];
    let est = update_pose(&view, 1, &scene.depths[0], &ones, None, &PoseConfig::default(), &mut rng).unwrap();
    let (rot, dir) = errors_deg(&est, &scene.poses[0]);
    assert!(rot < 0.2 && dir < 0.5, "rotation {rot} deg, direction {dir} deg");
}

#[test]
fn batch_flags_moving_object() {
    let spec = SceneSpec {
        moving_objects: vec![MovingObject::default_for_tests()],
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec, 5).unwrap();
    let out = run_batch(&scene.flows, scene.intrinsics(), &BatchConfig::default(), None).unwrap();
    let mask = &scene.outlier_masks[0];
    let static_mask: Vec<bool> = mask.iter().map(|m| !m).collect();
    for k in 0..out.rigidness.frames() {
        let inside = out.rigidness.masked_mean(k, mask).unwrap();
        let outside = out.rigidness.masked_mean(k, &static_mask).unwrap();
        // Static pixels drift out of view later in the batch, which lowers
        // their mean rigidness; near the reference frame they are clean.
        let floor = if k < 2 { 0.8 } else { inside };
        assert!(inside < 0.3 && outside > floor, "flow {k}: inside {inside}, outside {outside}");
    }
    for (est, truth) in out.poses.iter().zip(&scene.poses) {
        let (rot, dir) = errors_deg(est, truth);
        assert!(rot < 0.1 && dir < 1.0, "rotation {rot} deg, direction {dir} deg");
    }
}

/// Median of `|ln(s·d̂/d)|` over static pixels, with `s` the median ratio.
fn log_depth_error(est: &DepthMap, truth: &DepthMap, mask: &[bool]) -> f64 {
    let mut ratios: Vec<f64> = (0..est.len())
        .filter(|&i| !mask[i] && est.validity()[i] && truth.validity()[i])
        .map(|i| truth.data()[i] / est.data()[i])
        .collect();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let s = ratios[ratios.len() / 2];
    let mut err: Vec<f64> = ratios.iter().map(|r| (r / s).ln().abs()).collect();
    err.sort_by(|a, b| a.total_cmp(b));
    err[err.len() / 2]
}

#[test]
fn depth_sweeps_recover_structure_from_random_start() {
    let spec = SceneSpec {
        moving_objects: vec![MovingObject::default_for_tests()],
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec, 8).unwrap();
    let model = BatchConfig::default().observation_model();
    let view = BatchView::new(scene.intrinsics(), &scene.flows, &scene.poses, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = &scene.depths[0];
    let range = InverseDepthRange::around_median(truth.median().unwrap());
    let mut depth = DepthMap::from_fn(spec.width, spec.height, |_, _| 1.0 / range.sample(&mut rng));
    let start = log_depth_error(&depth, truth, &scene.outlier_masks[0]);
    let mut q = RigidnessMaps::ones(spec.width, spec.height, spec.flows);
    for _ in 0..3 {
        depth = update_depth_map(&view, &depth, &q, ScoreKind::Mie, &range, &mut rng).depth;
        q = update_rigidness(&view, &depth, 0.9, true);
    }
    let end = log_depth_error(&depth, truth, &scene.outlier_masks[0]);
    assert!(start > 0.3 && end < 0.05, "median log depth error {start} -> {end}");
}

#[test]
fn mie_and_mle_agree_on_clean_rigid_flow() {
    let spec = SceneSpec {
        noise: None,
        flows: 3,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec, 2).unwrap();
    let model = BatchConfig::default().observation_model();
    let view = BatchView::new(scene.intrinsics(), &scene.flows, &scene.poses, &model);
    let range = InverseDepthRange::around_median(scene.depths[0].median().unwrap());
    let q = RigidnessMaps::ones(spec.width, spec.height, spec.flows);
    let init = scene.depths[0].scaled(1.4);
    let mut results = Vec::new();
    for kind in [ScoreKind::Mie, ScoreKind::Mle] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut d = init.clone();
        for _ in 0..2 {
            d = update_depth_map(&view, &d, &q, kind, &range, &mut rng).depth;
        }
        results.push(log_depth_error(&d, &scene.depths[0], &vec![false; d.len()]));
    }
    assert!(results.iter().all(|e| *e < 0.02), "{results:?}");
}
