use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;
use flowvo::depth::{update_depth_map, update_rigidness, BatchView, InverseDepthRange, RigidnessMaps};
use flowvo::geometry::{epipolar_bootstrap, Pose};
use flowvo::pipeline::{run_batch, BatchConfig};
use flowvo::pose::{update_pose, PoseConfig};
use flowvo::synth::{generate_scene, SceneSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::report::{num, record, Table};
use crate::Numerical;

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 192)]
    pub height: usize,
    /// Flows per batch.
    #[arg(long, default_value_t = 5)]
    pub flows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pose-sampling strides of the accuracy/time sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 8, 16])]
    pub strides: Vec<usize>,
    /// Timed repetitions per measurement (the minimum is reported).
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

fn time_ms<T>(repeats: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let v = f();
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
        out = Some(v);
    }
    (best, out.unwrap())
}

/// Rotation error in degrees and translation direction error in degrees.
fn pose_error(est: &Pose, truth: &Pose) -> (f64, f64) {
    let (dr, _) = est.distance(truth);
    let cos = est.translation.normalize().dot(&truth.translation.normalize()).clamp(-1.0, 1.0);
    (dr.to_degrees(), cos.acos().to_degrees())
}

pub fn benchmark(args: BenchArgs) -> Result<()> {
    if args.flows == 0 || args.strides.contains(&0) {
        bail!("--flows and --strides must be positive");
    }
    let spec = SceneSpec {
        width: args.width,
        height: args.height,
        intrinsics: flowvo::geometry::Intrinsics::new(
            200.0 * args.width as f64 / 256.0,
            200.0 * args.width as f64 / 256.0,
            args.width as f64 / 2.0,
            args.height as f64 / 2.0,
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?,
        flows: args.flows,
        ..SceneSpec::default()
    };
    let (t_scene, scene) = time_ms(1, || generate_scene(&spec, args.seed));
    let scene = scene?;
    let k = scene.intrinsics();
    let config = BatchConfig::default();
    let model = config.observation_model();
    let depth = &scene.depths[0];
    let view = BatchView::new(k, &scene.flows, &scene.poses, &model);
    let n = args.flows;
    let ones = vec![1.0; depth.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);

    let mut components = Vec::new();
    components.push(("scene generation", t_scene));
    let (t, _) = time_ms(args.repeats, || epipolar_bootstrap(&scene.flows[0], k, config.bootstrap_stride, &mut rng));
    components.push(("epipolar bootstrap", t));
    let (t, _) = time_ms(args.repeats, || {
        update_pose(&view, n, depth, &ones, Some(&scene.poses[n - 1]), &config.pose, &mut rng)
    });
    components.push(("pose update per frame", t));
    let (t, _) = time_ms(args.repeats, || update_rigidness(&view, depth, config.gamma, true));
    components.push(("rigidness update", t));
    let q = RigidnessMaps::ones(depth.width(), depth.height(), n);
    let range = InverseDepthRange::around_median(depth.median().unwrap_or(1.0));
    let (t, _) = time_ms(args.repeats, || update_depth_map(&view, depth, &q, config.score, &range, &mut rng));
    components.push(("depth update", t));
    let (t, batch) = time_ms(1, || run_batch(&scene.flows, k, &config, None));
    let batch = batch.map_err(|e| Numerical(e.to_string()))?;
    components.push(("full batch", t));
    let per_iter = t / batch.diagnostics.len().max(1) as f64;
    components.push(("full batch per iteration", per_iter));

    let mut table = Table::new(&["component", "time (ms)"]);
    let mut records = Vec::new();
    for (name, ms) in &components {
        table.row(vec![name.to_string(), num(*ms, 2)]);
        records.push(record("timing", &[("component", name.replace(' ', "_")), ("ms", num(*ms, 4))]));
    }
    println!("{} flows of {}×{}, seed {}", n, args.width, args.height, args.seed);
    print!("{}", table.render());

    // Pose accuracy against sampling density, with ground-truth depth.
    let mut sweep = Table::new(&["stride", "time (ms)", "rotation (deg)", "direction (deg)"]);
    for &stride in &args.strides {
        let pose_config = PoseConfig { stride, ..config.pose };
        let (ms, est) = time_ms(args.repeats, || {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            update_pose(&view, n, depth, &ones, Some(&scene.poses[n - 1]), &pose_config, &mut rng)
        });
        let (rot, dir) = match est {
            Ok(p) => pose_error(&p, &scene.poses[n - 1]),
            Err(_) => (f64::NAN, f64::NAN),
        };
        sweep.row(vec![stride.to_string(), num(ms, 2), num(rot, 4), num(dir, 4)]);
        records.push(record(
            "stride_sweep",
            &[
                ("stride", stride.to_string()),
                ("ms", num(ms, 4)),
                ("rotation_deg", num(rot, 6)),
                ("direction_deg", num(dir, 6)),
            ],
        ));
    }
    print!("{}", sweep.render());
    for r in records {
        println!("{r}");
    }
    Ok(())
}
