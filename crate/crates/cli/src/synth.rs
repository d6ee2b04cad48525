use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use flowvo::flow::FlowField;
use flowvo::geometry::Intrinsics;
use flowvo::io::{write_disparity_png, write_flow, write_raster, write_trajectory, DisparityMap, Raster, TrajectoryFormat};
use flowvo::residual::ResidualModel;
use flowvo::synth::{generate_scene, MovingObject, SceneSpec};
use flowvo::trajectory::Trajectory;

use crate::report::{num, record};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FlowFormat {
    Flo,
    Png,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Noise {
    None,
    Kitti,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML scene description; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Number of flow fields (frames minus one).
    #[arg(long)]
    pub flows: Option<usize>,
    /// Image width; also recentres the principal point.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Focal length in pixels (both axes).
    #[arg(long)]
    pub focal: Option<f64>,
    #[arg(long, value_enum)]
    pub noise: Option<Noise>,
    /// Add the standard moving rectangle (about 15% of a 256×192 image).
    #[arg(long)]
    pub moving_object: bool,
    /// Stereo baseline used to convert depth to ground-truth disparity.
    #[arg(long, default_value_t = 0.54)]
    pub baseline: f64,
    #[arg(long, value_enum, default_value = "flo")]
    pub flow_format: FlowFormat,
}

fn scene_spec(args: &SynthArgs) -> Result<SceneSpec> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SceneSpec::default(),
    };
    if let Some(n) = args.flows {
        spec.flows = n;
    }
    let k = spec.intrinsics;
    let (mut fx, mut fy, mut cx, mut cy) = (k.fx, k.fy, k.cx, k.cy);
    if args.width.is_some() || args.height.is_some() {
        spec.width = args.width.unwrap_or(spec.width);
        spec.height = args.height.unwrap_or(spec.height);
        cx = spec.width as f64 / 2.0;
        cy = spec.height as f64 / 2.0;
    }
    if let Some(f) = args.focal {
        fx = f;
        fy = f;
    }
    spec.intrinsics = Intrinsics::new(fx, fy, cx, cy).map_err(|e| anyhow::anyhow!("intrinsics: {e}"))?;
    match args.noise {
        Some(Noise::None) => spec.noise = None,
        Some(Noise::Kitti) => spec.noise = Some(ResidualModel::KITTI),
        None => {}
    }
    if args.moving_object {
        spec.moving_objects.push(MovingObject::default_for_tests());
    }
    Ok(spec)
}

fn dir(root: &Path, name: &str) -> Result<PathBuf> {
    let d = root.join(name);
    fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    Ok(d)
}

fn write_flows(d: &Path, flows: &[FlowField], format: FlowFormat) -> Result<()> {
    let ext = match format {
        FlowFormat::Flo => "flo",
        FlowFormat::Png => "png",
    };
    for (i, f) in flows.iter().enumerate() {
        let p = d.join(format!("{i:06}.{ext}"));
        write_flow(&p, f).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    if args.baseline.is_nan() || args.baseline <= 0.0 {
        anyhow::bail!("--baseline must be positive");
    }
    let spec = scene_spec(&args)?;
    let scene = generate_scene(&spec, args.seed)?;
    let root = &args.output;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;

    write_flows(&dir(root, "flow")?, &scene.flows, args.flow_format)?;
    write_flows(&dir(root, "clean_flow")?, &scene.clean_flows, args.flow_format)?;
    let (depth_dir, disp_dir, mask_dir) = (dir(root, "depth")?, dir(root, "disparity")?, dir(root, "mask")?);
    let k = scene.intrinsics();
    for (t, depth) in scene.depths.iter().enumerate() {
        write_raster(&depth_dir.join(format!("{t:06}.fvr")), &Raster::from_depth(depth))?;
        let disparity: Vec<f64> = depth
            .data()
            .iter()
            .zip(depth.validity())
            .map(|(d, ok)| if *ok { k.fx * args.baseline / d } else { 0.0 })
            .collect();
        write_disparity_png(
            &disp_dir.join(format!("{t:06}.png")),
            &DisparityMap::new(spec.width, spec.height, disparity),
        )?;
        let mask = Raster {
            width: spec.width,
            height: spec.height,
            values: scene.outlier_masks[t].iter().map(|m| if *m { 1.0 } else { 0.0 }).collect(),
        };
        write_raster(&mask_dir.join(format!("{t:06}.fvr")), &mask)?;
    }
    fs::write(
        root.join("calib.txt"),
        format!("P0: {} 0 {} 0 0 {} {} 0 0 0 1 0\n", k.fx, k.cx, k.fy, k.cy),
    )?;
    let traj = Trajectory::from_relative(&scene.poses);
    write_trajectory(&root.join("poses.txt"), &traj, TrajectoryFormat::Kitti)?;
    fs::write(root.join("scene.toml"), toml::to_string(&spec).context("serialising scene")?)?;

    let outliers = (0..scene.depths.len()).map(|t| scene.outlier_fraction(t)).sum::<f64>() / scene.depths.len() as f64;
    println!(
        "wrote {} flows of {}×{} to {}",
        scene.flows.len(),
        spec.width,
        spec.height,
        root.display()
    );
    println!(
        "{}",
        record(
            "synth",
            &[
                ("flows", scene.flows.len().to_string()),
                ("width", spec.width.to_string()),
                ("height", spec.height.to_string()),
                ("seed", args.seed.to_string()),
                ("path_length", num(traj.path_length(), 6)),
                ("moving_fraction", num(outliers, 6)),
            ],
        )
    );
    Ok(())
}
