use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use flowvo::depth::ScoreKind;
use flowvo::geometry::Intrinsics;
use flowvo::io::{read_calibration, read_config, write_raster, write_trajectory, FlowDirectory, Raster, TrajectoryFormat};
use flowvo::pipeline::{run_sequence_with, BatchConfig, FlowSource};
use flowvo::pose::KernelCovariance;
use flowvo::residual::{ResidualKind, ResidualModel};

use crate::report::{num, record, Table};
use crate::Numerical;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Kitti,
    Tum,
}

impl From<Format> for TrajectoryFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Kitti => TrajectoryFormat::Kitti,
            Format::Tum => TrajectoryFormat::Tum,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Residual {
    Fisk,
    Gaussian,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Score {
    Mie,
    Mle,
}

#[derive(Args)]
pub struct RunArgs {
    /// Directory of `.flo` or KITTI `.png` flow files, in file-name order.
    #[arg(long)]
    pub flows: PathBuf,
    /// Calibration file (a KITTI `P0:` line or `fx fy cx cy`).
    #[arg(long, conflicts_with = "intrinsics", required_unless_present = "intrinsics")]
    pub calib: Option<PathBuf>,
    /// Intrinsics as `fx,fy,cx,cy`.
    #[arg(long, value_delimiter = ',')]
    pub intrinsics: Option<Vec<f64>>,
    /// TOML configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trajectory output file (camera-to-world poses).
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "kitti")]
    pub format: Format,
    /// Write each batch's depth map and rigidness sums here.
    #[arg(long)]
    pub depth_dir: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Command-line overrides of [`BatchConfig`].
#[derive(Args, Default)]
pub struct Overrides {
    #[arg(long)]
    pub window_size: Option<usize>,
    /// Residual constants `a1,a2,b1,b2`.
    #[arg(long, value_delimiter = ',')]
    pub residual_constants: Option<Vec<f64>>,
    /// Outlier density ratio.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub residual: Option<Residual>,
    #[arg(long, value_enum)]
    pub score: Option<Score>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Pixel stride of pose-candidate sampling.
    #[arg(long)]
    pub pose_stride: Option<usize>,
    /// Meanshift kernel variance of translation (one value or three).
    #[arg(long, value_delimiter = ',')]
    pub sigma_translation: Option<Vec<f64>>,
    /// Meanshift kernel variance of rotation (one value or three).
    #[arg(long, value_delimiter = ',')]
    pub sigma_rotation: Option<Vec<f64>>,
    /// Meanshift restarts.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub min_samples: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub convergence_eps: Option<f64>,
    #[arg(long)]
    pub bootstrap_stride: Option<usize>,
    #[arg(long)]
    pub min_flow_px: Option<f64>,
    #[arg(long)]
    pub min_triangulated_fraction: Option<f64>,
    /// Metric camera height; enables ground-plane scale recovery.
    #[arg(long)]
    pub camera_height: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn triple(values: &[f64], name: &str) -> Result<[f64; 3]> {
    match *values {
        [v] => Ok([v; 3]),
        [a, b, c] => Ok([a, b, c]),
        _ => bail!("--{name} takes one or three values"),
    }
}

impl Overrides {
    pub fn apply(&self, c: &mut BatchConfig) -> Result<()> {
        if let Some(v) = self.window_size {
            c.window_size = v;
        }
        if let Some(v) = &self.residual_constants {
            if v.len() != 4 {
                bail!("--residual-constants takes four values a1,a2,b1,b2");
            }
            c.residual = ResidualModel {
                a1: v[0],
                a2: v[1],
                b1: v[2],
                b2: v[3],
                ..c.residual
            };
        }
        if let Some(v) = self.lambda {
            c.residual = c.residual.with_lambda(v);
        }
        if let Some(v) = self.residual {
            c.residual_kind = match v {
                Residual::Fisk => ResidualKind::Fisk,
                Residual::Gaussian => ResidualKind::Gaussian,
            };
        }
        if let Some(v) = self.score {
            c.score = match v {
                Score::Mie => ScoreKind::Mie,
                Score::Mle => ScoreKind::Mle,
            };
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.pose_stride {
            c.pose.stride = v;
        }
        if let Some(v) = &self.sigma_translation {
            c.pose.kernel = KernelCovariance {
                translation: triple(v, "sigma-translation")?,
                ..c.pose.kernel
            };
        }
        if let Some(v) = &self.sigma_rotation {
            c.pose.kernel = KernelCovariance {
                rotation: triple(v, "sigma-rotation")?,
                ..c.pose.kernel
            };
        }
        if let Some(v) = self.seeds {
            c.pose.seeds = v;
        }
        if let Some(v) = self.min_samples {
            c.pose.min_samples = v;
        }
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.convergence_eps {
            c.convergence_eps = v;
        }
        if let Some(v) = self.bootstrap_stride {
            c.bootstrap_stride = v;
        }
        if let Some(v) = self.min_flow_px {
            c.min_flow_px = v;
        }
        if let Some(v) = self.min_triangulated_fraction {
            c.min_triangulated_fraction = v;
        }
        if let Some(v) = self.camera_height {
            c.camera_height = Some(v);
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        Ok(())
    }
}

pub fn load_intrinsics(calib: Option<&Path>, values: Option<&[f64]>) -> Result<Intrinsics> {
    match (calib, values) {
        (Some(path), _) => read_calibration(path).with_context(|| format!("reading {}", path.display())),
        (None, Some(&[fx, fy, cx, cy])) => Intrinsics::new(fx, fy, cx, cy).map_err(|e| anyhow!("intrinsics: {e}")),
        _ => bail!("pass --calib or --intrinsics fx,fy,cx,cy"),
    }
}

pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<BatchConfig> {
    let mut config = match path {
        Some(p) => read_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => BatchConfig::default(),
    };
    overrides.apply(&mut config)?;
    config.validate()?;
    Ok(config)
}

pub fn run(args: RunArgs) -> Result<()> {
    let k = load_intrinsics(args.calib.as_deref(), args.intrinsics.as_deref())?;
    let config = load_config(args.config.as_deref(), &args.overrides)?;
    let source = FlowDirectory::open(&args.flows).with_context(|| format!("listing {}", args.flows.display()))?;
    if source.is_empty() {
        bail!("no .flo or .png files in {}", args.flows.display());
    }
    if let Some(dir) = &args.depth_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let mut dump_error = None;
    let result = run_sequence_with(&source, &k, &config, |record, batch| {
        eprintln!(
            "batch {} flows {}..{}: {}",
            record.index,
            record.start,
            record.end,
            record.error.as_deref().unwrap_or("ok")
        );
        if let (Some(dir), Some(batch), None) = (&args.depth_dir, batch, &dump_error) {
            // Depth belongs to the batch's first frame.
            let depth = Raster::from_depth(&batch.depth.scaled(record.chain_scale));
            let sums = Raster {
                width: depth.width,
                height: depth.height,
                values: batch.rigidness.pixel_sums().iter().map(|v| *v as f32).collect(),
            };
            let written = write_raster(&dir.join(format!("depth_{:06}.fvr", record.start)), &depth)
                .and_then(|_| write_raster(&dir.join(format!("rigidness_{:06}.fvr", record.start)), &sums));
            if let Err(e) = written {
                dump_error = Some(e);
            }
        }
    })?;
    if let Some(e) = dump_error {
        return Err(e).context("writing depth dumps");
    }
    write_trajectory(&args.output, &result.trajectory, args.format.into())
        .with_context(|| format!("writing {}", args.output.display()))?;

    let mut table = Table::new(&["batch", "flows", "init", "iters", "converged", "chain scale", "ground scale", "status"]);
    let mut records = Vec::new();
    for b in &result.batches {
        table.row(vec![
            b.index.to_string(),
            format!("{}..{}", b.start, b.end),
            if b.bootstrapped { "bootstrap" } else { "prior" }.to_string(),
            b.iterations.to_string(),
            b.converged.to_string(),
            num(b.chain_scale, 4),
            b.ground_scale.map_or("-".to_string(), |g| num(g, 4)),
            if b.error.is_some() { "fallback" } else { "ok" }.to_string(),
        ]);
        records.push(record(
            "batch",
            &[
                ("index", b.index.to_string()),
                ("start", b.start.to_string()),
                ("end", b.end.to_string()),
                ("bootstrapped", b.bootstrapped.to_string()),
                ("iterations", b.iterations.to_string()),
                ("converged", b.converged.to_string()),
                ("chain_scale", num(b.chain_scale, 6)),
                ("ground_scale", b.ground_scale.map_or("none".to_string(), |g| num(g, 6))),
                ("failed", b.error.is_some().to_string()),
            ],
        ));
    }
    let fallbacks = result.fallback.iter().filter(|f| **f).count();
    print!("{}", table.render());
    for r in records {
        println!("{r}");
    }
    println!(
        "{}",
        record(
            "run",
            &[
                ("frames", result.trajectory.len().to_string()),
                ("batches", result.batches.len().to_string()),
                ("fallback_flows", fallbacks.to_string()),
                ("path_length", num(result.trajectory.path_length(), 6)),
            ],
        )
    );
    if result.batches.iter().all(|b| b.error.is_some()) {
        return Err(Numerical(format!(
            "every batch failed (first: {})",
            result.batches[0].error.as_deref().unwrap_or("")
        ))
        .into());
    }
    Ok(())
}
