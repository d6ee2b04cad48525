use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use flowvo::eval::{depth_metrics, kitti_metrics, segment_ate, KITTI_LENGTHS};
use flowvo::io::{read_disparity_png, read_raster, read_trajectory, TrajectoryFormat};
use flowvo::trajectory::Trajectory;

use crate::report::{num, record, Table};
use crate::run::Format;

#[derive(Args)]
pub struct OdometryArgs {
    /// Estimated trajectory file, or a directory of `<sequence>.txt` files.
    #[arg(long)]
    pub estimate: PathBuf,
    /// Ground truth laid out like `--estimate`.
    #[arg(long)]
    pub groundtruth: PathBuf,
    #[arg(long, value_enum, default_value = "kitti")]
    pub format: Format,
    /// Format of the ground truth, if different.
    #[arg(long, value_enum)]
    pub gt_format: Option<Format>,
    /// Segment lengths in metres of ground-truth path.
    #[arg(long, value_delimiter = ',', default_values_t = KITTI_LENGTHS.to_vec())]
    pub lengths: Vec<f64>,
    /// Frame step between segment start frames.
    #[arg(long, default_value_t = 10)]
    pub step: usize,
    /// Frames per segment of the aligned trajectory error.
    #[arg(long, default_value_t = 6)]
    pub segment_frames: usize,
    /// Rescale the estimate by the least-squares factor onto ground truth
    /// (for trajectories without metric scale).
    #[arg(long)]
    pub scale_align: bool,
}

#[derive(Args)]
pub struct DepthArgs {
    /// Estimated depth raster.
    #[arg(long)]
    pub depth: PathBuf,
    /// Ground-truth disparity, 16-bit KITTI PNG.
    #[arg(long)]
    pub disparity: PathBuf,
    /// Per-pixel rigidness sums; without it every pixel is in every bucket.
    #[arg(long)]
    pub rigidness_sum: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0])]
    pub thresholds: Vec<f64>,
}

/// Pairs of `(name, estimate, groundtruth)` files.
fn sequences(estimate: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if estimate.is_file() {
        if !gt.is_file() {
            bail!("{} is a file but {} is not", estimate.display(), gt.display());
        }
        let name = estimate.file_stem().map_or("sequence".into(), |s| s.to_string_lossy().into_owned());
        return Ok(vec![(name, estimate.to_path_buf(), gt.to_path_buf())]);
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(estimate).with_context(|| format!("listing {}", estimate.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            let name = path.file_name().unwrap();
            let truth = gt.join(name);
            if !truth.is_file() {
                bail!("no ground truth {} for {}", truth.display(), path.display());
            }
            out.insert(path.file_stem().unwrap().to_string_lossy().into_owned(), (path.clone(), truth));
        }
    }
    if out.is_empty() {
        bail!("no .txt trajectories in {}", estimate.display());
    }
    Ok(out.into_iter().map(|(n, (e, g))| (n, e, g)).collect())
}

/// Restrict both trajectories to the frames they share.
fn common_frames(est: &Trajectory, gt: &Trajectory) -> Result<(Trajectory, Trajectory)> {
    let truth: BTreeMap<usize, _> = gt.entries().iter().copied().collect();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, p) in est.entries() {
        if let Some(g) = truth.get(i) {
            a.push((*i, *p));
            b.push((*i, *g));
        }
    }
    if a.len() < 2 {
        bail!("estimate and ground truth share {} frames", a.len());
    }
    Ok((Trajectory::new(a)?, Trajectory::new(b)?))
}

/// Least-squares factor `s` minimising `Σ‖s·p − g‖²` over positions relative
/// to the first frame.
fn scale_factor(est: &Trajectory, gt: &Trajectory) -> f64 {
    let (p, g) = (est.positions(), gt.positions());
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in p.iter().zip(&g) {
        let (a, b) = (a - p[0], b - g[0]);
        num += a.dot(&b);
        den += a.norm_squared();
    }
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

pub fn odometry(args: OdometryArgs) -> Result<()> {
    if args.step == 0 || args.segment_frames < 2 || args.lengths.is_empty() {
        bail!("--step must be positive, --segment-frames at least 2 and --lengths non-empty");
    }
    let est_format: TrajectoryFormat = args.format.into();
    let gt_format: TrajectoryFormat = args.gt_format.unwrap_or(args.format).into();
    let mut table = Table::new(&["sequence", "frames", "length (m)", "scale", "trans (%)", "rot (deg/m)", "ATE"]);
    let mut records = Vec::new();
    let mut totals = (0.0, 0.0, 0usize);
    let mut scored = 0;
    for (name, est_path, gt_path) in sequences(&args.estimate, &args.groundtruth)? {
        let est = read_trajectory(&est_path, est_format).with_context(|| format!("reading {}", est_path.display()))?;
        let gt = read_trajectory(&gt_path, gt_format).with_context(|| format!("reading {}", gt_path.display()))?;
        let (mut est, gt) = common_frames(&est, &gt).with_context(|| format!("sequence {name}"))?;
        let scale = if args.scale_align { scale_factor(&est, &gt) } else { 1.0 };
        est = est.scaled(scale);

        let kitti = kitti_metrics(&est, &gt, &args.lengths, args.step);
        let ate = segment_ate(&est, &gt, args.segment_frames);
        if let (Err(e), Err(_)) = (&kitti, &ate) {
            eprintln!("sequence {name}: {e}");
        }
        let mut fields = vec![
            ("sequence", name.clone()),
            ("frames", gt.len().to_string()),
            ("length", num(gt.path_length(), 3)),
            ("scale", num(scale, 6)),
        ];
        let mut row = vec![name.clone(), gt.len().to_string(), num(gt.path_length(), 1), num(scale, 4)];
        match &kitti {
            Ok(m) => {
                totals.0 += m.translation_pct;
                totals.1 += m.rotation_deg_per_m;
                totals.2 += 1;
                row.push(num(m.translation_pct, 3));
                row.push(num(m.rotation_deg_per_m, 5));
                fields.push(("translation_pct", num(m.translation_pct, 6)));
                fields.push(("rotation_deg_per_m", num(m.rotation_deg_per_m, 8)));
                for &l in &args.lengths {
                    if let Some((t, r)) = m.by_length(l) {
                        records.push(record(
                            "odometry_length",
                            &[
                                ("sequence", name.clone()),
                                ("length", num(l, 1)),
                                ("translation_pct", num(t, 6)),
                                ("rotation_deg_per_m", num(r, 8)),
                            ],
                        ));
                    }
                }
            }
            Err(_) => {
                row.push("-".into());
                row.push("-".into());
            }
        }
        match &ate {
            Ok(v) => {
                row.push(num(*v, 4));
                fields.push(("segment_ate", num(*v, 6)));
            }
            Err(_) => row.push("-".into()),
        }
        if kitti.is_ok() || ate.is_ok() {
            scored += 1;
        }
        table.row(row);
        records.push(record("odometry", &fields));
    }
    if scored == 0 {
        bail!("no sequence could be scored");
    }
    if totals.2 > 0 {
        let n = totals.2 as f64;
        let (t, r) = (totals.0 / n, totals.1 / n);
        table.row(vec![
            "average".into(),
            "".into(),
            "".into(),
            "".into(),
            num(t, 3),
            num(r, 5),
            "".into(),
        ]);
        records.push(record(
            "odometry_average",
            &[
                ("sequences", totals.2.to_string()),
                ("translation_pct", num(t, 6)),
                ("rotation_deg_per_m", num(r, 8)),
            ],
        ));
    }
    print!("{}", table.render());
    for r in records {
        println!("{r}");
    }
    Ok(())
}

pub fn depth(args: DepthArgs) -> Result<()> {
    let depth = read_raster(&args.depth)
        .with_context(|| format!("reading {}", args.depth.display()))?
        .to_depth();
    let truth = read_disparity_png(&args.disparity).with_context(|| format!("reading {}", args.disparity.display()))?;
    let sums: Vec<f64> = match &args.rigidness_sum {
        Some(p) => {
            let r = read_raster(p).with_context(|| format!("reading {}", p.display()))?;
            if (r.width, r.height) != (depth.width(), depth.height()) {
                bail!("rigidness raster is {}×{}, depth is {}×{}", r.width, r.height, depth.width(), depth.height());
            }
            r.values.iter().map(|v| *v as f64).collect()
        }
        None => vec![f64::INFINITY; depth.len()],
    };
    let buckets = depth_metrics(&depth, &truth, &sums, &args.thresholds)?;
    let mut table = Table::new(&["rigidness >", "pixels", "density (%)", "EPE (px)", "outliers (%)"]);
    for b in &buckets {
        table.row(vec![
            num(b.threshold, 1),
            b.count.to_string(),
            num(100.0 * b.density, 2),
            num(b.epe, 3),
            num(b.outlier_pct, 2),
        ]);
    }
    print!("{}", table.render());
    for b in &buckets {
        println!(
            "{}",
            record(
                "depth_bucket",
                &[
                    ("threshold", num(b.threshold, 3)),
                    ("count", b.count.to_string()),
                    ("density", num(b.density, 6)),
                    ("epe", num(b.epe, 6)),
                    ("outlier_pct", num(b.outlier_pct, 4)),
                ],
            )
        );
    }
    Ok(())
}
