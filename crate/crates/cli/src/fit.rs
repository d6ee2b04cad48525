use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use flowvo::eval::flow_residuals;
use flowvo::io::{read_residual_samples, FlowDirectory};
use flowvo::pipeline::{BatchConfig, FlowSource};
use flowvo::residual::{
    fisk_cdf, fit_gaussian, fit_residual_model, gaussian_cdf, ks_statistic, ks_statistic_with, ResidualModel,
};

use crate::report::{num, record, Table};

#[derive(Args)]
pub struct FitArgs {
    /// Text file of `magnitude epe` pairs, one per line.
    #[arg(long, conflicts_with_all = ["estimated", "groundtruth"], required_unless_present = "estimated")]
    pub samples: Option<PathBuf>,
    /// Directory of estimated flows.
    #[arg(long, requires = "groundtruth")]
    pub estimated: Option<PathBuf>,
    /// Directory of ground-truth flows matching `--estimated` by order.
    #[arg(long, requires = "estimated")]
    pub groundtruth: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Upper end of the magnitude range; samples beyond it are ignored.
    #[arg(long, default_value_t = 100.0)]
    pub max_magnitude: f64,
    /// Outlier ratio written into the fitted model.
    #[arg(long, default_value_t = ResidualModel::KITTI.lambda)]
    pub lambda: f64,
    /// Write a configuration file using the fitted constants.
    #[arg(long)]
    pub write_config: Option<PathBuf>,
}

fn load_samples(args: &FitArgs) -> Result<Vec<(f64, f64)>> {
    if let Some(p) = &args.samples {
        return read_residual_samples(p).with_context(|| format!("reading {}", p.display()));
    }
    let (est_dir, gt_dir) = (args.estimated.as_ref().unwrap(), args.groundtruth.as_ref().unwrap());
    let est = FlowDirectory::open(est_dir).with_context(|| format!("listing {}", est_dir.display()))?;
    let gt = FlowDirectory::open(gt_dir).with_context(|| format!("listing {}", gt_dir.display()))?;
    if est.len() != gt.len() || est.is_empty() {
        bail!("{} estimated flows against {} ground-truth flows", est.len(), gt.len());
    }
    let mut out = Vec::new();
    for i in 0..est.len() {
        let a = est.load(i).map_err(|e| anyhow::anyhow!("{}: {e}", est.paths[i].display()))?;
        let b = gt.load(i).map_err(|e| anyhow::anyhow!("{}: {e}", gt.paths[i].display()))?;
        out.extend(flow_residuals(&a, &b).with_context(|| format!("flow {}", est.paths[i].display()))?);
    }
    Ok(out)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn fit(args: FitArgs) -> Result<()> {
    let samples = load_samples(&args)?;
    let fitted = fit_residual_model(&samples, args.bins, args.max_magnitude)?;
    let model = fitted.into_model(args.lambda)?;

    // Goodness of fit per bin, against the per-bin Fisk and Gaussian fits.
    let width = args.max_magnitude / args.bins as f64;
    let mut table = Table::new(&["magnitude", "samples", "alpha", "beta", "Fisk D", "Gaussian D"]);
    let mut records = Vec::new();
    let (mut fisk_total, mut gauss_total, mut n_total) = (0.0, 0.0, 0usize);
    for b in &fitted.bins {
        let bin = ((b.mean_magnitude / width) as usize).min(args.bins - 1);
        let (lo, hi) = (bin as f64 * width, (bin + 1) as f64 * width);
        let epe = sorted(
            samples
                .iter()
                .filter(|(m, e)| {
                    let idx = ((*m / width) as usize).min(args.bins - 1);
                    *m >= 0.0 && *m <= args.max_magnitude && *e > 0.0 && e.is_finite() && idx == bin
                })
                .map(|s| s.1)
                .collect(),
        );
        let d_fisk = ks_statistic(&epe, &b.params);
        let (mean, std) = fit_gaussian(&epe);
        let d_gauss = ks_statistic_with(&epe, |x| gaussian_cdf(x, mean, std));
        fisk_total += d_fisk * epe.len() as f64;
        gauss_total += d_gauss * epe.len() as f64;
        n_total += epe.len();
        table.row(vec![
            format!("{}-{}", num(lo, 1), num(hi, 1)),
            b.count.to_string(),
            num(b.params.alpha, 4),
            num(b.params.beta, 4),
            num(d_fisk, 4),
            num(d_gauss, 4),
        ]);
        records.push(record(
            "residual_bin",
            &[
                ("mean_magnitude", num(b.mean_magnitude, 4)),
                ("count", b.count.to_string()),
                ("alpha", num(b.params.alpha, 6)),
                ("beta", num(b.params.beta, 6)),
                ("ks_fisk", num(d_fisk, 6)),
                ("ks_gaussian", num(d_gauss, 6)),
            ],
        ));
    }

    // The fitted adaptive model over all samples, via the probability
    // integral transform.
    let pit = sorted(
        samples
            .iter()
            .filter(|(m, e)| *m >= 0.0 && *m <= args.max_magnitude && *e > 0.0 && e.is_finite())
            .map(|&(m, e)| fisk_cdf(e, &model.adaptive_params(m)))
            .collect(),
    );
    let d_model = ks_statistic_with(&pit, |u| u.clamp(0.0, 1.0));

    print!("{}", table.render());
    println!(
        "a1 = {}  a2 = {}  b1 = {}  b2 = {}  lambda = {}",
        num(model.a1, 6),
        num(model.a2, 6),
        num(model.b1, 6),
        num(model.b2, 6),
        num(model.lambda, 4)
    );
    let n = n_total.max(1) as f64;
    println!(
        "mean K-S D: Fisk {}  Gaussian {}  adaptive model {}",
        num(fisk_total / n, 4),
        num(gauss_total / n, 4),
        num(d_model, 4)
    );
    for r in records {
        println!("{r}");
    }
    println!(
        "{}",
        record(
            "residual_model",
            &[
                ("a1", num(model.a1, 8)),
                ("a2", num(model.a2, 8)),
                ("b1", num(model.b1, 8)),
                ("b2", num(model.b2, 8)),
                ("lambda", num(model.lambda, 6)),
                ("samples", pit.len().to_string()),
                ("ks_fisk", num(fisk_total / n, 6)),
                ("ks_gaussian", num(gauss_total / n, 6)),
                ("ks_model", num(d_model, 6)),
            ],
        )
    );

    if let Some(path) = &args.write_config {
        let config = BatchConfig {
            residual: model,
            ..BatchConfig::default()
        };
        let text = toml::to_string(&config).context("serialising configuration")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
