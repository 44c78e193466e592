use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use wcc_core::grouping::{extract_partition, refit_oracle};
use wcc_core::io::{read_dataset_file, to_json_string};
use wcc_core::selection::{log_grid, modified_bic, BicValue, LambdaPath};
use wcc_core::serde_util::{mat, vec};
use wcc_core::{
    fit as admm_fit, select_lambda, AdmmConfig, BicKind, BicVariant, Dataset, FitResult, Partition, Result, ScadSpec,
    Standardization, WccError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BicVariantArg {
    /// Complexity `K̂ p + q`.
    Regression,
    /// One mean per location: complexity `K̂`.
    Mean,
}

impl From<BicVariantArg> for BicKind {
    fn from(v: BicVariantArg) -> Self {
        match v {
            BicVariantArg::Regression => BicKind::Regression,
            BicVariantArg::Mean => BicKind::MeanModel,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Input CSV: `location_id, N, y, pi, [sigma2,] x1..xp, [z1..zq]`.
    pub csv: PathBuf,
    /// Number of location-specific covariates (`x1..xp`).
    #[arg(long)]
    pub p: usize,
    /// Number of global covariates (`z1..zq`).
    #[arg(long, default_value_t = 0)]
    pub q: usize,
    /// Fit a single λ instead of selecting over a grid.
    #[arg(long, conflicts_with = "lambda_grid")]
    pub lambda: Option<f64>,
    /// Log-spaced grid `lo:hi:count`. Default: 30 values up to the largest
    /// pairwise distance of the starting coefficients.
    #[arg(long, value_name = "LO:HI:COUNT")]
    pub lambda_grid: Option<String>,
    #[arg(long, default_value_t = 3.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub vartheta: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// L2 fusion strength of the starting point.
    #[arg(long, default_value_t = 1e-3)]
    pub init_ridge: f64,
    /// Slack norm at or below which a pair counts as fused.
    #[arg(long, default_value_t = 1e-6)]
    pub zero_tol: f64,
    #[arg(long, value_enum, default_value_t = BicVariantArg::Regression)]
    pub bic_variant: BicVariantArg,
    /// Override the BIC complexity multiplier (default `log(mp+q)`).
    #[arg(long)]
    pub c_m: Option<f64>,
    /// Ignore the inclusion probabilities (equal weights within location).
    #[arg(long)]
    pub unweighted: bool,
    /// Refit `(eta, alpha)` by weighted least squares on the selected groups.
    #[arg(long)]
    pub refit_oracle: bool,
    /// Standardize y and the covariates before fitting; the report carries
    /// coefficients on both scales.
    #[arg(long)]
    pub standardize: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSettings {
    pub gamma: f64,
    pub vartheta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub init_ridge: f64,
    pub zero_tol: f64,
    pub bic_variant: BicKind,
    pub c_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathEntry {
    pub lambda: f64,
    pub k_hat: usize,
    pub bic: f64,
    pub residual_clamped: bool,
    pub iterations: usize,
    pub converged: bool,
    pub group_sizes: Vec<usize>,
}

impl PathEntry {
    fn from_path(path: &LambdaPath) -> Vec<PathEntry> {
        path.records
            .iter()
            .map(|r| PathEntry {
                lambda: r.lambda,
                k_hat: r.partition.k_hat,
                bic: r.bic.value,
                residual_clamped: r.bic.residual_clamped,
                iterations: r.fit.iterations,
                converged: r.fit.converged,
                group_sizes: r.partition.group_sizes.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Refit {
    #[serde(with = "vec")]
    pub eta: DVector<f64>,
    #[serde(with = "mat")]
    pub alpha: DMatrix<f64>,
}

/// Coefficients mapped back from the standardized fit.
#[derive(Debug, Clone, Serialize)]
pub struct OriginalScale {
    pub transform: Standardization,
    #[serde(with = "mat")]
    pub beta: DMatrix<f64>,
    #[serde(with = "vec")]
    pub eta: DVector<f64>,
    #[serde(with = "mat")]
    pub alpha: DMatrix<f64>,
    pub refit: Option<Refit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub weighted: bool,
    pub standardized: bool,
    pub location_ids: Vec<String>,
    pub settings: FitSettings,
    pub lambda_star: f64,
    pub bic: BicValue,
    pub fit: FitResult,
    pub partition: Partition,
    pub refit: Option<Refit>,
    pub original_scale: Option<OriginalScale>,
    pub lambda_path: Option<Vec<PathEntry>>,
}

/// Parses `lo:hi:count` into a log-spaced grid.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || WccError::Config(format!("--lambda-grid expects lo:hi:count, got `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    log_grid(lo, hi, count)
}

/// Builds the report without touching the filesystem beyond reading the
/// input.
pub fn build_report(args: &FitArgs) -> Result<FitReport> {
    let raw = read_dataset_file(&args.csv, args.p, args.q)?;
    let data = if args.unweighted { raw.with_equal_probabilities() } else { raw };
    let transform = args.standardize.then(|| Standardization::fit(&data)).transpose()?;
    let work = transform.as_ref().map_or_else(|| data.clone(), |t| t.apply(&data));

    let cfg = AdmmConfig {
        vartheta: args.vartheta,
        tol: args.tol,
        max_iter: args.max_iter,
        init_ridge: args.init_ridge,
    };
    cfg.validate()?;
    let variant = BicVariant {
        kind: args.bic_variant.into(),
        c_m: args.c_m,
    };
    let (lambda_star, fit, partition, bic, path) = match args.lambda {
        Some(lambda) => {
            let spec = ScadSpec::new(lambda, args.gamma)?;
            let fit = admm_fit(&work, &spec, &cfg)?;
            let partition = extract_partition(&fit, args.zero_tol);
            let bic = modified_bic(&work, &fit, &partition, &variant)?;
            (lambda, fit, partition, bic, None)
        }
        None => {
            let grid = match &args.lambda_grid {
                Some(s) => parse_grid(s)?,
                None => wcc_core::selection::default_grid(&work, &cfg)?,
            };
            let base = ScadSpec::new(grid[0], args.gamma)?;
            let sel = select_lambda(&work, &grid, &base, &cfg, &variant, args.zero_tol)?;
            let path = PathEntry::from_path(&sel.path);
            (sel.lambda_star, sel.fit, sel.partition, sel.bic, Some(path))
        }
    };
    let refit = if args.refit_oracle {
        let (eta, alpha) = refit_oracle(&work, &partition)?;
        Some(Refit { eta, alpha })
    } else {
        None
    };
    let original_scale = transform.map(|t| {
        let (beta, eta) = t.back_transform(&fit.beta, &fit.eta);
        let (alpha, _) = t.back_transform(&partition.alpha, &fit.eta);
        let refit = refit.as_ref().map(|r| {
            let (alpha, eta) = t.back_transform(&r.alpha, &r.eta);
            Refit { eta, alpha }
        });
        OriginalScale {
            transform: t,
            beta,
            eta,
            alpha,
            refit,
        }
    });
    Ok(FitReport {
        schema_version: crate::SCHEMA_VERSION,
        m: work.m(),
        p: work.p(),
        q: work.q(),
        weighted: !args.unweighted,
        standardized: args.standardize,
        location_ids: location_ids(&work),
        settings: FitSettings {
            gamma: args.gamma,
            vartheta: args.vartheta,
            tol: args.tol,
            max_iter: args.max_iter,
            init_ridge: args.init_ridge,
            zero_tol: args.zero_tol,
            bic_variant: variant.kind,
            c_m: variant.c_m(&work)?,
        },
        lambda_star,
        bic,
        fit,
        partition,
        refit,
        original_scale,
        lambda_path: path,
    })
}

fn location_ids(data: &Dataset) -> Vec<String> {
    data.locations().iter().map(|b| b.id().to_string()).collect()
}

fn fmt_row(row: impl Iterator<Item = f64>) -> String {
    let cells: Vec<String> = row.map(|v| format!("{v:.6}")).collect();
    format!("[{}]", cells.join(", "))
}

pub fn run(args: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let report = build_report(args)?;
    if let Some(path) = &args.out {
        std::fs::write(path, to_json_string(&report)?)?;
    }
    let part = &report.partition;
    let alpha = report.original_scale.as_ref().map_or(&part.alpha, |o| &o.alpha);
    writeln!(out, "locations {}  p {}  q {}  weighted {}", report.m, report.p, report.q, report.weighted)?;
    writeln!(out, "lambda* {:.6e}  BIC {:.6}", report.lambda_star, report.bic.value)?;
    if report.bic.residual_clamped {
        writeln!(out, "warning: weighted residual hit the floor; BIC is not informative")?;
    }
    writeln!(
        out,
        "converged {} after {} iterations",
        report.fit.converged, report.fit.iterations
    )?;
    writeln!(out, "K_hat {}", part.k_hat)?;
    for k in 0..part.k_hat {
        writeln!(
            out,
            "  group {:>3}  size {:>4}  alpha {}",
            k + 1,
            part.group_sizes[k],
            fmt_row(alpha.row(k).iter().copied())
        )?;
    }
    if !report.fit.eta.is_empty() {
        let eta = report.original_scale.as_ref().map_or(&report.fit.eta, |o| &o.eta);
        writeln!(out, "eta {}", fmt_row(eta.iter().copied()))?;
    }
    Ok(())
}
