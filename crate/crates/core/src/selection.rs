//! Choosing the fusion strength by a modified BIC over a λ grid.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{residuals, AdmmSolver};
use crate::error::{Result, WccError};
use crate::grouping::extract_partition;
use crate::model::{AdmmConfig, Dataset, FitResult, LocationBlock, Partition};
use crate::penalty::ScadSpec;

/// Floor on the weighted residual term before taking the log.
pub const RESIDUAL_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BicKind {
    /// One mean per location: complexity `K̂` (p = 1, q = 0).
    MeanModel,
    /// Complexity `K̂ p + q`.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicVariant {
    pub kind: BicKind,
    /// Complexity multiplier; `None` means `log(m p + q)`.
    pub c_m: Option<f64>,
}

impl BicVariant {
    pub fn new(kind: BicKind) -> Self {
        BicVariant { kind, c_m: None }
    }

    fn dims(&self, data: &Dataset) -> (usize, usize) {
        match self.kind {
            BicKind::MeanModel => (1, 0),
            BicKind::Regression => (data.p(), data.q()),
        }
    }

    pub fn c_m(&self, data: &Dataset) -> Result<f64> {
        let (p, q) = self.dims(data);
        let c = self.c_m.unwrap_or_else(|| ((data.m() * p + q) as f64).ln());
        if !(c > 0.0) {
            return Err(WccError::Config(format!("C_m must be positive, got {c}")));
        }
        Ok(c)
    }

    /// `C_m (log m / m)(K̂ p + q)`.
    pub fn complexity(&self, data: &Dataset, k_hat: usize) -> Result<f64> {
        let (p, q) = self.dims(data);
        let m = data.m() as f64;
        Ok(self.c_m(data)? * m.ln() / m * (k_hat * p + q) as f64)
    }
}

/// `π⁻¹` (times `σ⁻²` when known) normalized to sum to one within the
/// block.
pub fn normalized_weights(block: &LocationBlock) -> DVector<f64> {
    let mut inv = block.pi().map(|p| 1.0 / p);
    if let Some(s2) = block.sigma2() {
        inv.component_div_assign(s2);
    }
    let total = inv.sum();
    inv / total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicValue {
    pub value: f64,
    /// Set when the residual term hit [`RESIDUAL_FLOOR`].
    pub residual_clamped: bool,
}

/// `log[(1/m) Σ_i Σ_h w̃_ih r_ih²] + C_m (log m / m)(K̂ p + q)`.
pub fn modified_bic(
    data: &Dataset,
    fit: &FitResult,
    partition: &Partition,
    variant: &BicVariant,
) -> Result<BicValue> {
    if fit.beta.nrows() != data.m() || partition.m() != data.m() {
        return Err(WccError::Config("fit, partition and data disagree on m".into()));
    }
    let mut total = 0.0;
    for (i, block) in data.locations().iter().enumerate() {
        let w = normalized_weights(block);
        let r = residuals(block, &fit.beta.row(i).transpose(), &fit.eta);
        total += w.iter().zip(r.iter()).map(|(w, r)| w * r * r).sum::<f64>();
    }
    let resid = total / data.m() as f64;
    let residual_clamped = !(resid > RESIDUAL_FLOOR);
    let value = resid.max(RESIDUAL_FLOOR).ln() + variant.complexity(data, partition.k_hat)?;
    Ok(BicValue {
        value,
        residual_clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub lambda: f64,
    pub fit: FitResult,
    pub partition: Partition,
    pub bic: BicValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPath {
    pub grid: Vec<f64>,
    pub records: Vec<PathRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub lambda_star: f64,
    pub fit: FitResult,
    pub partition: Partition,
    pub bic: BicValue,
    pub path: LambdaPath,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(WccError::Config("lambda grid is empty".into()));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(WccError::Config("lambda grid values must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(WccError::Config("lambda grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || count == 0 {
        return Err(WccError::Config(format!("bad grid {lo}:{hi}:{count}")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect())
}

pub const DEFAULT_GRID_SIZE: usize = 30;

/// Thirty log-spaced values on `[0.01 λ_max, λ_max]`, where `λ_max` is the
/// largest pairwise distance between the starting-point coefficients.
pub fn default_grid(data: &Dataset, cfg: &AdmmConfig) -> Result<Vec<f64>> {
    let start = AdmmSolver::new(data, cfg)?.initialize()?;
    let beta = start.beta_matrix();
    let mut lambda_max: f64 = 0.0;
    for i in 0..beta.nrows() {
        for j in i + 1..beta.nrows() {
            lambda_max = lambda_max.max((beta.row(i) - beta.row(j)).norm());
        }
    }
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        lambda_max = 1.0;
    }
    log_grid(0.01 * lambda_max, lambda_max, DEFAULT_GRID_SIZE)
}

/// Fits every λ in `grid` and returns the BIC minimizer (ties go to the
/// smaller λ). Non-converged λ values are skipped when at least one λ
/// converged.
pub fn select_lambda(
    data: &Dataset,
    grid: &[f64],
    spec_base: &ScadSpec,
    cfg: &AdmmConfig,
    variant: &BicVariant,
    zero_tol: f64,
) -> Result<Selection> {
    check_grid(grid)?;
    spec_base.with_lambda(grid[0]).validate_for_admm(cfg.vartheta)?;
    let solver = AdmmSolver::new(data, cfg)?;
    let records = grid
        .par_iter()
        .map(|&lambda| {
            let fit = solver.fit(&spec_base.with_lambda(lambda))?;
            let partition = extract_partition(&fit, zero_tol);
            let bic = modified_bic(data, &fit, &partition, variant)?;
            Ok(PathRecord {
                lambda,
                fit,
                partition,
                bic,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let any_converged = records.iter().any(|r| r.fit.converged);
    let mut best: Option<&PathRecord> = None;
    for rec in &records {
        if any_converged && !rec.fit.converged {
            log::warn!(
                "lambda = {} did not converge in {} iterations (residual {:e}); skipped",
                rec.lambda,
                rec.fit.iterations,
                rec.fit.final_residual
            );
            continue;
        }
        if best.is_none_or(|b| rec.bic.value < b.bic.value) {
            best = Some(rec);
        }
    }
    if !any_converged {
        log::warn!("no lambda in the grid converged; selecting among unconverged fits");
    }
    let best = best.expect("grid is nonempty").clone();
    Ok(Selection {
        lambda_star: best.lambda,
        fit: best.fit,
        partition: best.partition,
        bic: best.bic,
        path: LambdaPath {
            grid: grid.to_vec(),
            records,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn block(pi: &[f64]) -> LocationBlock {
        let n = pi.len();
        LocationBlock::new(
            "loc",
            100.0,
            DVector::from_element(n, 1.0),
            DMatrix::from_element(n, 1, 1.0),
            DMatrix::zeros(n, 0),
            DVector::from_column_slice(pi),
            None,
        )
        .unwrap()
    }

    #[test]
    fn weights_normalize() {
        let w = normalized_weights(&block(&[0.2, 0.2, 0.2, 0.2]));
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let w = normalized_weights(&block(&[0.1, 0.2]));
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let w = normalized_weights(&block(&[0.013, 0.7, 0.31, 1.0, 0.05]));
        assert!((w.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grids() {
        let g = log_grid(0.01, 1.0, 3).unwrap();
        assert!((g[1] - 0.1).abs() < 1e-15 && (g[2] - 1.0).abs() < 1e-15);
        assert!(check_grid(&[0.1, 0.1]).is_err());
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[0.0, 1.0]).is_err());
    }
}
