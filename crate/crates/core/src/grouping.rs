//! Partition recovery from converged slack variables, and group-level
//! coefficient estimates.

use nalgebra::{DMatrix, DVector};
use petgraph::unionfind::UnionFind;

use crate::admm::{build_pair_index, cholesky_with_jitter, composite_weights};
use crate::error::{Result, WccError};
use crate::model::{Dataset, FitResult, Partition};

pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

/// Connected components of the graph with an edge wherever
/// `||ζ̂_ij|| <= zero_tol`. Group coefficients are the member means of β̂.
pub fn extract_partition(fit: &FitResult, zero_tol: f64) -> Partition {
    let m = fit.beta.nrows();
    let mut uf = UnionFind::<usize>::new(m);
    for (c, &(i, j)) in build_pair_index(m).pairs().iter().enumerate() {
        if fit.zeta.column(c).norm() <= zero_tol {
            uf.union(i, j);
        }
    }
    let roots: Vec<usize> = (0..m).map(|i| uf.find_mut(i)).collect();
    let mut partition = Partition::from_labels(&roots);
    partition.alpha = group_estimates(&fit.beta, &partition);
    partition
}

/// Unweighted mean of member rows of `beta` for each group.
pub fn group_estimates(beta: &DMatrix<f64>, partition: &Partition) -> DMatrix<f64> {
    let p = beta.ncols();
    let mut alpha = DMatrix::zeros(partition.k_hat, p);
    for (i, &g) in partition.assignment.iter().enumerate() {
        let mut row = alpha.row_mut(g);
        row += beta.row(i);
    }
    for (g, &size) in partition.group_sizes.iter().enumerate() {
        let mut row = alpha.row_mut(g);
        row /= size as f64;
    }
    alpha
}

/// Expands group coefficients back to one row per location.
pub fn expand_groups(alpha: &DMatrix<f64>, partition: &Partition) -> DMatrix<f64> {
    DMatrix::from_fn(partition.m(), alpha.ncols(), |i, k| {
        alpha[(partition.assignment[i], k)]
    })
}

/// Weighted least squares with `β_i` tied to `α_{k(i)}`: the estimator that
/// knows the group structure. Returns `(η, α)`.
pub fn refit_oracle(data: &Dataset, partition: &Partition) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if partition.m() != data.m() {
        return Err(WccError::Config(format!(
            "partition covers {} locations, dataset has {}",
            partition.m(),
            data.m()
        )));
    }
    let (p, q, k) = (data.p(), data.q(), partition.k_hat);
    let dim = k * p + q;
    let mut lhs = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (i, block) in data.locations().iter().enumerate() {
        let g = partition.assignment[i];
        let w = composite_weights(block);
        // Design row for this block in the collapsed parameterization.
        let mut design = DMatrix::zeros(block.n(), dim);
        design.columns_mut(g * p, p).copy_from(block.x());
        if q > 0 {
            design.columns_mut(k * p, q).copy_from(block.z());
        }
        let wd = DMatrix::from_fn(block.n(), dim, |h, c| w[h] * design[(h, c)]);
        lhs += design.transpose() * &wd;
        rhs += wd.transpose() * block.y();
    }
    let chol = cholesky_with_jitter(lhs, "the collapsed oracle system")?;
    let theta = chol.solve(&rhs);
    let alpha = DMatrix::from_fn(k, p, |g, c| theta[g * p + c]);
    let eta = theta.rows(k * p, q).into_owned();
    Ok((eta, alpha))
}

/// Gradient of the weighted loss with respect to `(α, η)` under the given
/// partition, stacked as `[α_1, ..., α_K, η]`.
pub fn collapsed_gradient(
    data: &Dataset,
    partition: &Partition,
    eta: &DVector<f64>,
    alpha: &DMatrix<f64>,
) -> DVector<f64> {
    let (p, q, k) = (data.p(), data.q(), partition.k_hat);
    let mut grad = DVector::zeros(k * p + q);
    for (i, block) in data.locations().iter().enumerate() {
        let g = partition.assignment[i];
        let w = composite_weights(block);
        let r = crate::admm::residuals(block, &alpha.row(g).transpose(), eta);
        let wr = w.component_mul(&r);
        let gx = block.x().transpose() * &wr;
        for c in 0..p {
            grad[g * p + c] -= gx[c];
        }
        if q > 0 {
            let gz = block.z().transpose() * &wr;
            for c in 0..q {
                grad[k * p + c] -= gz[c];
            }
        }
    }
    grad
}
