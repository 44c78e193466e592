//! ADMM for the weighted linear objective with pairwise SCAD fusion.
//!
//! The pairwise difference operator `A = D ⊗ I_p` is never materialized:
//! `A β` and `Aᵀ u` are applied pair by pair and `AᵀA = (m I_m - J_m) ⊗ I_p`
//! is added to the normal matrix directly. The β normal matrix does not
//! change across iterations, so it is factored once per fit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, WccError};
use crate::model::{AdmmConfig, Dataset, FitResult, LocationBlock};
use crate::penalty::{scad_unchecked, zeta_scale, ScadSpec};

/// Lexicographic enumeration of the pairs `i < j` over `m` locations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    m: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairIndex {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Column of pair `(i, j)`, `i < j`, in the slack and multiplier matrices.
    pub fn column(&self, i: usize, j: usize) -> Option<usize> {
        (i < j && j < self.m).then(|| i * (2 * self.m - i - 1) / 2 + (j - i - 1))
    }
}

pub fn build_pair_index(m: usize) -> PairIndex {
    let pairs = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    PairIndex { m, pairs }
}

/// `(AᵀA) b` for a location-major stacked vector `b` of length `m p`.
pub fn apply_ata(m: usize, p: usize, b: &DVector<f64>) -> DVector<f64> {
    let mut total = vec![0.0; p];
    for i in 0..m {
        for k in 0..p {
            total[k] += b[i * p + k];
        }
    }
    DVector::from_fn(m * p, |r, _| m as f64 * b[r] - total[r % p])
}

/// Per-row loss weights `1 / (N_i π_ih)`, times `1 / σ²_ih` when known
/// variances are present.
pub fn composite_weights(block: &LocationBlock) -> DVector<f64> {
    let n_pop = block.population_size();
    let mut w = block.pi().map(|p| 1.0 / (n_pop * p));
    if let Some(s2) = block.sigma2() {
        w.component_div_assign(s2);
    }
    w
}

/// Iterates of the ADMM recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// Location-major stacked coefficients, length `m p`.
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    /// `p x |pairs|`.
    pub zeta: DMatrix<f64>,
    /// `p x |pairs|`.
    pub v: DMatrix<f64>,
    pub r: usize,
    m: usize,
    p: usize,
}

impl SolverState {
    pub fn zeros(m: usize, p: usize, q: usize) -> Self {
        let n_pairs = m * m.saturating_sub(1) / 2;
        SolverState {
            beta: DVector::zeros(m * p),
            eta: DVector::zeros(q),
            zeta: DMatrix::zeros(p, n_pairs),
            v: DMatrix::zeros(p, n_pairs),
            r: 0,
            m,
            p,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Coefficients as an `m x p` matrix.
    pub fn beta_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.p, self.beta.as_slice())
    }

    pub fn set_beta_matrix(&mut self, beta: &DMatrix<f64>) {
        assert_eq!(beta.shape(), (self.m, self.p));
        self.beta = DVector::from_fn(self.m * self.p, |r, _| beta[(r / self.p, r % self.p)]);
    }

    #[inline]
    fn beta_i(&self, i: usize) -> &[f64] {
        &self.beta.as_slice()[i * self.p..(i + 1) * self.p]
    }

    fn into_result(self, final_residual: f64, final_dual_residual: f64, converged: bool) -> FitResult {
        FitResult {
            beta: self.beta_matrix(),
            eta: self.eta,
            zeta: self.zeta,
            v: self.v,
            iterations: self.r,
            final_residual,
            final_dual_residual,
            converged,
        }
    }
}

/// Profiles out η: holds `(ZᵀWZ)^{-1}` and the cross products needed to
/// recover η from β.
#[derive(Debug, Clone)]
struct GlobalPart {
    ztwz_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// `ZᵀWX`, `q x mp`.
    ztwx: DMatrix<f64>,
    ztwy: DVector<f64>,
}

impl GlobalPart {
    fn eta(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.ztwz_chol.solve(&(&self.ztwy - &self.ztwx * beta))
    }
}

/// Weighted cross products of a dataset, shared by every linear system
/// the solver needs.
#[derive(Debug, Clone)]
struct CrossProducts {
    /// `XᵀQ_{Z,Ω}X`, `mp x mp`.
    xtqx: DMatrix<f64>,
    xtqy: DVector<f64>,
    global: Option<GlobalPart>,
    m: usize,
    p: usize,
}

impl CrossProducts {
    fn new(data: &Dataset) -> Result<Self> {
        let (m, p, q) = (data.m(), data.p(), data.q());
        let mp = m * p;
        let mut xtwx = DMatrix::zeros(mp, mp);
        let mut xtwy = DVector::zeros(mp);
        let mut ztwz = DMatrix::zeros(q, q);
        let mut ztwx = DMatrix::zeros(q, mp);
        let mut ztwy = DVector::zeros(q);
        for (i, block) in data.locations().iter().enumerate() {
            let w = composite_weights(block);
            let wx = DMatrix::from_fn(block.n(), p, |h, k| w[h] * block.x()[(h, k)]);
            xtwx.view_mut((i * p, i * p), (p, p))
                .copy_from(&(block.x().transpose() * &wx));
            xtwy.rows_mut(i * p, p)
                .copy_from(&(wx.transpose() * block.y()));
            if q > 0 {
                let wz = DMatrix::from_fn(block.n(), q, |h, k| w[h] * block.z()[(h, k)]);
                ztwz += block.z().transpose() * &wz;
                ztwx.columns_mut(i * p, p).copy_from(&(wz.transpose() * block.x()));
                ztwy += wz.transpose() * block.y();
            }
        }
        let global = if q > 0 {
            let ztwz_chol = cholesky_with_jitter(ztwz, "the global-covariate system ZᵀΩΠ⁻¹Z")?;
            Some(GlobalPart {
                ztwz_chol,
                ztwx,
                ztwy,
            })
        } else {
            None
        };
        let (xtqx, xtqy) = match &global {
            Some(g) => {
                let s = g.ztwz_chol.solve(&g.ztwx);
                (
                    &xtwx - g.ztwx.transpose() * &s,
                    &xtwy - s.transpose() * &g.ztwy,
                )
            }
            None => (xtwx, xtwy),
        };
        Ok(CrossProducts {
            xtqx,
            xtqy,
            global,
            m,
            p,
        })
    }

    /// Factors `XᵀQX + c AᵀA`.
    fn factor(&self, c: f64, context: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let mut a = self.xtqx.clone();
        if c != 0.0 {
            let (m, p) = (self.m, self.p);
            for i in 0..m {
                for j in 0..m {
                    let val = if i == j { c * (m as f64 - 1.0) } else { -c };
                    for k in 0..p {
                        a[(i * p + k, j * p + k)] += val;
                    }
                }
            }
        }
        cholesky_with_jitter(a, context)
    }
}

/// Cholesky, retried once with `1e-10 * trace` added to the diagonal.
pub(crate) fn cholesky_with_jitter(
    a: DMatrix<f64>,
    context: &str,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(nalgebra::Cholesky::new(a).expect("empty matrix factors"));
    }
    let jitter = 1e-10 * a.trace().abs();
    if let Some(c) = nalgebra::Cholesky::new(a.clone()) {
        if c.l().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
            return Ok(c);
        }
    }
    log::warn!("{context} is singular; retrying with diagonal jitter {jitter:e}");
    let mut b = a;
    for k in 0..n {
        b[(k, k)] += jitter;
    }
    nalgebra::Cholesky::new(b)
        .filter(|c| c.l().diagonal().iter().all(|d| d.is_finite() && *d > 0.0))
        .ok_or_else(|| WccError::Singular {
            context: context.to_string(),
        })
}

/// A dataset prepared for ADMM: the iteration matrix is factored once and
/// reused for every β/η update.
#[derive(Debug, Clone)]
pub struct AdmmSolver {
    cross: CrossProducts,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pairs: PairIndex,
    cfg: AdmmConfig,
    q: usize,
}

impl AdmmSolver {
    pub fn new(data: &Dataset, cfg: &AdmmConfig) -> Result<Self> {
        cfg.validate()?;
        let cross = CrossProducts::new(data)?;
        let chol = cross.factor(cfg.vartheta, "the β normal matrix XᵀQX + ϑAᵀA")?;
        Ok(AdmmSolver {
            cross,
            chol,
            pairs: build_pair_index(data.m()),
            cfg: *cfg,
            q: data.q(),
        })
    }

    pub fn pairs(&self) -> &PairIndex {
        &self.pairs
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.cfg
    }

    /// L2-fusion starting point: weighted least squares plus
    /// `init_ridge * Σ ||β_i - β_j||²`, `ζ⁰ = Aβ⁰`, `v⁰ = 0`.
    pub fn initialize(&self) -> Result<SolverState> {
        let (m, p) = (self.cross.m, self.cross.p);
        let chol = if 2.0 * self.cfg.init_ridge == self.cfg.vartheta {
            self.chol.clone()
        } else {
            self.cross
                .factor(2.0 * self.cfg.init_ridge, "the L2-fusion initialization system")?
        };
        let mut state = SolverState::zeros(m, p, self.q);
        state.beta = chol.solve(&self.cross.xtqy);
        if let Some(g) = &self.cross.global {
            state.eta = g.eta(&state.beta);
        }
        for (c, &(i, j)) in self.pairs.pairs.iter().enumerate() {
            for k in 0..p {
                state.zeta[(k, c)] = state.beta[i * p + k] - state.beta[j * p + k];
            }
        }
        Ok(state)
    }

    /// Closed-form joint β/η minimization of the augmented Lagrangian.
    pub fn update_beta_eta(&self, state: &mut SolverState) {
        let p = self.cross.p;
        let vartheta = self.cfg.vartheta;
        let mut rhs = self.cross.xtqy.clone();
        let zeta = state.zeta.as_slice();
        let v = state.v.as_slice();
        for (c, &(i, j)) in self.pairs.pairs.iter().enumerate() {
            for k in 0..p {
                let u = vartheta * zeta[c * p + k] - v[c * p + k];
                rhs[i * p + k] += u;
                rhs[j * p + k] -= u;
            }
        }
        state.beta = self.chol.solve(&rhs);
        if let Some(g) = &self.cross.global {
            state.eta = g.eta(&state.beta);
        }
    }

    /// Runs the iteration from [`AdmmSolver::initialize`] until both the
    /// primal and dual residual norms fall below `tol`, or `max_iter`.
    pub fn fit(&self, spec: &ScadSpec) -> Result<FitResult> {
        spec.validate_for_admm(self.cfg.vartheta)?;
        let mut state = self.initialize()?;
        let mut primal = f64::INFINITY;
        let mut dual = f64::INFINITY;
        let mut converged = false;
        let mut prev_zeta = state.zeta.clone();
        for r in 1..=self.cfg.max_iter {
            self.update_beta_eta(&mut state);
            update_zeta(&mut state, &self.pairs, spec, self.cfg.vartheta);
            update_v(&mut state, &self.pairs, self.cfg.vartheta);
            state.r = r;
            primal = primal_residual(&state, &self.pairs);
            dual = dual_residual(&state, &prev_zeta, &self.pairs, self.cfg.vartheta);
            if primal < self.cfg.tol && dual < self.cfg.tol {
                converged = true;
                break;
            }
            prev_zeta.copy_from(&state.zeta);
        }
        log::debug!(
            "admm lambda={} iterations={} primal={primal:e} dual={dual:e} converged={converged}",
            spec.lambda,
            state.r
        );
        Ok(state.into_result(primal, dual, converged))
    }
}

/// Builds the starting point for `data` (see [`AdmmSolver::initialize`]).
pub fn initialize(data: &Dataset, cfg: &AdmmConfig) -> Result<SolverState> {
    AdmmSolver::new(data, cfg)?.initialize()
}

/// One β/η update. Prefer [`AdmmSolver::update_beta_eta`] inside a loop;
/// this refactors the normal matrix on every call.
pub fn update_beta_eta(state: &mut SolverState, data: &Dataset, cfg: &AdmmConfig) -> Result<()> {
    AdmmSolver::new(data, cfg)?.update_beta_eta(state);
    Ok(())
}

/// `ζ_ij = prox(β_i - β_j + v_ij / ϑ)` for every pair.
pub fn update_zeta(state: &mut SolverState, pairs: &PairIndex, spec: &ScadSpec, vartheta: f64) {
    let p = state.p;
    let mut kappa = vec![0.0; p];
    for (c, &(i, j)) in pairs.pairs.iter().enumerate() {
        let (bi, bj) = (state.beta_i(i), state.beta_i(j));
        let vc = &state.v.as_slice()[c * p..(c + 1) * p];
        let mut norm2 = 0.0;
        for k in 0..p {
            kappa[k] = bi[k] - bj[k] + vc[k] / vartheta;
            norm2 += kappa[k] * kappa[k];
        }
        let scale = zeta_scale(norm2.sqrt(), spec.lambda, spec.gamma, vartheta);
        let zc = &mut state.zeta.as_mut_slice()[c * p..(c + 1) * p];
        for k in 0..p {
            zc[k] = scale * kappa[k];
        }
    }
}

/// `v_ij += ϑ(β_i - β_j - ζ_ij)`.
pub fn update_v(state: &mut SolverState, pairs: &PairIndex, vartheta: f64) {
    let p = state.p;
    for (c, &(i, j)) in pairs.pairs.iter().enumerate() {
        for k in 0..p {
            let d = state.beta[i * p + k] - state.beta[j * p + k] - state.zeta[(k, c)];
            state.v[(k, c)] += vartheta * d;
        }
    }
}

/// `||Aβ - ζ||`.
pub fn primal_residual(state: &SolverState, pairs: &PairIndex) -> f64 {
    let p = state.p;
    let mut total = 0.0;
    for (c, &(i, j)) in pairs.pairs.iter().enumerate() {
        let (bi, bj) = (state.beta_i(i), state.beta_i(j));
        for k in 0..p {
            let d = bi[k] - bj[k] - state.zeta[(k, c)];
            total += d * d;
        }
    }
    total.sqrt()
}

/// `ϑ ||Aᵀ(ζ - ζ_prev)||`.
pub fn dual_residual(state: &SolverState, prev_zeta: &DMatrix<f64>, pairs: &PairIndex, vartheta: f64) -> f64 {
    let p = state.p;
    let mut acc = vec![0.0; state.m * p];
    for (c, &(i, j)) in pairs.pairs.iter().enumerate() {
        for k in 0..p {
            let d = state.zeta[(k, c)] - prev_zeta[(k, c)];
            acc[i * p + k] += d;
            acc[j * p + k] -= d;
        }
    }
    vartheta * acc.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Weighted half sum of squares `(1/2) Σ_i N_i⁻¹ Σ_h π_ih⁻¹ r_ih²`
/// (times `σ_ih⁻²` when present).
pub fn weighted_loss(data: &Dataset, beta: &DMatrix<f64>, eta: &DVector<f64>) -> f64 {
    data.locations()
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let w = composite_weights(block);
            let r = residuals(block, &beta.row(i).transpose(), eta);
            0.5 * w.iter().zip(r.iter()).map(|(w, r)| w * r * r).sum::<f64>()
        })
        .sum()
}

/// Loss plus the pairwise SCAD penalty on `||β_i - β_j||`.
pub fn objective(data: &Dataset, beta: &DMatrix<f64>, eta: &DVector<f64>, spec: &ScadSpec) -> f64 {
    let m = beta.nrows();
    let mut penalty = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let d = (beta.row(i) - beta.row(j)).norm();
            penalty += scad_unchecked(d, spec.lambda, spec.gamma);
        }
    }
    weighted_loss(data, beta, eta) + penalty
}

/// `y - Zη - Xβ_i` for one block.
pub fn residuals(block: &LocationBlock, beta_i: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
    let mut r = block.y() - block.x() * beta_i;
    if !eta.is_empty() {
        r -= block.z() * eta;
    }
    r
}

/// Fits the fused model at one penalty level.
pub fn fit(data: &Dataset, spec: &ScadSpec, cfg: &AdmmConfig) -> Result<FitResult> {
    AdmmSolver::new(data, cfg)?.fit(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pair_enumeration() {
        assert_eq!(build_pair_index(2).pairs(), &[(0, 1)]);
        assert_eq!(build_pair_index(3).pairs(), &[(0, 1), (0, 2), (1, 2)]);
        assert!(build_pair_index(1).is_empty());
        let idx = build_pair_index(7);
        assert_eq!(idx.len(), 21);
        for (c, &(i, j)) in idx.pairs().iter().enumerate() {
            assert_eq!(idx.column(i, j), Some(c));
        }
        assert_eq!(idx.column(3, 3), None);
    }

    fn block(n_pop: f64, pi: f64, sigma2: Option<f64>) -> LocationBlock {
        LocationBlock::new(
            "a",
            n_pop,
            DVector::from_element(2, 1.0),
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::zeros(2, 0),
            DVector::from_element(2, pi),
            sigma2.map(|s| DVector::from_element(2, s)),
        )
        .unwrap()
    }

    #[test]
    fn weights_compose() {
        assert_abs_diff_eq!(composite_weights(&block(100.0, 0.1, None))[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(composite_weights(&block(100.0, 0.1, Some(4.0)))[0], 0.025, epsilon = 1e-15);
        assert_abs_diff_eq!(composite_weights(&block(2.0, 1.0, None))[1], 0.5, epsilon = 1e-15);
    }

    fn state_with(beta: &[f64], zeta: &[f64], m: usize, p: usize) -> SolverState {
        let mut s = SolverState::zeros(m, p, 0);
        s.beta = DVector::from_column_slice(beta);
        s.zeta = DMatrix::from_column_slice(p, s.zeta.ncols(), zeta);
        s
    }

    #[test]
    fn residual_simple_cases() {
        let pairs = build_pair_index(2);
        let s = state_with(&[1.0, 0.0], &[0.0], 2, 1);
        assert_eq!(primal_residual(&s, &pairs), 1.0);
        let s = state_with(&[1.0, 0.0], &[1.0], 2, 1);
        assert_eq!(primal_residual(&s, &pairs), 0.0);
    }

    #[test]
    fn multiplier_update() {
        let pairs = build_pair_index(2);
        // β_1 - β_2 - ζ = (1, -1)
        let mut s = state_with(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 2);
        update_v(&mut s, &pairs, 1.0);
        assert_eq!(s.v.as_slice(), &[1.0, -1.0]);
        update_v(&mut s, &pairs, 1.0);
        assert_eq!(s.v.as_slice(), &[2.0, -2.0]);

        let mut s = state_with(&[1.0, 0.0, 0.0, 1.0], &[1.0, -1.0], 2, 2);
        s.v = DMatrix::from_column_slice(2, 1, &[0.3, 0.7]);
        update_v(&mut s, &pairs, 1.0);
        assert_eq!(s.v.as_slice(), &[0.3, 0.7]);
    }

    #[test]
    fn zeta_update_threshold_cases() {
        let pairs = build_pair_index(2);
        let spec = ScadSpec::new(0.5, 3.0).unwrap();
        let mut s = state_with(&[0.4, 0.4], &[9.0], 2, 1);
        update_zeta(&mut s, &pairs, &spec, 1.0);
        assert_eq!(s.zeta[(0, 0)], 0.0);
        let mut s = state_with(&[3.0, 1.0], &[9.0], 2, 1);
        update_zeta(&mut s, &pairs, &spec, 1.0);
        assert_eq!(s.zeta[(0, 0)], 2.0);
    }

    #[test]
    fn ata_identity_small() {
        let b = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        // (3I - J) b = 3b - 6
        assert_eq!(apply_ata(3, 1, &b), DVector::from_column_slice(&[-3.0, 0.0, 3.0]));
    }
}
