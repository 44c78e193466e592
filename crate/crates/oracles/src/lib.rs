//! Slow, independent reference computations for the wcc test suites.
//!
//! Nothing here shares a code path with the solver: SCAD is integrated
//! numerically, weighted least squares goes through a QR factorization of
//! the row-scaled design, the proximal map is found by search, and
//! partitions are enumerated exhaustively.

use nalgebra::{DMatrix, DVector};
use wcc_core::admm::objective;
use wcc_core::grouping::{expand_groups, refit_oracle};
use wcc_core::{Dataset, LocationBlock, Partition, Result, ScadSpec, WccError};

fn scad_integrand(x: f64, spec: &ScadSpec) -> f64 {
    if spec.lambda == 0.0 {
        return 0.0;
    }
    let tail = (spec.gamma - x / spec.lambda).max(0.0) / (spec.gamma - 1.0);
    tail.min(1.0)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `λ ∫_0^t min{1, (γ - x/λ)_+ / (γ - 1)} dx` by adaptive Simpson.
pub fn scad_quadrature(t: f64, spec: &ScadSpec) -> f64 {
    assert!(t >= 0.0, "negative argument");
    if t == 0.0 || spec.lambda == 0.0 {
        return 0.0;
    }
    let f = |x: f64| scad_integrand(x, spec);
    let (fa, fm, fb) = (f(0.0), f(0.5 * t), f(t));
    let whole = simpson(0.0, t, fa, fm, fb);
    spec.lambda * adaptive(&f, 0.0, t, fa, fm, fb, whole, 1e-14, 60)
}

fn row_weights(block: &LocationBlock) -> Vec<f64> {
    (0..block.n())
        .map(|h| {
            let s2 = block.sigma2().map_or(1.0, |s| s[h]);
            1.0 / (block.population_size() * block.pi()[h] * s2)
        })
        .collect()
}

/// Per-location weighted least squares, `(XᵀWX)^{-1}XᵀWy`, via QR of
/// `W^{1/2}X`.
pub fn weighted_ls(block: &LocationBlock) -> Result<DVector<f64>> {
    let n = block.n();
    let w = row_weights(block);
    let p = block.x().ncols();
    let sx = DMatrix::from_fn(n, p, |h, k| w[h].sqrt() * block.x()[(h, k)]);
    let sy = DVector::from_fn(n, |h, _| w[h].sqrt() * block.y()[h]);
    if n < p {
        return Err(WccError::Singular { context: format!("weighted_ls at {}", block.id()) });
    }
    let qr = sx.qr();
    let r = qr.r();
    if r.diagonal().iter().any(|d| d.abs() < 1e-12) {
        return Err(WccError::Singular { context: format!("weighted_ls at {}", block.id()) });
    }
    let qty = qr.q().transpose() * sy;
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| WccError::Singular { context: format!("weighted_ls at {}", block.id()) })
}

/// Row `i` is [`weighted_ls`] of location `i`.
pub fn weighted_ls_all(data: &Dataset) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(data.m(), data.p());
    for (i, b) in data.locations().iter().enumerate() {
        out.row_mut(i).copy_from(&weighted_ls(b)?.transpose());
    }
    Ok(out)
}

/// Pooled weighted least squares: one coefficient vector for all rows.
pub fn pooled_wls(data: &Dataset) -> Result<DVector<f64>> {
    let p = data.p();
    let rows: usize = data.total_n();
    let mut sx = DMatrix::zeros(rows, p);
    let mut sy = DVector::zeros(rows);
    let mut r = 0;
    for b in data.locations() {
        let w = row_weights(b);
        for h in 0..b.n() {
            for k in 0..p {
                sx[(r, k)] = w[h].sqrt() * b.x()[(h, k)];
            }
            sy[r] = w[h].sqrt() * b.y()[h];
            r += 1;
        }
    }
    let qr = sx.qr();
    qr.r()
        .solve_upper_triangular(&(qr.q().transpose() * sy))
        .ok_or_else(|| WccError::Singular { context: "pooled wls".into() })
}

fn prox_value(kappa: &DVector<f64>, dir: &DVector<f64>, s: f64, spec: &ScadSpec, vartheta: f64) -> f64 {
    let z = dir * s;
    0.5 * vartheta * (kappa - &z).norm_squared() + scad_quadrature(s, spec)
}

/// Ray search for the SCAD proximal map: the best of 10,001 grid points on
/// `[0, 2||κ||]`, refined by golden-section search on the neighbouring cells.
pub fn prox_numeric(kappa: &DVector<f64>, spec: &ScadSpec, vartheta: f64) -> DVector<f64> {
    let norm = kappa.norm();
    if norm == 0.0 {
        return kappa.clone();
    }
    let dir = kappa / norm;
    let hi = 2.0 * norm;
    let n = 10_000;
    let step = hi / n as f64;
    let (mut best_s, mut best_f) = (0.0, f64::INFINITY);
    for k in 0..=n {
        let s = step * k as f64;
        let f = prox_value(kappa, &dir, s, spec, vartheta);
        if f < best_f {
            best_f = f;
            best_s = s;
        }
    }
    let (mut a, mut b) = ((best_s - step).max(0.0), (best_s + step).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = prox_value(kappa, &dir, c, spec, vartheta);
    let mut fd = prox_value(kappa, &dir, d, spec, vartheta);
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = prox_value(kappa, &dir, c, spec, vartheta);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = prox_value(kappa, &dir, d, spec, vartheta);
        }
    }
    let s = 0.5 * (a + b);
    let candidates = [(best_s, best_f), (s, prox_value(kappa, &dir, s, spec, vartheta)), (0.0, prox_value(kappa, &dir, 0.0, spec, vartheta))];
    let best = candidates
        .iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("nonempty");
    dir * best.0
}

/// Dense `D` with one row `e_iᵀ - e_jᵀ` per pair `i < j`, lexicographic.
pub fn dense_difference_matrix(m: usize) -> DMatrix<f64> {
    let rows = m * m.saturating_sub(1) / 2;
    let mut d = DMatrix::zeros(rows, m);
    let mut r = 0;
    for i in 0..m {
        for j in i + 1..m {
            d[(r, i)] = 1.0;
            d[(r, j)] = -1.0;
            r += 1;
        }
    }
    d
}

/// `D ⊗ I_p`.
pub fn dense_a(m: usize, p: usize) -> DMatrix<f64> {
    dense_difference_matrix(m).kronecker(&DMatrix::identity(p, p))
}

/// All set partitions of `0..m` as restricted growth strings.
pub fn set_partitions(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, m: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == m {
            out.push(prefix.clone());
            return;
        }
        for g in 0..=max + 1 {
            prefix.push(g);
            rec(prefix, m, max.max(g), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if m == 0 {
        return out;
    }
    let mut prefix = vec![0];
    rec(&mut prefix, m, 0, &mut out);
    out
}

/// Exhaustive search over hard partitions: refit each with the group
/// structure imposed and score loss plus penalty at the tied coefficients.
pub fn brute_force_partition(data: &Dataset, spec: &ScadSpec) -> Result<(Partition, f64)> {
    if data.m() > 5 {
        return Err(WccError::TooLarge(format!("brute force needs m <= 5, got {}", data.m())));
    }
    let mut best: Option<(Partition, f64)> = None;
    for labels in set_partitions(data.m()) {
        let part = Partition::from_labels(&labels);
        let (eta, alpha) = refit_oracle(data, &part)?;
        let beta = expand_groups(&alpha, &part);
        let obj = objective(data, &beta, &eta, spec);
        if best.as_ref().is_none_or(|b| obj < b.1) {
            let mut part = part;
            part.alpha = alpha;
            best = Some((part, obj));
        }
    }
    Ok(best.expect("at least one partition"))
}
