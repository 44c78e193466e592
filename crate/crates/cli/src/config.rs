use std::io::Write;

use wcc_core::grouping::DEFAULT_ZERO_TOL;
use wcc_core::selection::DEFAULT_GRID_SIZE;
use wcc_core::simulation::{SolverSettings, MAX_SAMPLE_ATTEMPTS, PI_FLOOR, SCORE_FALLBACK};
use wcc_core::Result;

pub fn run(out: &mut dyn Write) -> Result<()> {
    let s = SolverSettings::default();
    writeln!(out, "wcc {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "report schema_version = {}", crate::SCHEMA_VERSION)?;
    writeln!(out, "penalty: SCAD, γ={}", s.gamma)?;
    writeln!(out, "admm: ϑ={}, tol={:e}, max_iter={}, init_ridge={:e}", s.admm.vartheta, s.admm.tol, s.admm.max_iter, s.admm.init_ridge)?;
    writeln!(out, "stopping: primal and dual residual norms below tol")?;
    writeln!(out, "grouping: zero_tol={DEFAULT_ZERO_TOL:e}, connected components of fused pairs")?;
    writeln!(out, "bic: C_m = log(mp+q), complexity C_m (log m / m)(K p + q)")?;
    writeln!(out, "grid: {DEFAULT_GRID_SIZE} log-spaced values on [0.01 λ_max, λ_max]")?;
    writeln!(
        out,
        "inclusion probabilities: nonpositive or nonfinite scores -> smallest positive score in the location \
         (or {SCORE_FALLBACK:e}); normalize to sum n_i; clamp into [{PI_FLOOR:e}, 1]"
    )?;
    writeln!(out, "empty locations: redrawn up to {MAX_SAMPLE_ATTEMPTS} times")?;
    Ok(())
}
