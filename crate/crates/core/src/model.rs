//! Shared domain types: sampled datasets, penalty/solver configuration,
//! fit results and partitions.
//!
//! Only sampled rows are stored. Every population sum weighted by the
//! sampling indicator reduces to a sum over the rows held in a
//! [`LocationBlock`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WccError};
pub use crate::penalty::ScadSpec as PenaltyParams;

/// Sampled observations for one location.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationBlock {
    id: String,
    population_size: f64,
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    pi: DVector<f64>,
    sigma2: Option<DVector<f64>>,
}

impl LocationBlock {
    /// Builds a block, rejecting ragged rows, inclusion probabilities
    /// outside (0, 1], non-positive variances and `N < n`.
    pub fn new(
        id: impl Into<String>,
        population_size: f64,
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        pi: DVector<f64>,
        sigma2: Option<DVector<f64>>,
    ) -> Result<Self> {
        let block = LocationBlock {
            id: id.into(),
            population_size,
            y,
            x,
            z,
            pi,
            sigma2,
        };
        block.check()?;
        Ok(block)
    }

    fn check(&self) -> Result<()> {
        let n = self.y.len();
        let err = |msg: String| Err(WccError::data(&self.id, msg));
        if n == 0 {
            return err("no sampled observations".into());
        }
        if self.x.nrows() != n {
            return err(format!("X has {} rows, y has {n}", self.x.nrows()));
        }
        if self.z.nrows() != n {
            return err(format!("Z has {} rows, y has {n}", self.z.nrows()));
        }
        if self.pi.len() != n {
            return err(format!("pi has {} entries, y has {n}", self.pi.len()));
        }
        if self.x.ncols() == 0 {
            return err("at least one location-specific covariate is required".into());
        }
        if let Some((h, &p)) = self
            .pi
            .iter()
            .enumerate()
            .find(|(_, &p)| !(p > 0.0 && p <= 1.0))
        {
            return err(format!("inclusion probability {p} at row {h} is outside (0, 1]"));
        }
        if !(self.population_size.is_finite() && self.population_size >= n as f64) {
            return err(format!(
                "population size {} is smaller than the sample size {n}",
                self.population_size
            ));
        }
        if let Some(s2) = &self.sigma2 {
            if s2.len() != n {
                return err(format!("sigma2 has {} entries, y has {n}", s2.len()));
            }
            if let Some((h, &s)) = s2.iter().enumerate().find(|(_, &s)| !(s > 0.0 && s.is_finite())) {
                return err(format!("variance {s} at row {h} is not strictly positive"));
            }
        }
        let finite = self.y.iter().all(|v| v.is_finite())
            && self.x.iter().all(|v| v.is_finite())
            && self.z.iter().all(|v| v.is_finite());
        if !finite {
            return err("non-finite response or covariate".into());
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Population size `N_i`.
    pub fn population_size(&self) -> f64 {
        self.population_size
    }

    /// Realized sample size `n_i`.
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Local design, `n_i x p`.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Global design, `n_i x q`.
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn sigma2(&self) -> Option<&DVector<f64>> {
        self.sigma2.as_ref()
    }

    /// Same block with every inclusion probability replaced by `n_i / N_i`.
    pub fn with_equal_probabilities(&self) -> LocationBlock {
        let p = self.n() as f64 / self.population_size;
        LocationBlock {
            pi: DVector::from_element(self.n(), p),
            ..self.clone()
        }
    }

    /// Same block with the inclusion probabilities multiplied by `c` and the
    /// population size divided by `c`.
    pub fn rescaled(&self, c: f64) -> Result<LocationBlock> {
        LocationBlock::new(
            self.id.clone(),
            self.population_size / c,
            self.y.clone(),
            self.x.clone(),
            self.z.clone(),
            &self.pi * c,
            self.sigma2.clone(),
        )
    }

    pub(crate) fn with_columns(
        &self,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        y: DVector<f64>,
        sigma2: Option<DVector<f64>>,
    ) -> LocationBlock {
        LocationBlock {
            x,
            z,
            y,
            sigma2,
            ..self.clone()
        }
    }
}

/// Sampled observations for all `m` locations. Location order is fixed at
/// construction and defines the pair index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    locations: Vec<LocationBlock>,
    p: usize,
    q: usize,
}

impl Dataset {
    pub fn new(locations: Vec<LocationBlock>) -> Result<Self> {
        let (p, q) = locations
            .first()
            .map(|b| (b.x.ncols(), b.z.ncols()))
            .ok_or_else(|| WccError::data("<none>", "dataset has no locations"))?;
        let data = Dataset { locations, p, q };
        validate(&data)?;
        Ok(data)
    }

    pub fn locations(&self) -> &[LocationBlock] {
        &self.locations
    }

    /// Number of locations.
    pub fn m(&self) -> usize {
        self.locations.len()
    }

    /// Location-specific covariate count.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Global covariate count.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn total_n(&self) -> usize {
        self.locations.iter().map(LocationBlock::n).sum()
    }

    /// The unweighted (CC) variant: equal inclusion probabilities `n_i / N_i`
    /// within every location.
    pub fn with_equal_probabilities(&self) -> Dataset {
        Dataset {
            locations: self
                .locations
                .iter()
                .map(LocationBlock::with_equal_probabilities)
                .collect(),
            ..*self
        }
    }

    /// Reorders locations; `order[k]` is the old index placed at position `k`.
    pub fn permuted(&self, order: &[usize]) -> Result<Dataset> {
        if order.len() != self.m() {
            return Err(WccError::Config("permutation length differs from m".into()));
        }
        Dataset::new(order.iter().map(|&i| self.locations[i].clone()).collect())
    }

    pub(crate) fn from_parts(locations: Vec<LocationBlock>, p: usize, q: usize) -> Dataset {
        Dataset { locations, p, q }
    }
}

/// Checks every dataset and block invariant, reporting the first violation.
pub fn validate(data: &Dataset) -> Result<()> {
    if data.locations.is_empty() {
        return Err(WccError::data("<none>", "dataset has no locations"));
    }
    for block in &data.locations {
        block.check()?;
        if block.x.ncols() != data.p {
            return Err(WccError::data(
                &block.id,
                format!("has p = {}, expected {}", block.x.ncols(), data.p),
            ));
        }
        if block.z.ncols() != data.q {
            return Err(WccError::data(
                &block.id,
                format!("has q = {}, expected {}", block.z.ncols(), data.q),
            ));
        }
    }
    Ok(())
}

/// ADMM settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    /// Augmented-Lagrangian weight.
    pub vartheta: f64,
    /// Stopping threshold on the primal (and dual) residual norms.
    pub tol: f64,
    pub max_iter: usize,
    /// Strength of the L2 fusion used to build the starting point.
    pub init_ridge: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            vartheta: 1.0,
            tol: 1e-6,
            max_iter: 2000,
            init_ridge: 1e-3,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.vartheta > 0.0 && self.vartheta.is_finite()) {
            return Err(WccError::Config(format!("vartheta must be > 0, got {}", self.vartheta)));
        }
        if !(self.tol > 0.0) {
            return Err(WccError::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(WccError::Config("max_iter must be at least 1".into()));
        }
        if !(self.init_ridge >= 0.0) {
            return Err(WccError::Config(format!(
                "init_ridge must be >= 0, got {}",
                self.init_ridge
            )));
        }
        Ok(())
    }
}

/// Output of one ADMM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// `m x p`, row `i` is the coefficient vector of location `i`.
    #[serde(with = "crate::serde_mat")]
    pub beta: DMatrix<f64>,
    #[serde(with = "crate::serde_vec")]
    pub eta: DVector<f64>,
    /// `p x m(m-1)/2` slack matrix, one column per pair.
    #[serde(with = "crate::serde_mat")]
    pub zeta: DMatrix<f64>,
    /// Multipliers, same layout as `zeta`.
    #[serde(with = "crate::serde_mat")]
    pub v: DMatrix<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub final_dual_residual: f64,
    pub converged: bool,
}

/// Locations grouped by shared coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Zero-based group index per location, labelled in order of first
    /// appearance.
    pub assignment: Vec<usize>,
    pub k_hat: usize,
    /// `K x p` group coefficients (zero columns when not estimated).
    #[serde(with = "crate::serde_mat")]
    pub alpha: DMatrix<f64>,
    pub group_sizes: Vec<usize>,
}

impl Partition {
    /// Canonical partition from arbitrary labels; `alpha` is left empty.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(labels: &[L]) -> Partition {
        let mut seen = std::collections::HashMap::new();
        let assignment: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = seen.len();
                *seen.entry(*l).or_insert(next)
            })
            .collect();
        let k_hat = seen.len();
        let mut group_sizes = vec![0; k_hat];
        for &g in &assignment {
            group_sizes[g] += 1;
        }
        Partition {
            assignment,
            k_hat,
            alpha: DMatrix::zeros(k_hat, 0),
            group_sizes,
        }
    }

    pub fn singletons(m: usize) -> Partition {
        Partition::from_labels(&(0..m).collect::<Vec<_>>())
    }

    pub fn single_group(m: usize) -> Partition {
        Partition::from_labels(&vec![0usize; m])
    }

    pub fn m(&self) -> usize {
        self.assignment.len()
    }

    /// Members of each group, in location order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k_hat];
        for (i, &g) in self.assignment.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    /// Group sizes sorted descending; equal for isomorphic partitions.
    pub fn size_profile(&self) -> Vec<usize> {
        let mut s = self.group_sizes.clone();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }
}
