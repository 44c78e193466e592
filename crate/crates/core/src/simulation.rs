//! Finite populations under informative Poisson sampling, and the Monte
//! Carlo harness comparing weighted (WCC) and unweighted (CC) fits.
//!
//! Every draw is keyed by `(seed, rep, location, purpose, attempt)`: each key
//! selects its own ChaCha stream, so any rep can be regenerated in isolation
//! and results do not depend on scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WccError};
use crate::grouping::{expand_groups, DEFAULT_ZERO_TOL};
use crate::metrics::{adjusted_rand_index, rmse_beta};
use crate::model::{AdmmConfig, Dataset, LocationBlock, Partition};
use crate::penalty::ScadSpec;
use crate::selection::{default_grid, select_lambda, BicKind, BicVariant};

/// Lower bound applied to inclusion probabilities after normalization.
pub const PI_FLOOR: f64 = 1e-6;
/// Score used when a location has no positive finite score at all.
pub const SCORE_FALLBACK: f64 = 1e-12;
/// Redraws allowed for a location that came up empty.
pub const MAX_SAMPLE_ATTEMPTS: u32 = 100;

const PURPOSE_POPULATION: u64 = 0;
const PURPOSE_SAMPLE: u64 = 1;

/// Deterministic stream for one `(seed, rep, location, purpose, attempt)` key.
pub fn stream_rng(seed: u64, rep: u32, location: u32, purpose: u64, attempt: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = (u64::from(rep) << 32)
        | ((u64::from(location) & 0xF_FFFF) << 12)
        | ((purpose & 0xF) << 8)
        | (u64::from(attempt) & 0xFF);
    rng.set_stream(key);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    MeanModel,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum NoiseSpec {
    /// `ε ~ N(0, sd²)`.
    Homoscedastic { sd: f64 },
    /// `ε ~ N(0, σ²)` with `σ = scale · exp(c1 · xᵀβ)`.
    ExpLinear { scale: f64, c1: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub m: usize,
    /// Population size per location.
    pub h: usize,
    pub expected_n: f64,
    pub seed: u64,
    pub reps: usize,
    pub group_probs: Vec<f64>,
    /// True coefficient vector per group (length `p` each).
    pub group_params: Vec<Vec<f64>>,
    pub noise: NoiseSpec,
    /// Attach the true `σ²` to each sampled row of the regression design.
    pub use_known_variance: bool,
}

impl ScenarioSpec {
    /// Group means 1.2 / 1.5 / 1.8 with `N(0, 0.25²)` noise.
    pub fn mean_model(expected_n: f64, seed: u64, reps: usize) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::MeanModel,
            m: 49,
            h: 120,
            expected_n,
            seed,
            reps,
            group_probs: vec![1.0 / 3.0; 3],
            group_params: vec![vec![1.2], vec![1.5], vec![1.8]],
            noise: NoiseSpec::Homoscedastic { sd: 0.25 },
            use_known_variance: false,
        }
    }

    /// Intercept plus one standard normal covariate; coefficients (1, 1),
    /// (1.5, 1.5), (2, 2); `σ = 0.1 exp(0.8 xᵀβ)`.
    pub fn regression(expected_n: f64, seed: u64, reps: usize) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Regression,
            m: 49,
            h: 120,
            expected_n,
            seed,
            reps,
            group_probs: vec![1.0 / 3.0; 3],
            group_params: vec![vec![1.0, 1.0], vec![1.5, 1.5], vec![2.0, 2.0]],
            noise: NoiseSpec::ExpLinear { scale: 0.1, c1: 0.8 },
            use_known_variance: false,
        }
    }

    pub fn p(&self) -> usize {
        self.group_params.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.group_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.group_probs.iter().any(|&p| p < 0.0) {
            return Err(WccError::Config("group probabilities must sum to 1".into()));
        }
        if self.group_params.len() != self.group_probs.len() || self.group_params.len() != 3 {
            return Err(WccError::Config("three groups with parameters are required".into()));
        }
        let p = self.p();
        if p == 0 || self.group_params.iter().any(|g| g.len() != p) {
            return Err(WccError::Config("group parameters must share one nonzero length".into()));
        }
        if self.kind == ScenarioKind::MeanModel && p != 1 {
            return Err(WccError::Config("the mean model has one parameter per group".into()));
        }
        if !(self.expected_n > 0.0 && self.expected_n <= self.h as f64) {
            return Err(WccError::Config(format!(
                "expected sample size {} must lie in (0, H = {}]",
                self.expected_n, self.h
            )));
        }
        if self.m < 2 || self.reps == 0 {
            return Err(WccError::Config("need m >= 2 and reps >= 1".into()));
        }
        Ok(())
    }
}

/// One location of a generated finite population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationLocation {
    pub label: usize,
    pub params: Vec<f64>,
    pub y: Vec<f64>,
    /// `H x p` (a column of ones for the mean model).
    pub x: DMatrix<f64>,
    pub eps: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Inclusion probabilities after score repair and normalization, before
    /// clamping into `[PI_FLOOR, 1]`.
    pub pi_unclamped: Vec<f64>,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub kind: ScenarioKind,
    pub rep: u32,
    pub h: usize,
    pub expected_n: f64,
    pub use_known_variance: bool,
    pub locations: Vec<PopulationLocation>,
}

impl Population {
    pub fn true_partition(&self) -> Partition {
        let labels: Vec<usize> = self.locations.iter().map(|l| l.label).collect();
        Partition::from_labels(&labels)
    }

    /// `m x p` matrix of true coefficients.
    pub fn true_params(&self) -> DMatrix<f64> {
        let p = self.locations[0].params.len();
        DMatrix::from_fn(self.locations.len(), p, |i, k| self.locations[i].params[k])
    }
}

/// Normalizes design scores to inclusion probabilities summing to `n`.
///
/// Non-finite or nonpositive scores are replaced by the smallest positive
/// finite score of the location (or [`SCORE_FALLBACK`] if there is none);
/// the result is returned both before and after clamping into
/// `[PI_FLOOR, 1]`.
pub fn design_probabilities(scores: &[f64], n: f64) -> (Vec<f64>, Vec<f64>) {
    let smallest = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite() && *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let fill = if smallest.is_finite() { smallest } else { SCORE_FALLBACK };
    let repaired: Vec<f64> = scores
        .iter()
        .map(|&s| if s.is_finite() && s > 0.0 { s } else { fill })
        .collect();
    let total: f64 = repaired.iter().sum();
    let raw: Vec<f64> = repaired.iter().map(|s| n * s / total).collect();
    let clamped = raw.iter().map(|p| p.clamp(PI_FLOOR, 1.0)).collect();
    (raw, clamped)
}

fn draw_label(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Group label for one location; the first draw of its population stream.
pub fn location_label(spec: &ScenarioSpec, rep: u32, location: u32) -> usize {
    let mut rng = stream_rng(spec.seed, rep, location, PURPOSE_POPULATION, 0);
    draw_label(&mut rng, &spec.group_probs)
}

fn scores_for(kind: ScenarioKind, label: usize, y: &[f64], eps: &[f64]) -> Option<Vec<f64>> {
    match (kind, label) {
        (_, 1) => None,
        (ScenarioKind::MeanModel, 0) => Some(y.iter().map(|v| v.exp()).collect()),
        (ScenarioKind::MeanModel, _) => Some(y.iter().map(|v| v.ln()).collect()),
        (ScenarioKind::Regression, 0) => Some(eps.iter().map(|e| e.powi(3)).collect()),
        (ScenarioKind::Regression, _) => Some(eps.iter().map(|e| (-e.powf(-0.5)).exp()).collect()),
    }
}

fn generate(spec: &ScenarioSpec, rep: u32) -> Result<Population> {
    spec.validate()?;
    let p = spec.p();
    let locations = (0..spec.m)
        .map(|i| {
            let mut rng = stream_rng(spec.seed, rep, i as u32, PURPOSE_POPULATION, 0);
            let label = draw_label(&mut rng, &spec.group_probs);
            let params = spec.group_params[label].clone();
            let mut x = DMatrix::from_element(spec.h, p, 1.0);
            let mut y = Vec::with_capacity(spec.h);
            let mut eps = Vec::with_capacity(spec.h);
            let mut sigma = Vec::with_capacity(spec.h);
            for h in 0..spec.h {
                for k in 1..p {
                    x[(h, k)] = rng.sample(StandardNormal);
                }
                let mean: f64 = (0..p).map(|k| x[(h, k)] * params[k]).sum();
                let sd = match spec.noise {
                    NoiseSpec::Homoscedastic { sd } => sd,
                    NoiseSpec::ExpLinear { scale, c1 } => scale * (c1 * mean).exp(),
                };
                let z: f64 = rng.sample(StandardNormal);
                let e = sd * z;
                sigma.push(sd);
                eps.push(e);
                y.push(mean + e);
            }
            let (pi_unclamped, pi) = match scores_for(spec.kind, label, &y, &eps) {
                Some(scores) => design_probabilities(&scores, spec.expected_n),
                None => {
                    let eq = vec![spec.expected_n / spec.h as f64; spec.h];
                    (eq.clone(), eq)
                }
            };
            PopulationLocation {
                label,
                params,
                y,
                x,
                eps,
                sigma,
                pi_unclamped,
                pi,
            }
        })
        .collect();
    Ok(Population {
        kind: spec.kind,
        rep,
        h: spec.h,
        expected_n: spec.expected_n,
        use_known_variance: spec.use_known_variance,
        locations,
    })
}

pub fn generate_mean_population(spec: &ScenarioSpec, rep: u32) -> Result<Population> {
    if spec.kind != ScenarioKind::MeanModel {
        return Err(WccError::Config("scenario is not a mean model".into()));
    }
    generate(spec, rep)
}

pub fn generate_regression_population(spec: &ScenarioSpec, rep: u32) -> Result<Population> {
    if spec.kind != ScenarioKind::Regression {
        return Err(WccError::Config("scenario is not a regression model".into()));
    }
    generate(spec, rep)
}

pub fn generate_population(spec: &ScenarioSpec, rep: u32) -> Result<Population> {
    generate(spec, rep)
}

/// Independent Bernoulli(π) inclusion per unit. Empty locations are
/// redrawn on fresh streams up to [`MAX_SAMPLE_ATTEMPTS`] times.
pub fn poisson_sample(pop: &Population, seed: u64) -> Result<Dataset> {
    let mut blocks = Vec::with_capacity(pop.locations.len());
    for (i, loc) in pop.locations.iter().enumerate() {
        let chosen = (0..MAX_SAMPLE_ATTEMPTS)
            .map(|attempt| {
                let mut rng = stream_rng(seed, pop.rep, i as u32, PURPOSE_SAMPLE, attempt);
                loc.pi
                    .iter()
                    .enumerate()
                    .filter(|(_, &pi)| rng.random::<f64>() < pi)
                    .map(|(h, _)| h)
                    .collect::<Vec<_>>()
            })
            .find(|rows| !rows.is_empty())
            .ok_or_else(|| {
                WccError::data(
                    format!("loc{}", i + 1),
                    format!("no units sampled after {MAX_SAMPLE_ATTEMPTS} attempts"),
                )
            })?;
        let n = chosen.len();
        let p = loc.x.ncols();
        let y = DVector::from_iterator(n, chosen.iter().map(|&h| loc.y[h]));
        let x = DMatrix::from_fn(n, p, |r, k| loc.x[(chosen[r], k)]);
        let pi = DVector::from_iterator(n, chosen.iter().map(|&h| loc.pi[h]));
        let sigma2 = pop
            .use_known_variance
            .then(|| DVector::from_iterator(n, chosen.iter().map(|&h| loc.sigma[h].powi(2))));
        blocks.push(LocationBlock::new(
            format!("loc{}", i + 1),
            pop.h as f64,
            y,
            x,
            DMatrix::zeros(n, 0),
            pi,
            sigma2,
        )?);
    }
    Dataset::new(blocks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Design-weighted fit.
    Wcc,
    /// Same machinery with equal inclusion probabilities.
    Cc,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Wcc => "wcc",
            Method::Cc => "cc",
        }
    }

    pub fn prepare(&self, data: &Dataset) -> Dataset {
        match self {
            Method::Wcc => data.clone(),
            Method::Cc => data.with_equal_probabilities(),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = WccError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wcc" => Ok(Method::Wcc),
            "cc" => Ok(Method::Cc),
            other => Err(WccError::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Solver settings shared by every rep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub admm: AdmmConfig,
    pub gamma: f64,
    pub zero_tol: f64,
    /// `None` uses the data-driven default grid for each fit.
    pub grid: Option<Vec<f64>>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            admm: AdmmConfig::default(),
            gamma: 3.0,
            zero_tol: DEFAULT_ZERO_TOL,
            grid: None,
        }
    }
}

/// Per-rep, per-method outcome (one CSV row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: u32,
    pub method: Method,
    pub k_hat: usize,
    pub ari: f64,
    pub rmse: f64,
    pub lambda_star: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = prob.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

impl Quantiles {
    fn of(values: &[f64]) -> Option<Quantiles> {
        (!values.is_empty()).then(|| Quantiles {
            min: quantile(values, 0.0),
            q25: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q75: quantile(values, 0.75),
            max: quantile(values, 1.0),
        })
    }
}

/// Mean and sample standard deviation (`None` with fewer than two values).
pub fn mean_sd(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() > 1).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (mean, sd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub reps_ok: usize,
    pub failures: usize,
    pub k_mean: f64,
    pub k_sd: Option<f64>,
    /// Share of reps with `K̂` equal to the number of true groups.
    pub k_correct: f64,
    pub ari_mean: f64,
    pub ari_sd: Option<f64>,
    pub rmse: Vec<f64>,
    pub rmse_quantiles: Option<Quantiles>,
    pub converged_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub scenario: ScenarioSpec,
    pub settings: SolverSettings,
    pub true_groups: usize,
    pub methods: Vec<MethodSummary>,
}

impl McSummary {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == method)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub outcomes: Vec<RepOutcome>,
    pub failures: Vec<(u32, Method, String)>,
    pub summary: McSummary,
}

fn bic_kind(kind: ScenarioKind) -> BicKind {
    match kind {
        ScenarioKind::MeanModel => BicKind::MeanModel,
        ScenarioKind::Regression => BicKind::Regression,
    }
}

/// Samples rep `rep` once and fits every method on it.
pub fn run_rep(
    spec: &ScenarioSpec,
    settings: &SolverSettings,
    methods: &[Method],
    rep: u32,
) -> Vec<std::result::Result<RepOutcome, (Method, WccError)>> {
    let sampled = generate(spec, rep).and_then(|pop| Ok((poisson_sample(&pop, spec.seed)?, pop)));
    let (data, pop) = match sampled {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return methods
                .iter()
                .map(|&m| Err((m, WccError::Input(msg.clone()))))
                .collect();
        }
    };
    let truth = pop.true_partition();
    let true_params = pop.true_params();
    methods
        .iter()
        .map(|&method| {
            fit_method(&data, method, spec, settings, &truth, &true_params, rep).map_err(|e| (method, e))
        })
        .collect()
}

fn fit_method(
    data: &Dataset,
    method: Method,
    spec: &ScenarioSpec,
    settings: &SolverSettings,
    truth: &Partition,
    true_params: &DMatrix<f64>,
    rep: u32,
) -> Result<RepOutcome> {
    let data = method.prepare(data);
    let grid = match &settings.grid {
        Some(g) => g.clone(),
        None => default_grid(&data, &settings.admm)?,
    };
    let base = ScadSpec::new(grid[0], settings.gamma)?;
    let variant = BicVariant::new(bic_kind(spec.kind));
    let sel = select_lambda(&data, &grid, &base, &settings.admm, &variant, settings.zero_tol)?;
    let fitted = expand_groups(&sel.partition.alpha, &sel.partition);
    Ok(RepOutcome {
        rep,
        method,
        k_hat: sel.partition.k_hat,
        ari: adjusted_rand_index(truth, &sel.partition)?.value,
        rmse: rmse_beta(&fitted, true_params)?,
        lambda_star: sel.lambda_star,
        converged: sel.fit.converged,
    })
}

fn summarize(method: Method, outcomes: &[&RepOutcome], failures: usize, true_groups: usize) -> MethodSummary {
    let ks: Vec<f64> = outcomes.iter().map(|o| o.k_hat as f64).collect();
    let aris: Vec<f64> = outcomes.iter().map(|o| o.ari).collect();
    let rmse: Vec<f64> = outcomes.iter().map(|o| o.rmse).collect();
    let n = outcomes.len();
    let (k_mean, k_sd, ari_mean, ari_sd) = if n == 0 {
        (f64::NAN, None, f64::NAN, None)
    } else {
        let (km, ks_) = mean_sd(&ks);
        let (am, as_) = mean_sd(&aris);
        (km, ks_, am, as_)
    };
    let share = |f: &dyn Fn(&RepOutcome) -> bool| {
        if n == 0 {
            f64::NAN
        } else {
            outcomes.iter().filter(|o| f(o)).count() as f64 / n as f64
        }
    };
    MethodSummary {
        method,
        reps_ok: n,
        failures,
        k_mean,
        k_sd,
        k_correct: share(&|o| o.k_hat == true_groups),
        ari_mean,
        ari_sd,
        rmse_quantiles: Quantiles::of(&rmse),
        rmse,
        converged_share: share(&|o| o.converged),
    }
}

/// Runs `spec.reps` reps (in parallel) and aggregates per method. Reps that
/// fail fatally are counted and excluded.
pub fn run_monte_carlo(spec: &ScenarioSpec, settings: &SolverSettings, methods: &[Method]) -> Result<McResult> {
    spec.validate()?;
    if methods.is_empty() {
        return Err(WccError::Config("at least one method is required".into()));
    }
    let per_rep: Vec<_> = (0..spec.reps as u32)
        .into_par_iter()
        .map(|rep| (rep, run_rep(spec, settings, methods, rep)))
        .collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (rep, results) in per_rep {
        for r in results {
            match r {
                Ok(o) => outcomes.push(o),
                Err((method, e)) => {
                    log::warn!("rep {rep} ({}) failed: {e}", method.name());
                    failures.push((rep, method, e.to_string()));
                }
            }
        }
    }
    let true_groups = spec.group_params.len();
    let summaries = methods
        .iter()
        .map(|&method| {
            let mine: Vec<&RepOutcome> = outcomes.iter().filter(|o| o.method == method).collect();
            let failed = failures.iter().filter(|f| f.1 == method).count();
            summarize(method, &mine, failed, true_groups)
        })
        .collect();
    Ok(McResult {
        outcomes,
        failures,
        summary: McSummary {
            scenario: spec.clone(),
            settings: settings.clone(),
            true_groups,
            methods: summaries,
        },
    })
}
