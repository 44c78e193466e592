use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use wcc_core::io::{format_real, to_json_string};
use wcc_core::simulation::{run_monte_carlo, McResult, McSummary, Method, ScenarioSpec, SolverSettings};
use wcc_core::{Result, WccError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    /// Location means 1.2 / 1.5 / 1.8.
    Mean,
    /// Intercept and slope (1,1) / (1.5,1.5) / (2,2), heteroscedastic noise.
    Regression,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    /// Expected sample size per location.
    #[arg(long, default_value_t = 30.0)]
    pub n: f64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Comma-separated subset of `wcc,cc`.
    #[arg(long, default_value = "wcc,cc")]
    pub methods: String,
    /// Directory for `reps.csv` and `summary.json`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Give the solver the true per-unit variances (regression only).
    #[arg(long)]
    pub known_variance: bool,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

pub const REPS_FILE: &str = "reps.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let mut methods: Vec<Method> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(WccError::Config("--methods lists no method".into()));
    }
    Ok(methods)
}

pub fn scenario_spec(args: &SimulateArgs) -> Result<ScenarioSpec> {
    let mut spec = match args.scenario {
        ScenarioArg::Mean => ScenarioSpec::mean_model(args.n, args.seed, args.reps),
        ScenarioArg::Regression => ScenarioSpec::regression(args.n, args.seed, args.reps),
    };
    if args.known_variance {
        if args.scenario == ScenarioArg::Mean {
            return Err(WccError::Config("--known-variance applies to the regression scenario".into()));
        }
        spec.use_known_variance = true;
    }
    spec.validate()?;
    Ok(spec)
}

/// Runs the study on a pool of `args.threads` workers.
pub fn simulate(args: &SimulateArgs) -> Result<McResult> {
    let spec = scenario_spec(args)?;
    let methods = parse_methods(&args.methods)?;
    let settings = SolverSettings::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| WccError::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| run_monte_carlo(&spec, &settings, &methods))
}

/// Per-rep rows `rep,method,K_hat,ARI,RMSE,lambda_star,converged`.
pub fn reps_csv(result: &McResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| WccError::Input(e.to_string());
    w.write_record(["rep", "method", "K_hat", "ARI", "RMSE", "lambda_star", "converged"])
        .map_err(io)?;
    for o in &result.outcomes {
        w.write_record([
            o.rep.to_string(),
            o.method.name().to_string(),
            o.k_hat.to_string(),
            format_real(o.ari),
            format_real(o.rmse),
            format_real(o.lambda_star),
            o.converged.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| WccError::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn cell(mean: f64, sd: Option<f64>) -> String {
    match sd {
        Some(sd) => format!("{mean:.2}({sd:.3})"),
        None => format!("{mean:.2}(n/a)"),
    }
}

/// A small table shaped like the usual K̂ / ARI / RMSE summary.
pub fn render_table(summary: &McSummary, out: &mut dyn Write) -> std::io::Result<()> {
    let sc = &summary.scenario;
    writeln!(
        out,
        "{:?}, m = {}, H = {}, expected n_i = {}, reps = {}, seed = {}",
        sc.kind, sc.m, sc.h, sc.expected_n, sc.reps, sc.seed
    )?;
    writeln!(
        out,
        "{:<6} {:>14} {:>8} {:>14} {:>12} {:>6} {:>6}",
        "method", "K_hat mean", "per", "ARI", "RMSE median", "conv", "fail"
    )?;
    for s in &summary.methods {
        let median = s.rmse_quantiles.as_ref().map_or(f64::NAN, |q| q.median);
        writeln!(
            out,
            "{:<6} {:>14} {:>8.2} {:>14} {:>12.4} {:>6.2} {:>6}",
            s.method.name().to_uppercase(),
            cell(s.k_mean, s.k_sd),
            s.k_correct,
            cell(s.ari_mean, s.ari_sd),
            median,
            s.converged_share,
            s.failures
        )?;
    }
    Ok(())
}

pub fn write_outputs(result: &McResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPS_FILE), reps_csv(result)?)?;
    std::fs::write(dir.join(SUMMARY_FILE), to_json_string(&result.summary)?)?;
    Ok(())
}

pub fn run(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let result = simulate(args)?;
    if let Some(dir) = &args.out_dir {
        write_outputs(&result, dir)?;
    }
    render_table(&result.summary, out)?;
    for (rep, method, msg) in &result.failures {
        writeln!(out, "rep {rep} {} failed: {msg}", method.name())?;
    }
    Ok(())
}
