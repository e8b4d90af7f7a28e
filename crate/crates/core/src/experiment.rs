//! Config-driven experiment runner behind the `dsbayes` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{bound_trace, mstd, trace_seeds, BoundRecord, TraceMode, TraceSeeds};
use crate::error::{Error, Result};
use crate::inference::{
    projected_solution, run_inference_with, InferenceConfig, InferenceRun, LambdaSearch, StopMode,
};
use crate::linalg::relative_error;
use crate::operator::{GramMap, SpdMap};
use crate::oracle::{DataSpace, Discrepancy, EFFECTIVE_DIM_THRESHOLD};
use crate::problems::{ProblemInstance, ProblemSpec};
use crate::qgkb::QgkbOptions;

pub const SCHEMA_VERSION: u32 = 1;

/// Multiplicative slack used when checking computed distances against the
/// certified bounds.
pub const BOUND_SLACK: f64 = 1e-8;

/// Absolute allowance for round-off in the dense reference values; at
/// breakdown the bounds are exactly zero while the references are not.
pub const BOUND_FLOOR: f64 = 1e-10;

/// Whether a computed distance respects its certified bound.
pub fn within_bound(value: f64, bound: f64) -> bool {
    value <= bound * (1.0 + BOUND_SLACK) + BOUND_FLOOR
}

pub const TRACE_HEADER: &str =
    "k,alpha,beta,lambda,nll,rel_lambda_change,zeta,gamma,dF_bound,kl_bound,rel_error,mstd";
pub const COMPARE_HEADER: &str =
    "r,qgkb_rel_error,lis_rel_error,qgkb_mstd,lis_mstd,qgkb_dF,lis_dF";

fn default_seed() -> u64 {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; relative paths are resolved against the config
    /// file's directory.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub k_max: usize,
    pub stop_tol: f64,
    pub stop_mode: StopMode,
    pub reorth: bool,
    pub breakdown_tol: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub lambda_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let base = InferenceConfig::default();
        Self {
            k_max: base.k_max,
            stop_tol: base.stop_tol,
            stop_mode: base.stop_mode,
            reorth: base.qgkb.reorth,
            breakdown_tol: base.qgkb.breakdown_tol,
            lambda_lo: base.search.lo,
            lambda_hi: base.search.hi,
            lambda_tol: base.search.tol,
        }
    }
}

impl SolverConfig {
    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig {
            k_max: self.k_max,
            stop_tol: self.stop_tol,
            stop_mode: self.stop_mode,
            search: LambdaSearch { lo: self.lambda_lo, hi: self.lambda_hi, tol: self.lambda_tol },
            qgkb: QgkbOptions {
                reorth: self.reorth,
                breakdown_tol: self.breakdown_tol,
                ..QgkbOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub dense_oracle: bool,
    /// Largest parameter dimension for which exact comparisons are run.
    pub dense_cap: usize,
    pub eig_threshold: f64,
    pub trace_seeds: TraceMode,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            dense_oracle: true,
            dense_cap: 4096,
            eig_threshold: crate::oracle::EIG_THRESHOLD,
            trace_seeds: TraceMode::Dense,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads the config and resolves its output directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let out = if config.output.is_absolute() {
            config.output.clone()
        } else {
            base.join(&config.output)
        };
        Ok((config, out))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let s = &self.solver;
        if !(1..=10_000).contains(&s.k_max) {
            return bad(format!("solver.k_max = {} outside 1..=10000", s.k_max));
        }
        if !(s.stop_tol > 0.0 && s.stop_tol < 1.0) {
            return bad(format!("solver.stop_tol = {} outside (0, 1)", s.stop_tol));
        }
        if !(s.breakdown_tol > 0.0 && s.breakdown_tol < 1e-2) {
            return bad(format!("solver.breakdown_tol = {} outside (0, 1e-2)", s.breakdown_tol));
        }
        if !(s.lambda_lo > 0.0 && s.lambda_hi > s.lambda_lo && s.lambda_hi.is_finite()) {
            return bad(format!(
                "solver λ bracket [{}, {}] must satisfy 0 < lo < hi < ∞",
                s.lambda_lo, s.lambda_hi
            ));
        }
        if !(s.lambda_tol > 0.0 && s.lambda_tol < 1.0) {
            return bad(format!("solver.lambda_tol = {} outside (0, 1)", s.lambda_tol));
        }
        let d = &self.diagnostics;
        if d.dense_cap == 0 {
            return bad("diagnostics.dense_cap must be positive".into());
        }
        if !(d.eig_threshold > 0.0 && d.eig_threshold < 1.0) {
            return bad(format!("diagnostics.eig_threshold = {} outside (0, 1)", d.eig_threshold));
        }
        if let TraceMode::Hutchinson { probes, .. } = d.trace_seeds {
            if probes < 2 {
                return bad("diagnostics.trace_seeds.probes must be at least 2".into());
            }
        }
        self.problem.resolve().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Process exit code for an error: 2 for configuration and I/O problems,
/// 3 for numerical failures and size limits.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Io(_) => 2,
        _ => 3,
    }
}

/// Per-step metrics of a run.
#[derive(Clone, Debug)]
pub struct StepMetrics {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub nll: f64,
    pub rel_lambda_change: f64,
    pub bound: BoundRecord,
    pub rel_error: Option<f64>,
    pub mstd: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleStep {
    pub k: usize,
    pub lambda: f64,
    pub forstner: f64,
    pub df_bound: f64,
    pub df_ok: bool,
    pub kl: f64,
    pub kl_bound: f64,
    pub kl_ok: bool,
    pub mean_error_sq: f64,
    pub mean_bound: f64,
    pub mean_ok: bool,
    pub zeta_recurrence: f64,
    pub zeta_direct: f64,
    pub gamma_recurrence: f64,
    pub gamma_direct: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub effective_dimension: usize,
    pub eigenvalue_count: usize,
    pub all_bounds_hold: bool,
    pub steps: Vec<OracleStep>,
}

/// Everything produced by one run, before it is written to disk.
pub struct ExperimentOutcome {
    pub problem: ProblemInstance,
    pub run: InferenceRun,
    pub seeds: TraceSeeds,
    pub steps: Vec<StepMetrics>,
    pub means: Vec<DVector<f64>>,
    pub variances: Vec<DVector<f64>>,
    pub final_mean: DVector<f64>,
    pub final_variance: DVector<f64>,
    pub warnings: Vec<String>,
    pub oracle: Option<OracleReport>,
    pub data_space: Option<DataSpace>,
    pub solver_seconds: f64,
    pub oracle_seconds: f64,
}

fn problem_error(e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) => Error::Config(msg),
        e @ Error::DimensionMismatch { .. } => Error::Config(e.to_string()),
        other => other,
    }
}

/// Builds the problem, runs the solver and (if enabled) the dense oracle.
///
/// `keep_fields` retains the per-step mean and variance vectors.
pub fn execute(config: &ExperimentConfig, keep_fields: bool) -> Result<ExperimentOutcome> {
    let problem = config.problem.build(config.seed).map_err(problem_error)?;
    let handles = problem.handles();
    let mut warnings: Vec<String> = problem.prior_warnings.clone();

    let start = Instant::now();
    let mut per_step: Vec<(Option<f64>, f64)> = Vec::new();
    let mut means = Vec::new();
    let mut variances = Vec::new();
    let run = run_inference_with(&handles, &config.solver.inference_config(), |approx, _| {
        let mean = approx.mean_from_basis();
        let (var, w) = approx.variance()?;
        warnings.extend(w);
        let rel = problem.x_true.as_ref().map(|x| relative_error(&mean, x));
        per_step.push((rel, mstd(&var)?));
        if keep_fields {
            means.push(mean);
            variances.push(var);
        }
        Ok(())
    })?;
    let final_mean = run.approx.mean_from_basis();
    let (final_variance, _) = run.approx.variance()?;

    let gram = GramMap::new(handles.forward.clone(), handles.prior.clone())?;
    let seeds = trace_seeds(&gram, handles.noise.as_ref(), config.diagnostics.trace_seeds)?;
    let lambdas: Vec<f64> = run.trace.iter().map(|r| r.lambda).collect();
    let bounds = bound_trace(
        run.state.alphas(),
        run.state.betas(),
        seeds.zeta0,
        seeds.gamma0_sq,
        &lambdas,
    )?;
    warnings.extend(bounds.warnings.iter().cloned());
    let solver_seconds = start.elapsed().as_secs_f64();

    let steps: Vec<StepMetrics> = run
        .trace
        .iter()
        .zip(&bounds.records)
        .zip(&per_step)
        .map(|((rec, bound), &(rel_error, mstd))| StepMetrics {
            k: rec.k,
            alpha: run.state.alpha(rec.k),
            beta: run.state.beta(rec.k + 1),
            lambda: rec.lambda,
            nll: rec.nll,
            rel_lambda_change: rec.rel_change,
            bound: *bound,
            rel_error,
            mstd,
        })
        .collect();

    let oracle_start = Instant::now();
    let (oracle, data_space) = if config.diagnostics.dense_oracle && problem.n() <= config.diagnostics.dense_cap {
        let ds = DataSpace::from_operators(&gram, handles.noise.as_ref(), &handles.y)?;
        let report = oracle_report(&ds, &run, &steps, config.diagnostics.eig_threshold)?;
        if !report.all_bounds_hold {
            let msg = "a computed distance exceeded its certified bound".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
        }
        (Some(report), Some(ds))
    } else {
        (None, None)
    };
    let oracle_seconds = oracle_start.elapsed().as_secs_f64();

    Ok(ExperimentOutcome {
        problem,
        run,
        seeds,
        steps,
        means,
        variances,
        final_mean,
        final_variance,
        warnings,
        oracle,
        data_space,
        solver_seconds,
        oracle_seconds,
    })
}

/// Exact discrepancy of the rank-`k` approximation at `λ`.
pub fn krylov_discrepancy(ds: &DataSpace, run: &InferenceRun, k: usize, lambda: f64) -> Result<Discrepancy> {
    let b = run.state.bidiagonal(k)?;
    let v = run.state.v_matrix(k)?;
    let xi = projected_solution(&b, run.state.beta1(), lambda)?;
    ds.discrepancy(&ds.krylov_factor(&v, &b), &(&v * xi), lambda)
}

fn oracle_report(
    ds: &DataSpace,
    run: &InferenceRun,
    steps: &[StepMetrics],
    eig_threshold: f64,
) -> Result<OracleReport> {
    let computed: Vec<Result<OracleStep>> = steps
        .par_iter()
        .map(|s| {
            let d = krylov_discrepancy(ds, run, s.k, s.lambda)?;
            Ok(OracleStep {
                k: s.k,
                lambda: s.lambda,
                forstner: d.forstner,
                df_bound: s.bound.df_bound,
                df_ok: within_bound(d.forstner, s.bound.df_bound),
                kl: d.kl,
                kl_bound: s.bound.kl_bound,
                kl_ok: within_bound(d.kl, s.bound.kl_bound),
                mean_error_sq: d.mean_error_sq,
                mean_bound: s.bound.mean_bound,
                mean_ok: within_bound(d.mean_error_sq, s.bound.mean_bound),
                zeta_recurrence: s.bound.zeta,
                zeta_direct: d.trace_gap,
                gamma_recurrence: s.bound.gamma,
                gamma_direct: d.frobenius_gap,
            })
        })
        .collect();
    let steps = computed.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(OracleReport {
        effective_dimension: ds.effective_dimension(EFFECTIVE_DIM_THRESHOLD),
        eigenvalue_count: ds.effective_dimension(eig_threshold),
        all_bounds_hold: steps.iter().all(|s| s.df_ok && s.kl_ok && s.mean_ok),
        steps,
    })
}

fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn trace_csv(steps: &[StepMetrics]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for s in steps {
        let row = [
            s.k.to_string(),
            fmt_f64(s.alpha),
            fmt_f64(s.beta),
            fmt_f64(s.lambda),
            fmt_f64(s.nll),
            if s.rel_lambda_change.is_nan() { String::new() } else { fmt_f64(s.rel_lambda_change) },
            fmt_f64(s.bound.zeta),
            fmt_f64(s.bound.gamma),
            fmt_f64(s.bound.df_bound),
            fmt_f64(s.bound.kl_bound),
            fmt_opt(s.rel_error),
            fmt_f64(s.mstd),
        ];
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[derive(Serialize)]
struct ResultJson<'a> {
    schema_version: u32,
    seed: u64,
    n: usize,
    m: usize,
    lambda: f64,
    k: usize,
    stop_reason: crate::inference::StopReason,
    breakdown: bool,
    breakdown_cause: Option<crate::qgkb::BreakdownCause>,
    lambda_at_boundary: bool,
    rel_error: Option<f64>,
    mstd: f64,
    zeta0: f64,
    gamma0_sq: f64,
    noise_std: Option<f64>,
    warnings: &'a [String],
    timing_file: &'static str,
}

#[derive(Serialize)]
struct FieldSidecar<'a> {
    file: &'a str,
    shape: &'a [usize],
    dtype: &'static str,
    byte_order: &'static str,
    order: &'static str,
}

fn write_field(dir: &Path, name: &str, shape: &[usize], data: &DVector<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * data.len());
    for v in data.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let file = format!("{name}.bin");
    fs::write(dir.join(&file), bytes)?;
    let sidecar = FieldSidecar { file: &file, shape, dtype: "f64", byte_order: "little", order: "row-major" };
    fs::write(dir.join(format!("{file}.json")), to_json(&sidecar)?)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Reads a flat little-endian `f64` field.
pub fn read_field(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Config(format!("{} is not a whole number of f64 values", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// `dsbayes run`: executes the config and writes all artifacts to `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    let outcome = execute(config, false)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("trace.csv"), trace_csv(&outcome.steps))?;
    let last = outcome.steps.last();
    let result = ResultJson {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        n: outcome.problem.n(),
        m: outcome.problem.m(),
        lambda: outcome.run.approx.lambda(),
        k: outcome.run.approx.k(),
        stop_reason: outcome.run.stop_reason,
        breakdown: outcome.run.state.broken().is_some(),
        breakdown_cause: outcome.run.state.broken(),
        lambda_at_boundary: outcome.run.trace.last().is_some_and(|r| r.at_boundary),
        rel_error: last.and_then(|s| s.rel_error),
        mstd: mstd(&outcome.final_variance)?,
        zeta0: outcome.seeds.zeta0,
        gamma0_sq: outcome.seeds.gamma0_sq,
        noise_std: outcome.problem.noise.diagonal().map(|d| d[0].sqrt()),
        warnings: &outcome.warnings,
        timing_file: "timing.json",
    };
    fs::write(out.join("result.json"), to_json(&result)?)?;
    let timing = serde_json::json!({
        "solver_seconds": outcome.solver_seconds,
        "oracle_seconds": outcome.oracle_seconds,
    });
    fs::write(out.join("timing.json"), to_json(&timing)?)?;
    let shape = &outcome.problem.shape;
    write_field(out, "mean", shape, &outcome.final_mean)?;
    write_field(out, "variance", shape, &outcome.final_variance)?;
    if let Some(x) = &outcome.problem.x_true {
        write_field(out, "truth", shape, x)?;
    }
    if let Some(report) = &outcome.oracle {
        fs::write(out.join("oracle.json"), to_json(report)?)?;
    }
    Ok(outcome)
}

/// One row of the Q-GKB versus LIS comparison.
#[derive(Clone, Debug)]
pub struct CompareRow {
    pub r: usize,
    pub qgkb_rel_error: Option<f64>,
    pub lis_rel_error: Option<f64>,
    pub qgkb_mstd: f64,
    pub lis_mstd: f64,
    pub qgkb_df: f64,
    pub lis_df: f64,
}

/// Q-GKB at step `r` against the rank-`r` LIS approximation, both at `λ_r`
/// from the empirical-Bayes trace (`λ_1` for `r = 0`).
pub fn compare_lis(config: &ExperimentConfig) -> Result<Vec<CompareRow>> {
    let n = config.problem.parameter_dim().map_err(problem_error)?;
    if n > config.diagnostics.dense_cap {
        return Err(Error::InvalidArgument(format!(
            "LIS comparison needs the dense oracle; n = {n} exceeds dense_cap = {}",
            config.diagnostics.dense_cap
        )));
    }
    let mut diag = config.clone();
    diag.diagnostics.dense_oracle = false;
    let outcome = execute(&diag, true)?;
    let handles = outcome.problem.handles();
    let gram = GramMap::new(handles.forward.clone(), handles.prior.clone())?;
    let ds = DataSpace::from_operators(&gram, handles.noise.as_ref(), &handles.y)?;
    let eig = ds.generalized_eig(config.diagnostics.eig_threshold);
    let prior_var = &outcome.problem.prior_variance;
    let embedded: Vec<DVector<f64>> = (0..eig.mu.len())
        .into_par_iter()
        .map(|i| gram.embed(&eig.w.column(i).clone_owned()))
        .collect();
    let x_true = outcome.problem.x_true.as_ref();
    let max_r = outcome.steps.len().min(eig.mu.len());
    let lambda_at = |r: usize| outcome.steps[r.max(1) - 1].lambda;

    (0..=max_r)
        .into_par_iter()
        .map(|r| {
            let lambda = lambda_at(r);
            let (q_mean, q_var, q_df) = if r == 0 {
                let d = ds.discrepancy(&ds.lis_factor(0), &DVector::zeros(ds.dim()), lambda)?;
                (DVector::zeros(n), prior_var / lambda, d.forstner)
            } else {
                let d = krylov_discrepancy(&ds, &outcome.run, r, lambda)?;
                (outcome.means[r - 1].clone(), outcome.variances[r - 1].clone(), d.forstner)
            };
            let coeffs = ds.truncated_coefficients(r, lambda);
            let lis_mean = gram.embed(&coeffs);
            let mut lis_var = prior_var.clone();
            for i in 0..r {
                let weight = eig.mu[i] / (lambda + eig.mu[i]);
                lis_var -= embedded[i].map(|e| e * e) * weight;
            }
            lis_var /= lambda;
            lis_var.iter_mut().for_each(|v| *v = v.max(0.0));
            let lis_df = ds.discrepancy(&ds.lis_factor(r), &coeffs, lambda)?.forstner;
            Ok(CompareRow {
                r,
                qgkb_rel_error: x_true.map(|x| relative_error(&q_mean, x)),
                lis_rel_error: x_true.map(|x| relative_error(&lis_mean, x)),
                qgkb_mstd: mstd(&q_var)?,
                lis_mstd: mstd(&lis_var)?,
                qgkb_df: q_df,
                lis_df,
            })
        })
        .collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.r,
            fmt_opt(row.qgkb_rel_error),
            fmt_opt(row.lis_rel_error),
            fmt_f64(row.qgkb_mstd),
            fmt_f64(row.lis_mstd),
            fmt_f64(row.qgkb_df),
            fmt_f64(row.lis_df),
        );
    }
    out
}

/// `dsbayes compare-lis`: writes `compare.csv` into `out`.
pub fn run_compare(config: &ExperimentConfig, out: &Path) -> Result<Vec<CompareRow>> {
    let rows = compare_lis(config)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("compare.csv"), compare_csv(&rows))?;
    Ok(rows)
}

/// Thread count from `DSBAYES_THREADS` (default 1).
pub fn thread_count() -> Result<usize> {
    match std::env::var("DSBAYES_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| Error::Config(format!("DSBAYES_THREADS = `{v}` is not a positive integer"))),
        Err(_) => Ok(1),
    }
}
