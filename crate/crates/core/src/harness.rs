//! Monte-Carlo comparison of frequentist and Bayesian estimators at a fixed
//! shot budget.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{run_protocol, CandidateGrid, ProtocolConfig};
use crate::error::{Error, Result};
use crate::frequentist::{det_metric, fit, matrix_rows, optimal_times, CostKind, FitConfig, InitialGuess, SearchConfig};
use crate::noise::NoiseModel;
use crate::rng::derive_seed;
use crate::sim::{sample_dataset, Schedule};

/// Fraction of failed fits above which a Monte-Carlo batch is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Salt separating Bayesian run seeds from frequentist ones.
const BAYES_SALT: u64 = 1 << 63;

/// Where the frequentist measurement times come from. Shots are split
/// equally, remainder to the earliest times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ScheduleSource {
    /// D-optimal times for the true model, one per parameter by default.
    Optimal {
        #[serde(default)]
        times: Option<usize>,
        #[serde(default)]
        search: SearchConfig,
    },
    Uniform { t_lo: f64, t_hi: f64, points: usize },
    Explicit { times: Vec<f64> },
}

impl Default for ScheduleSource {
    fn default() -> Self {
        ScheduleSource::Optimal { times: None, search: SearchConfig::default() }
    }
}

/// Tunables of the Bayesian arm; the prior box, step count and budget follow
/// from the comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesArm {
    #[serde(default = "default_bayes_shots")]
    pub shots_per_step: u64,
    /// Defaults to 4000 for two parameters and 8000 for three.
    #[serde(default)]
    pub particles: Option<usize>,
    #[serde(default)]
    pub candidates: CandidateGrid,
    #[serde(default = "default_gain_particles")]
    pub gain_particles: usize,
    #[serde(default)]
    pub reselect_fraction: f64,
    #[serde(default = "default_threshold")]
    pub resample_threshold: f64,
    #[serde(default = "default_liu_west")]
    pub liu_west_a: f64,
}

fn default_bayes_shots() -> u64 {
    100
}
fn default_gain_particles() -> usize {
    512
}
fn default_threshold() -> f64 {
    0.5
}
fn default_liu_west() -> f64 {
    0.98
}

impl Default for BayesArm {
    fn default() -> Self {
        BayesArm {
            shots_per_step: default_bayes_shots(),
            particles: None,
            candidates: CandidateGrid::default(),
            gain_particles: default_gain_particles(),
            reselect_fraction: 0.0,
            resample_threshold: default_threshold(),
            liu_west_a: default_liu_west(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub truth: NoiseModel,
    pub total_shots: u64,
    #[serde(default)]
    pub schedule: ScheduleSource,
    /// Fit bounds and prior box are `[θ★/f, f·θ★]`.
    #[serde(default = "default_bound_factor")]
    pub bound_factor: f64,
    #[serde(default = "default_cost")]
    pub cost: CostKind,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub bayes: BayesArm,
    #[serde(default = "default_freq_runs")]
    pub frequentist_runs: usize,
    #[serde(default = "default_bayes_runs")]
    pub bayesian_runs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_bound_factor() -> f64 {
    3.0
}
fn default_cost() -> CostKind {
    CostKind::Wls
}
fn default_restarts() -> usize {
    8
}
fn default_freq_runs() -> usize {
    1000
}
fn default_bayes_runs() -> usize {
    30
}

impl ComparisonSpec {
    pub fn new(truth: NoiseModel, total_shots: u64) -> Self {
        ComparisonSpec {
            truth,
            total_shots,
            schedule: ScheduleSource::default(),
            bound_factor: default_bound_factor(),
            cost: default_cost(),
            restarts: default_restarts(),
            bayes: BayesArm::default(),
            frequentist_runs: default_freq_runs(),
            bayesian_runs: default_bayes_runs(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.total_shots == 0 {
            return bad("total_shots must be >= 1");
        }
        if self.frequentist_runs == 0 || self.bayesian_runs == 0 {
            return bad("run counts must be >= 1");
        }
        if !(self.bound_factor > 1.0 && self.bound_factor.is_finite()) {
            return bad("bound_factor must be > 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1");
        }
        Ok(())
    }

    fn box_around_truth(&self) -> Vec<(f64, f64)> {
        self.truth.params().values().iter().map(|&v| (v / self.bound_factor, v * self.bound_factor)).collect()
    }

    /// Frequentist schedule consuming exactly `total_shots`.
    pub fn frequentist_schedule(&self) -> Result<Schedule> {
        match &self.schedule {
            ScheduleSource::Optimal { times, search } => {
                let k = times.unwrap_or(self.truth.family().dim());
                let ts = optimal_times(&self.truth, k, search)?;
                Schedule::equal_split(&ts, self.total_shots)
            }
            ScheduleSource::Uniform { t_lo, t_hi, points } => uniform_schedule((*t_lo, *t_hi), *points, self.total_shots),
            ScheduleSource::Explicit { times } => Schedule::equal_split(times, self.total_shots),
        }
    }

    pub fn fit_config(&self, seed: u64) -> FitConfig {
        let mut c = FitConfig::new(self.box_around_truth());
        c.cost = self.cost;
        c.initial_guess = InitialGuess::RandomInBox { restarts: self.restarts, seed };
        c
    }

    /// Protocol configuration of the Bayesian arm for one run.
    pub fn protocol_config(&self, seed: u64) -> ProtocolConfig {
        let b = &self.bayes;
        let mut c = ProtocolConfig::new(
            self.truth.family(),
            self.box_around_truth(),
            b.shots_per_step,
            self.total_shots.div_ceil(b.shots_per_step.max(1)) as usize,
        );
        if let Some(k) = b.particles {
            c.particles = k;
        }
        c.total_shots = Some(self.total_shots);
        c.candidates = b.candidates.clone();
        c.gain_particles = b.gain_particles;
        c.reselect_fraction = b.reselect_fraction;
        c.resample_threshold = b.resample_threshold;
        c.liu_west_a = b.liu_west_a;
        c.seed = seed;
        c
    }
}

/// Equidistant times over `[t_lo, t_hi]` with an equal shot split; a single
/// point sits at `t_lo`.
pub fn uniform_schedule(interval: (f64, f64), points: usize, total_shots: u64) -> Result<Schedule> {
    let (lo, hi) = interval;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("interval must satisfy 0 < t_lo < t_hi, got ({lo}, {hi})")));
    }
    if points == 0 {
        return Err(Error::InvalidParameter("points must be >= 1".into()));
    }
    let times: Vec<f64> = if points == 1 {
        vec![lo]
    } else {
        let h = (hi - lo) / (points - 1) as f64;
        (0..points).map(|i| if i + 1 == points { hi } else { lo + h * i as f64 }).collect()
    };
    Schedule::equal_split(&times, total_shots)
}

/// Result of repeated frequentist fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequentistMc {
    pub schedule: Schedule,
    pub mean: Vec<f64>,
    /// Empirical covariance of the converged estimates (row-major rows).
    pub covariance: Vec<Vec<f64>>,
    pub det_metric: f64,
    pub runs: usize,
    pub failed: usize,
}

impl FrequentistMc {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.covariance)
    }
}

/// Result of repeated Bayesian protocols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesianMc {
    /// Mean of the final posterior covariances.
    pub mean_covariance: Vec<Vec<f64>>,
    /// Mean over runs of `det(Σ_final)^{1/(2n)}`.
    pub det_metric: f64,
    pub run_det_metrics: Vec<f64>,
    pub runs: usize,
    pub shots_per_run: u64,
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Unbiased sample covariance.
fn sample_covariance(xs: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = xs[0].len();
    let m = xs.len() as f64;
    let mut mean = vec![0.0; n];
    for x in xs {
        for (a, v) in mean.iter_mut().zip(x) {
            *a += v / m;
        }
    }
    let mut c = DMatrix::zeros(n, n);
    for x in xs {
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    (mean, c / (m - 1.0).max(1.0))
}

/// Fits `frequentist_runs` synthetic data sets drawn on `schedule`.
pub fn run_frequentist_mc_on(spec: &ComparisonSpec, schedule: &Schedule) -> Result<FrequentistMc> {
    spec.validate()?;
    let family = spec.truth.family();
    let results: Vec<Result<(Vec<f64>, bool)>> = (0..spec.frequentist_runs)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(spec.seed, r as u64);
            let data = sample_dataset(&spec.truth, schedule, seed);
            let rep = fit(&data, family, &spec.fit_config(seed))?;
            Ok((rep.theta_hat.into_values(), rep.converged))
        })
        .collect();
    let mut estimates = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        let (x, ok) = r?;
        if ok {
            estimates.push(x);
        } else {
            failed += 1;
        }
    }
    let total = spec.frequentist_runs;
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::Unreliable { failed, total });
    }
    if estimates.len() < 2 {
        return Err(Error::Unreliable { failed, total });
    }
    let (mean, cov) = sample_covariance(&estimates);
    Ok(FrequentistMc {
        schedule: schedule.clone(),
        mean,
        det_metric: det_metric(&cov),
        covariance: matrix_rows(&cov),
        runs: total,
        failed,
    })
}

/// Frequentist arm with the spec's schedule.
pub fn run_frequentist_mc(spec: &ComparisonSpec) -> Result<FrequentistMc> {
    let schedule = spec.frequentist_schedule()?;
    run_frequentist_mc_on(spec, &schedule)
}

pub fn run_bayesian_mc(spec: &ComparisonSpec) -> Result<BayesianMc> {
    spec.validate()?;
    let n = spec.truth.family().dim();
    let runs: Vec<Result<(DMatrix<f64>, u64)>> = (0..spec.bayesian_runs)
        .into_par_iter()
        .map(|r| {
            let cfg = spec.protocol_config(derive_seed(spec.seed ^ BAYES_SALT, r as u64));
            let trace = run_protocol(&spec.truth, &cfg).map_err(|e| e.error)?;
            let cov = trace.final_cov().ok_or_else(|| Error::Numerical("protocol produced no steps".into()))?;
            Ok((cov, trace.total_shots()))
        })
        .collect();
    let mut mean = DMatrix::zeros(n, n);
    let mut metrics = Vec::with_capacity(runs.len());
    for r in runs {
        let (cov, shots) = r?;
        if shots != spec.total_shots {
            return Err(Error::Numerical(format!(
                "Bayesian run consumed {shots} shots instead of {}",
                spec.total_shots
            )));
        }
        metrics.push(det_metric(&cov));
        mean += cov;
    }
    let k = metrics.len() as f64;
    mean /= k;
    Ok(BayesianMc {
        mean_covariance: matrix_rows(&mean),
        det_metric: metrics.iter().sum::<f64>() / k,
        run_det_metrics: metrics,
        runs: spec.bayesian_runs,
        shots_per_run: spec.total_shots,
    })
}

/// `r = det_metric(numerator) / det_metric(denominator)`; `r > 1` favours
/// the denominator arm.
fn ratio_of(num: f64, den: f64) -> Result<f64> {
    if !(num > 0.0 && den > 0.0 && num.is_finite() && den.is_finite()) {
        return Err(Error::Singular(format!("cannot form a precision ratio from {num} and {den}")));
    }
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub spec: ComparisonSpec,
    pub frequentist: FrequentistMc,
    pub bayesian: BayesianMc,
    /// `(det Cov_F / det Σ_B)^{1/(2n)}`; above 1 the Bayesian arm is more precise.
    pub ratio: f64,
    /// Approximate shot ratio `N_F / N_B` for equal precision.
    pub shot_equivalence: f64,
}

pub fn precision_ratio(spec: &ComparisonSpec) -> Result<ComparisonReport> {
    let frequentist = run_frequentist_mc(spec)?;
    let bayesian = run_bayesian_mc(spec)?;
    let ratio = ratio_of(frequentist.det_metric, bayesian.det_metric)?;
    Ok(ComparisonReport { spec: spec.clone(), frequentist, bayesian, ratio, shot_equivalence: ratio * ratio })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformOptimalReport {
    pub uniform: FrequentistMc,
    pub optimal: FrequentistMc,
    /// `(det Cov_uni / det Cov_opt)^{1/(2n)}`; below 1 the uniform schedule wins.
    pub ratio: f64,
}

/// Compares the uniform schedule of `uniform` with the spec's optimal design.
pub fn uniform_vs_optimal_ratio(spec: &ComparisonSpec, interval: (f64, f64), points: usize) -> Result<UniformOptimalReport> {
    let mut opt_spec = spec.clone();
    if !matches!(opt_spec.schedule, ScheduleSource::Optimal { .. }) {
        opt_spec.schedule = ScheduleSource::default();
    }
    let optimal = run_frequentist_mc(&opt_spec)?;
    let uniform = run_frequentist_mc_on(spec, &uniform_schedule(interval, points, spec.total_shots)?)?;
    let ratio = ratio_of(uniform.det_metric, optimal.det_metric)?;
    Ok(UniformOptimalReport { uniform, optimal, ratio })
}

/// One grid point of a `(τ_c★, Δ_c★, N_shot)` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau_c: f64,
    pub delta_c: Option<f64>,
    pub total_shots: u64,
    pub det_frequentist: f64,
    pub det_other: f64,
    pub ratio: f64,
    pub error: Option<String>,
}

/// What a sweep compares the optimal-time frequentist arm against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepKind {
    Bayesian,
    Uniform,
}

/// Builds the truth at one sweep point with `T2 = t2`.
pub fn sweep_truth(t2: f64, tau_c: f64, delta_c: Option<f64>) -> Result<NoiseModel> {
    match delta_c {
        None => NoiseModel::ornstein_uhlenbeck(t2, tau_c),
        Some(d) => NoiseModel::displaced_lorentzian_from_times(t2, tau_c, d),
    }
}

/// Evaluates `template` at every grid point; points that fail are kept with
/// the error message. Rows are ordered by `(N_shot, τ_c, Δ_c)`.
pub fn ratio_sweep(
    template: &ComparisonSpec,
    kind: SweepKind,
    taus: &[f64],
    deltas: &[Option<f64>],
    shots: &[u64],
    uniform: ((f64, f64), usize),
) -> Vec<SweepRow> {
    let t2 = template.truth.t2();
    let mut rows = Vec::new();
    for &n in shots {
        for &tau in taus {
            for &delta in deltas {
                let mut row = SweepRow {
                    tau_c: tau,
                    delta_c: delta,
                    total_shots: n,
                    det_frequentist: f64::NAN,
                    det_other: f64::NAN,
                    ratio: f64::NAN,
                    error: None,
                };
                let result = sweep_truth(t2, tau, delta).and_then(|truth| {
                    let mut spec = template.clone();
                    spec.truth = truth;
                    spec.total_shots = n;
                    match kind {
                        SweepKind::Bayesian => {
                            let r = precision_ratio(&spec)?;
                            Ok((r.frequentist.det_metric, r.bayesian.det_metric, r.ratio))
                        }
                        SweepKind::Uniform => {
                            let r = uniform_vs_optimal_ratio(&spec, uniform.0, uniform.1)?;
                            Ok((r.optimal.det_metric, r.uniform.det_metric, 1.0 / r.ratio))
                        }
                    }
                });
                match result {
                    Ok((f, o, r)) => {
                        row.det_frequentist = f;
                        row.det_other = o;
                        row.ratio = r;
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                rows.push(row);
            }
        }
    }
    rows
}

/// CSV with header `tau_c,delta_c,total_shots,det_frequentist,det_other,ratio,error`.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["tau_c", "delta_c", "total_shots", "det_frequentist", "det_other", "ratio", "error"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.tau_c.to_string(),
            r.delta_c.map(|d| d.to_string()).unwrap_or_default(),
            r.total_shots.to_string(),
            r.det_frequentist.to_string(),
            r.det_other.to_string(),
            r.ratio.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}
