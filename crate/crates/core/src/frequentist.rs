//! Frequentist estimation: likelihood and least-squares fits, Fisher
//! information, asymptotic covariance and D-optimal measurement times.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{Family, NoiseModel, ParamArray, ParamVector};
use crate::rng::rng_from_seed;
use crate::sim::DataSet;

/// Probability clamp in logarithms and variance denominators.
pub const PROB_EPS: f64 = 1e-12;

/// `p(0)` at time `t` and its parameter gradient `-½ e^{-Γ} ∇Γ`.
pub(crate) fn prob0_and_grad(model: &NoiseModel, t: f64) -> (f64, ParamArray) {
    let g = model.attenuation_unchecked(t);
    let e = (-g).exp();
    let mut d = model.grad_attenuation_unchecked(t);
    for x in d.data_mut() {
        *x *= -0.5 * e;
    }
    (1.0 - (-0.5 * (-g).exp_m1()), d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CostKind {
    /// Negative log-likelihood.
    #[default]
    Nll,
    /// Weighted least squares with model-probability weights.
    Wls,
}

fn model_for(theta: &ParamVector) -> Result<NoiseModel> {
    NoiseModel::from_params(theta)
}

/// `-Σ_i N_i Σ_m f_i(m) ln p_i(m|θ)` with probabilities clamped to `[ε, 1-ε]`.
pub fn nll_cost(theta: &ParamVector, data: &DataSet) -> Result<f64> {
    let m = model_for(theta)?;
    Ok(cost_terms(&m, data, CostKind::Nll, false).0)
}

/// `Σ_i (f_i(0) - p_i(0|θ))² / σ²_i` with `σ²_i = p(1-p)/N_i`, floored at `ε/N_i`.
pub fn wls_cost(theta: &ParamVector, data: &DataSet) -> Result<f64> {
    let m = model_for(theta)?;
    Ok(cost_terms(&m, data, CostKind::Wls, false).0)
}

/// Cost, exact gradient and Gauss-Newton Hessian.
fn cost_terms(model: &NoiseModel, data: &DataSet, kind: CostKind, derivs: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = model.family().dim();
    let mut cost = 0.0;
    let mut grad = DVector::zeros(if derivs { n } else { 0 });
    let mut hess = DMatrix::zeros(if derivs { n } else { 0 }, if derivs { n } else { 0 });
    for r in &data.records {
        let (p_raw, d) = if derivs {
            prob0_and_grad(model, r.t)
        } else {
            (1.0 + 0.5 * (-model.attenuation_unchecked(r.t)).exp_m1(), ParamArray::new(&[]))
        };
        let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p_raw);
        let p = p_raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let q = 1.0 - p;
        let shots = r.shots as f64;
        let (n0, n1) = (r.count0 as f64, r.count1() as f64);
        let (dc_dp, curv) = match kind {
            CostKind::Nll => {
                cost -= n0 * p.ln() + n1 * q.ln();
                (-(n0 / p - n1 / q), shots / (p * q))
            }
            CostKind::Wls => {
                let f = r.freq0();
                let var_raw = p * q;
                let floored = var_raw < PROB_EPS;
                let var = var_raw.max(PROB_EPS);
                let res = f - p;
                cost += res * res * shots / var;
                let mut dc = -2.0 * res * shots / var;
                if !floored {
                    dc -= res * res * shots * (1.0 - 2.0 * p) / (var * var);
                }
                (dc, 2.0 * shots / var)
            }
        };
        if derivs && !clamped {
            for j in 0..n {
                grad[j] += dc_dp * d[j];
                for k in 0..n {
                    hess[(j, k)] += curv * d[j] * d[k];
                }
            }
        }
    }
    (cost, grad, hess)
}

/// Starting point(s) for [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum InitialGuess {
    Given { values: Vec<f64> },
    RandomInBox { restarts: usize, seed: u64 },
}

impl Default for InitialGuess {
    fn default() -> Self {
        InitialGuess::RandomInBox { restarts: 8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// `(low, high)` per parameter.
    pub bounds: Vec<(f64, f64)>,
    #[serde(default)]
    pub initial_guess: InitialGuess,
    #[serde(default)]
    pub cost: CostKind,
    /// Stop once the Newton decrement `gᵀ H⁻¹ g` falls below this.
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Stop once every step is below this fraction of its box width.
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_grad_tol() -> f64 {
    1e-10
}
fn default_step_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    200
}

impl FitConfig {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        FitConfig {
            bounds,
            initial_guess: InitialGuess::default(),
            cost: CostKind::Nll,
            grad_tol: default_grad_tol(),
            step_tol: default_step_tol(),
            max_iter: default_max_iter(),
        }
    }

    /// Box `[θ/factor, θ·factor]` around a reference model.
    pub fn around(model: &NoiseModel, factor: f64) -> Self {
        FitConfig::new(model.param_values().iter().map(|&v| (v / factor, v * factor)).collect())
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        if self.bounds.len() != family.dim() {
            return Err(Error::InvalidParameter(format!(
                "{family} needs {} bounds, got {}",
                family.dim(),
                self.bounds.len()
            )));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "bound for {} must satisfy low < high, got ({lo}, {hi})",
                    family.param_names()[i]
                )));
            }
        }
        let lower: Vec<f64> = self.bounds.iter().map(|b| b.0).collect();
        if let Err(e) = NoiseModel::from_slice(family, &lower) {
            return Err(Error::InvalidParameter(format!("box leaves the model domain: {e}")));
        }
        if let InitialGuess::Given { values } = &self.initial_guess {
            if values.len() != family.dim()
                || values.iter().zip(&self.bounds).any(|(v, &(lo, hi))| !(lo..=hi).contains(v))
            {
                return Err(Error::InvalidParameter("initial guess outside the bound box".into()));
            }
        }
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0 && self.max_iter > 0) {
            return Err(Error::InvalidParameter("tolerances and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Point estimate with its asymptotic uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub theta_hat: ParamVector,
    pub cost_at_min: f64,
    /// Asymptotic covariance (row-major rows), absent if the Fisher sum is singular.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// `det(covariance)^{1/(2n)}`.
    pub det_metric: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Starts whose local optimization converged.
    pub converged_starts: usize,
    pub starts: usize,
}

impl EstimateReport {
    pub fn model(&self) -> Result<NoiseModel> {
        NoiseModel::from_params(&self.theta_hat)
    }

    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let c = self.covariance.as_ref()?;
        let n = c.len();
        Some(DMatrix::from_fn(n, n, |i, j| c[i][j]))
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// `det(Σ)^{1/(2n)}`, the geometric-mean standard deviation.
pub fn det_metric(cov: &DMatrix<f64>) -> f64 {
    cov.determinant().max(0.0).powf(0.5 / cov.nrows() as f64)
}

struct LocalFit {
    x: Vec<f64>,
    cost: f64,
    converged: bool,
    iterations: usize,
}

/// Box-constrained minimization of the chosen cost.
pub fn fit(data: &DataSet, family: Family, config: &FitConfig) -> Result<EstimateReport> {
    config.validate(family)?;
    if data.records.is_empty() {
        return Err(Error::IllPosed("data set is empty".into()));
    }
    let distinct = data.distinct_times();
    if distinct < family.dim() {
        return Err(Error::IllPosed(format!(
            "{distinct} distinct time(s) cannot determine {} parameters of {family}",
            family.dim()
        )));
    }
    let starts: Vec<Vec<f64>> = match &config.initial_guess {
        InitialGuess::Given { values } => vec![values.clone()],
        InitialGuess::RandomInBox { restarts, seed } => {
            let mut rng = rng_from_seed(*seed);
            (0..(*restarts).max(1))
                .map(|_| config.bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect())
                .collect()
        }
    };
    let mut best: Option<LocalFit> = None;
    let mut converged_starts = 0;
    for x0 in &starts {
        let local = levenberg_marquardt(data, family, config, x0.clone())?;
        converged_starts += usize::from(local.converged);
        let better = match &best {
            None => true,
            Some(b) => local.cost < b.cost,
        };
        if better {
            best = Some(local);
        }
    }
    let best = best.expect("at least one start");
    let model = NoiseModel::from_slice_unchecked(family, &best.x);
    let design: Vec<(f64, u64)> = data.records.iter().map(|r| (r.t, r.shots)).collect();
    let cov = asymptotic_cov(&model, &design).ok();
    Ok(EstimateReport {
        theta_hat: ParamVector::new(family, best.x)?,
        cost_at_min: best.cost,
        det_metric: cov.as_ref().map(det_metric),
        covariance: cov.as_ref().map(matrix_rows),
        converged: best.converged,
        iterations: best.iterations,
        converged_starts,
        starts: starts.len(),
    })
}

fn levenberg_marquardt(data: &DataSet, family: Family, cfg: &FitConfig, mut x: Vec<f64>) -> Result<LocalFit> {
    let n = family.dim();
    let eval = |x: &[f64], derivs: bool| cost_terms(&NoiseModel::from_slice_unchecked(family, x), data, cfg.cost, derivs);
    let width: Vec<f64> = cfg.bounds.iter().map(|&(lo, hi)| hi - lo).collect();
    let (mut cost, mut grad, mut hess) = eval(&x, true);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iter {
        iterations += 1;
        // Free set of the projected problem.
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let (lo, hi) = cfg.bounds[i];
                let tiny = 1e-14 * width[i];
                !((x[i] <= lo + tiny && grad[i] > 0.0) || (x[i] >= hi - tiny && grad[i] < 0.0))
            })
            .collect();
        if free.is_empty() {
            converged = true;
            break;
        }
        let m = free.len();
        let hf = DMatrix::from_fn(m, m, |a, b| hess[(free[a], free[b])]);
        let gf = DVector::from_fn(m, |a, _| grad[free[a]]);
        let diag_floor = 1e-12 * hf.diagonal().max().max(f64::MIN_POSITIVE);

        if let Some(ch) = hf.clone().cholesky() {
            if gf.dot(&ch.solve(&gf)) <= cfg.grad_tol {
                converged = true;
                break;
            }
        }

        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = hf.clone();
            for i in 0..m {
                a[(i, i)] += lambda * hf[(i, i)].max(diag_floor);
            }
            let Some(ch) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = ch.solve(&(-&gf));
            let mut trial = x.clone();
            for (a, &i) in free.iter().enumerate() {
                let (lo, hi) = cfg.bounds[i];
                trial[i] = (x[i] + step[a]).clamp(lo, hi);
            }
            let (c_new, _, _) = eval(&trial, false);
            if c_new.is_finite() && c_new < cost {
                let small = (0..n).all(|i| (trial[i] - x[i]).abs() <= cfg.step_tol * width[i]);
                x = trial;
                let (c, g, h) = eval(&x, true);
                cost = c;
                grad = g;
                hess = h;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            // Nothing left to gain at working precision.
            let predicted = -gf.dot(&step) - 0.5 * step.dot(&(&hf * &step));
            if predicted <= 1e-15 * cost.abs().max(1.0) {
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            break;
        }
    }
    if !cost.is_finite() {
        return Err(Error::Numerical("fit produced a non-finite cost".into()));
    }
    Ok(LocalFit { x, cost, converged, iterations })
}

/// Fisher information of one binary Ramsey shot at time `t`:
/// `I = ∂p ∂pᵀ / (p(1-p))`.
pub fn fisher_matrix(model: &NoiseModel, t: f64) -> Result<DMatrix<f64>> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain("time", t));
    }
    let (p, d) = prob0_and_grad(model, t);
    let pq = p * (1.0 - p);
    if pq < PROB_EPS {
        return Err(Error::Singular(format!(
            "outcome probability {p} at t = {t} carries no information"
        )));
    }
    let n = d.len();
    Ok(DMatrix::from_fn(n, n, |j, k| d[j] * d[k] / pq))
}

/// Shot-weighted Fisher sum `Σ_i N_i I_i`.
pub fn fisher_sum(model: &NoiseModel, design: &[(f64, u64)]) -> Result<DMatrix<f64>> {
    let n = model.family().dim();
    let mut f = DMatrix::zeros(n, n);
    for &(t, shots) in design {
        f += fisher_matrix(model, t)? * shots as f64;
    }
    Ok(f)
}

/// Relative eigenvalue below which a diagonally scaled Fisher matrix counts as
/// singular.
pub const SINGULAR_RCOND: f64 = 1e-13;

/// Inverse of a symmetric positive semidefinite matrix, rejecting singular input.
pub(crate) fn invert_information(f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let s: Vec<f64> = (0..n).map(|i| f[(i, i)].sqrt()).collect();
    if s.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::Singular("infinite covariance: a parameter carries no information".into()));
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| f[(i, j)] / (s[i] * s[j]));
    let eig = scaled.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if !(min > SINGULAR_RCOND * max) {
        return Err(Error::Singular(format!(
            "infinite covariance: Fisher matrix has relative eigenvalue {:.3e}",
            min / max
        )));
    }
    let inv = scaled
        .cholesky()
        .ok_or_else(|| Error::Singular("infinite covariance: Cholesky failed".into()))?
        .inverse();
    let mut out = DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (s[i] * s[j]));
    // Enforce exact symmetry.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// `Σ = (Σ_i N_i I_i)^{-1}` for a design of `(time, shots)` pairs.
///
/// Coincident times are allowed so that degenerate designs report the
/// singularity rather than a validation error.
pub fn asymptotic_cov(model: &NoiseModel, design: &[(f64, u64)]) -> Result<DMatrix<f64>> {
    if design.is_empty() {
        return Err(Error::InvalidParameter("empty design".into()));
    }
    invert_information(&fisher_sum(model, design)?)
}

/// Linear map `M` from frequency deviations to parameter deviations,
/// `δθ = M δf`, for as many times as parameters.
pub fn sensitivity_matrix(model: &NoiseModel, times: &[f64]) -> Result<DMatrix<f64>> {
    let n = model.family().dim();
    if times.len() != n {
        return Err(Error::InvalidParameter(format!(
            "need exactly {n} times for {}, got {}",
            model.family(),
            times.len()
        )));
    }
    for &t in times {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::domain("time", t));
        }
    }
    // J_ij = ∂p(t_i)/∂θ_j
    let mut j = DMatrix::zeros(n, n);
    for (i, &t) in times.iter().enumerate() {
        let (_, d) = prob0_and_grad(model, t);
        for k in 0..n {
            j[(i, k)] = d[k];
        }
    }
    let svd = j.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::Singular(format!(
            "sensitivity matrix is singular (relative singular value {:.3e})",
            smin / smax
        )));
    }
    j.try_inverse().ok_or_else(|| Error::Singular("sensitivity matrix is singular".into()))
}

/// Inverts `p(0) = ½(1 + e^{-t/T2})` for a single time.
pub fn lindblad_closed_form_fit(f0: f64, t: f64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::domain("time", t));
    }
    if !(0.0..=1.0).contains(&f0) {
        return Err(Error::InvalidParameter(format!("frequency must lie in [0, 1], got {f0}")));
    }
    if f0 <= 0.5 {
        return Err(Error::NoSignal(f0));
    }
    if f0 == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-t / (2.0 * f0 - 1.0).ln())
}

/// Grid and simplex settings for [`optimal_times`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Scale for the time window; defaults to the model's `T2`.
    #[serde(default)]
    pub t2_guess: Option<f64>,
    #[serde(default = "default_lo")]
    pub lo_factor: f64,
    #[serde(default = "default_hi")]
    pub hi_factor: f64,
    /// Log-spaced grid points per time coordinate.
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// Best grid cells refined by the simplex.
    #[serde(default = "default_refine")]
    pub refine: usize,
    #[serde(default = "default_simplex_tol")]
    pub simplex_tol: f64,
    #[serde(default = "default_simplex_iter")]
    pub max_iter: usize,
}

fn default_lo() -> f64 {
    1e-3
}
fn default_hi() -> f64 {
    5.0
}
fn default_grid() -> usize {
    48
}
fn default_refine() -> usize {
    4
}
fn default_simplex_tol() -> f64 {
    1e-12
}
fn default_simplex_iter() -> usize {
    4000
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            t2_guess: None,
            lo_factor: default_lo(),
            hi_factor: default_hi(),
            grid_points: default_grid(),
            refine: default_refine(),
            simplex_tol: default_simplex_tol(),
            max_iter: default_simplex_iter(),
        }
    }
}

/// Combinations examined on the coarse grid are capped at this many.
const MAX_GRID_COMBINATIONS: f64 = 2.0e5;

/// `ln det` of the per-shot Fisher sum for an equal split over `times`, or
/// `-∞` if singular. Symmetric in the order of `times`.
pub fn log_det_information(model: &NoiseModel, times: &[f64]) -> f64 {
    let n = model.family().dim();
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut f = DMatrix::zeros(n, n);
    for &t in &sorted {
        let (p, d) = prob0_and_grad(model, t);
        let pq = p * (1.0 - p);
        if pq < PROB_EPS {
            continue;
        }
        for j in 0..n {
            for k in 0..n {
                f[(j, k)] += d[j] * d[k] / pq;
            }
        }
    }
    scaled_log_det(&f)
}

fn scaled_log_det(f: &DMatrix<f64>) -> f64 {
    let n = f.nrows();
    let s: Vec<f64> = (0..n).map(|i| f[(i, i)]).collect();
    if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return f64::NEG_INFINITY;
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| f[(i, j)] / (s[i] * s[j]).sqrt());
    match scaled.cholesky() {
        Some(ch) => {
            let l = ch.l();
            let ld: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
            let v = ld + s.iter().map(|v| v.ln()).sum::<f64>();
            if ld < (SINGULAR_RCOND).ln() * n as f64 {
                f64::NEG_INFINITY
            } else {
                v
            }
        }
        None => f64::NEG_INFINITY,
    }
}

/// `k` increasing times minimizing `det Σ` for an equal shot split.
pub fn optimal_times(model: &NoiseModel, k: usize, search: &SearchConfig) -> Result<Vec<f64>> {
    let n = model.family().dim();
    if k < n {
        return Err(Error::InvalidParameter(format!(
            "{k} time(s) cannot determine {n} parameters of {}",
            model.family()
        )));
    }
    let t2 = search.t2_guess.unwrap_or_else(|| model.t2());
    if !(t2.is_finite() && t2 > 0.0) {
        return Err(Error::InvalidParameter(format!("T2 scale must be > 0, got {t2}")));
    }
    if !(search.lo_factor > 0.0 && search.hi_factor > search.lo_factor && search.grid_points >= 2) {
        return Err(Error::InvalidParameter("invalid search window".into()));
    }
    let t_min = search.lo_factor * t2;
    let t_max = search.hi_factor * t2;

    // Coarse grid, shrunk until the number of combinations is manageable.
    let mut g = search.grid_points.max(k);
    while g > k && binomial(g, k) > MAX_GRID_COMBINATIONS {
        g -= 1;
    }
    let (lmin, lmax) = (t_min.ln(), t_max.ln());
    let grid: Vec<f64> = (0..g).map(|i| (lmin + (lmax - lmin) * i as f64 / (g - 1) as f64).exp()).collect();
    let blocks: Vec<DMatrix<f64>> = grid
        .iter()
        .map(|&t| {
            let (p, d) = prob0_and_grad(model, t);
            let pq = p * (1.0 - p);
            if pq < PROB_EPS {
                DMatrix::zeros(n, n)
            } else {
                DMatrix::from_fn(n, n, |a, b| d[a] * d[b] / pq)
            }
        })
        .collect();

    let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
    let keep = search.refine.max(1);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut f = DMatrix::zeros(n, n);
        for &i in &idx {
            f += &blocks[i];
        }
        let v = scaled_log_det(&f);
        if v.is_finite() {
            candidates.push((-v, idx.clone()));
            if candidates.len() > 4 * keep + 64 {
                candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
                candidates.truncate(keep);
            }
        }
        if !next_combination(&mut idx, g) {
            break;
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    candidates.truncate(keep);
    if candidates.is_empty() {
        return Err(Error::Numerical("every design on the search grid is singular".into()));
    }

    // Simplex refinement in log-time.
    let objective = |u: &[f64]| -> f64 {
        let mut ts: Vec<f64> = u.iter().map(|&v| v.clamp(lmin, lmax).exp()).collect();
        ts.sort_by(f64::total_cmp);
        -log_det_information(model, &ts)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (_, cell) in &candidates {
        let u0: Vec<f64> = cell.iter().map(|&i| grid[i].ln()).collect();
        let step = 0.5 * (lmax - lmin) / (g - 1) as f64;
        let (val, u) = nelder_mead(&objective, &u0, step, search.simplex_tol, search.max_iter, lmin, lmax);
        if best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, u));
        }
    }
    let (val, u) = best.expect("non-empty candidates");
    let mut ts: Vec<f64> = u.iter().map(|&v| v.clamp(lmin, lmax).exp()).collect();
    ts.sort_by(f64::total_cmp);
    if !val.is_finite() {
        return Err(Error::Numerical(format!("design search failed; best point {ts:?}")));
    }
    Ok(ts)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Nelder-Mead with coordinates clamped to `[lo, hi]` and sorted after each
/// step.
fn nelder_mead(
    f: &impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_iter: usize,
    lo: f64,
    hi: f64,
) -> (f64, Vec<f64>) {
    let n = x0.len();
    let fix = |mut v: Vec<f64>| {
        for x in &mut v {
            *x = x.clamp(lo, hi);
        }
        v.sort_by(f64::total_cmp);
        v
    };
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    let p0 = fix(x0.to_vec());
    simplex.push((f(&p0), p0.clone()));
    for i in 0..n {
        let mut p = p0.clone();
        p[i] += if p[i] + step <= hi { step } else { -step };
        let p = fix(p);
        simplex.push((f(&p), p));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let spread = simplex[n].0 - simplex[0].0;
        let size = simplex[1..]
            .iter()
            .map(|(_, p)| p.iter().zip(&simplex[0].1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (spread.abs() <= tol * (1.0 + simplex[0].0.abs()) || !spread.is_finite() && size == 0.0) && size <= 1e-9 {
            break;
        }
        if size <= 1e-13 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(_, p)| p[j]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].1.clone();
        let along = |c: f64| fix((0..n).map(|j| centroid[j] + c * (worst[j] - centroid[j])).collect());
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].0 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (fe, xe) } else { (fr, xr) };
        } else if fr < simplex[n - 1].0 {
            simplex[n] = (fr, xr);
        } else {
            let (xc, fc) = if fr < simplex[n].0 {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            if fc < simplex[n].0.min(fr) {
                simplex[n] = (fc, xc);
            } else {
                let best = simplex[0].1.clone();
                for s in simplex.iter_mut().skip(1) {
                    let p = fix(best.iter().zip(&s.1).map(|(b, x)| b + 0.5 * (x - b)).collect());
                    *s = (f(&p), p);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (v, p) = simplex.swap_remove(0);
    (v, p)
}
