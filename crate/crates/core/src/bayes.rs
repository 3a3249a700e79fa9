//! Sequential Bayesian estimation with a weighted particle ensemble and
//! adaptive measurement times chosen by expected information gain.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequentist::matrix_rows;
use crate::noise::{Family, NoiseModel, ParamVector};
use crate::rng::{rng_from_seed, Rng};
use crate::sim::{phase_flip_prob_unchecked, sample_binomial};

/// Weighted particle approximation of a posterior over one family's
/// parameters, confined to a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    family: Family,
    /// Row-major, `len() × family.dim()`.
    particles: Vec<f64>,
    weights: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    step: usize,
}

impl ParticleEnsemble {
    pub fn new(family: Family, particles: Vec<Vec<f64>>, weights: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let d = family.dim();
        check_box(family, &bounds)?;
        if particles.len() < 2 || particles.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 particles with one weight each, got {} particles and {} weights",
                particles.len(),
                weights.len()
            )));
        }
        let mut flat = Vec::with_capacity(particles.len() * d);
        for p in &particles {
            if p.len() != d {
                return Err(Error::InvalidParameter(format!("particle has {} coordinates, expected {d}", p.len())));
            }
            for (x, &(lo, hi)) in p.iter().zip(&bounds) {
                if !(lo..=hi).contains(x) {
                    return Err(Error::InvalidParameter(format!("particle coordinate {x} outside [{lo}, {hi}]")));
                }
            }
            flat.extend_from_slice(p);
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(ParticleEnsemble { family, particles: flat, weights, bounds, step: 0 })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.particles[i * d..(i + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Number of Bayesian updates applied so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub(crate) fn model(&self, i: usize) -> NoiseModel {
        NoiseModel::from_slice_unchecked(self.family, self.particle(i))
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (i, &w) in self.weights.iter().enumerate() {
            for (a, x) in m.iter_mut().zip(self.particle(i)) {
                *a += w * x;
            }
        }
        m
    }

    /// Weighted covariance `Σ w (x - μ)(x - μ)ᵀ`.
    pub fn cov(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mu = self.mean();
        let mut c = DMatrix::zeros(d, d);
        for (i, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let x = self.particle(i);
            for a in 0..d {
                let da = x[a] - mu[a];
                for b in 0..=a {
                    c[(a, b)] += w * da * (x[b] - mu[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                c[(b, a)] = c[(a, b)];
            }
        }
        c
    }

    /// Pure Bayes rule for `n` shots at time `t` with `k0` zeros; no resampling.
    pub fn update(&mut self, t: f64, n: u64, k0: u64) -> Result<()> {
        if k0 > n {
            return Err(Error::InvalidParameter(format!("k0 = {k0} exceeds n = {n}")));
        }
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::domain("time", t));
        }
        let p1: Vec<f64> = (0..self.len()).map(|i| phase_flip_prob_unchecked(&self.model(i), t)).collect();
        self.update_with_probs(&p1, n, k0)
    }

    /// Bayes rule given each particle's outcome-1 probability. Evaluated
    /// directly when the evidence is representable, in log space otherwise.
    fn update_with_probs(&mut self, p1: &[f64], n: u64, k0: u64) -> Result<()> {
        self.step += 1;
        if n == 0 {
            return Ok(());
        }
        if let (Ok(a), Ok(b)) = (i32::try_from(k0), i32::try_from(n - k0)) {
            let lik: Vec<f64> = self
                .weights
                .iter()
                .zip(p1)
                .map(|(&w, &q)| if w > 0.0 { w * (1.0 - q).powi(a) * q.powi(b) } else { 0.0 })
                .collect();
            let total: f64 = lik.iter().sum();
            if total.is_finite() && total > DIRECT_EVIDENCE_FLOOR {
                for (w, l) in self.weights.iter_mut().zip(lik) {
                    *w = l / total;
                }
                return Ok(());
            }
        }
        let (a, b) = (k0 as f64, (n - k0) as f64);
        let ll = |&q: &f64| -> f64 {
            // 0 · ln 0 = 0
            (if a > 0.0 { a * (-q).ln_1p() } else { 0.0 }) + (if b > 0.0 { b * q.ln() } else { 0.0 })
        };
        let mut max = f64::NEG_INFINITY;
        for (w, q) in self.weights.iter().zip(p1) {
            if *w > 0.0 {
                max = max.max(w.ln() + ll(q));
            }
        }
        if !max.is_finite() {
            return Err(Error::DegenerateUpdate { step: self.step });
        }
        let mut total = 0.0;
        for (w, q) in self.weights.iter_mut().zip(p1) {
            *w = if *w > 0.0 { (w.ln() + ll(q) - max).exp() } else { 0.0 };
            total += *w;
        }
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::DegenerateUpdate { step: self.step });
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }
}

/// Smallest evidence for which the update stays in linear space.
const DIRECT_EVIDENCE_FLOOR: f64 = 1e-250;

fn check_box(family: Family, bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.len() != family.dim() {
        return Err(Error::InvalidParameter(format!(
            "{family} needs {} prior bounds, got {}",
            family.dim(),
            bounds.len()
        )));
    }
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!("prior bound ({lo}, {hi}) must satisfy low < high")));
        }
    }
    let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    NoiseModel::from_slice(family, &lower)
        .map(|_| ())
        .map_err(|e| Error::InvalidParameter(format!("prior box leaves the model domain: {e}")))
}

/// Log-spaced candidate times relative to the posterior `T2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateGrid {
    pub lo_factor: f64,
    pub hi_factor: f64,
    pub points: usize,
    /// Rebuild the grid when the posterior-mean `T2` moves by more than this
    /// fraction of the value the grid was built for.
    pub refresh_drift: f64,
}

impl Default for CandidateGrid {
    fn default() -> Self {
        CandidateGrid { lo_factor: 1e-2, hi_factor: 5.0, points: 200, refresh_drift: 0.2 }
    }
}

impl CandidateGrid {
    pub fn times(&self, t2: f64) -> Vec<f64> {
        let (a, b) = ((self.lo_factor * t2).ln(), (self.hi_factor * t2).ln());
        if self.points == 1 {
            return vec![a.exp()];
        }
        (0..self.points).map(|i| (a + (b - a) * i as f64 / (self.points - 1) as f64).exp()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub family: Family,
    /// Uniform prior box, `(low, high)` per parameter.
    pub prior: Vec<(f64, f64)>,
    #[serde(default = "default_particles")]
    pub particles: usize,
    pub shots_per_step: u64,
    pub steps: usize,
    /// Stop once this many shots are taken, truncating the last batch.
    #[serde(default)]
    pub total_shots: Option<u64>,
    #[serde(default)]
    pub candidates: CandidateGrid,
    /// Resample when `ESS < resample_threshold · K`.
    #[serde(default = "default_threshold")]
    pub resample_threshold: f64,
    /// Liu-West shrinkage.
    #[serde(default = "default_liu_west")]
    pub liu_west_a: f64,
    /// Particles used to evaluate the expected gain; larger ensembles are
    /// thinned deterministically. `0` uses the whole ensemble.
    #[serde(default = "default_gain_particles")]
    pub gain_particles: usize,
    /// Keep the last selected time until the shots taken since the selection
    /// reach this fraction of all shots so far. `0` reselects every step.
    #[serde(default)]
    pub reselect_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_particles() -> usize {
    4000
}
fn default_threshold() -> f64 {
    0.5
}
fn default_liu_west() -> f64 {
    0.98
}
fn default_gain_particles() -> usize {
    512
}

impl ProtocolConfig {
    /// Defaults around a uniform prior box.
    pub fn new(family: Family, prior: Vec<(f64, f64)>, shots_per_step: u64, steps: usize) -> Self {
        ProtocolConfig {
            family,
            prior,
            particles: if family.dim() >= 3 { 8000 } else { 4000 },
            shots_per_step,
            steps,
            total_shots: None,
            candidates: CandidateGrid::default(),
            resample_threshold: default_threshold(),
            liu_west_a: default_liu_west(),
            gain_particles: default_gain_particles(),
            reselect_fraction: 0.0,
            seed: 0,
        }
    }

    /// Prior box `[θ/factor, θ·factor]` around a reference model.
    pub fn around(model: &NoiseModel, factor: f64, shots_per_step: u64, steps: usize) -> Self {
        let prior = model.params().values().iter().map(|&v| (v / factor, v * factor)).collect();
        ProtocolConfig::new(model.family(), prior, shots_per_step, steps)
    }

    pub fn validate(&self) -> Result<()> {
        check_box(self.family, &self.prior)?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.particles < 100 {
            return bad(format!("particle count must be >= 100, got {}", self.particles));
        }
        if self.shots_per_step == 0 {
            return bad("shots per step must be >= 1".into());
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if let Some(total) = self.total_shots {
            if total == 0 || total > self.shots_per_step.saturating_mul(self.steps as u64) {
                return bad(format!(
                    "total_shots = {total} must lie in [1, steps · shots_per_step]"
                ));
            }
        }
        let c = &self.candidates;
        if !(c.points >= 1 && c.lo_factor > 0.0 && c.hi_factor >= c.lo_factor && c.hi_factor.is_finite()) {
            return bad("candidate grid must be nonempty with 0 < lo_factor <= hi_factor".into());
        }
        if !(c.refresh_drift >= 0.0) {
            return bad("refresh_drift must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return bad("resample_threshold must lie in [0, 1]".into());
        }
        if !(self.liu_west_a > 0.0 && self.liu_west_a <= 1.0) {
            return bad("liu_west_a must lie in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.reselect_fraction) {
            return bad("reselect_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Particles drawn i.i.d. uniform in the prior box with equal weights.
pub fn init_prior(config: &ProtocolConfig) -> Result<ParticleEnsemble> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    Ok(uniform_ensemble(config.family, &config.prior, config.particles, &mut rng))
}

fn uniform_ensemble(family: Family, prior: &[(f64, f64)], k: usize, rng: &mut Rng) -> ParticleEnsemble {
    let d = family.dim();
    let mut particles = Vec::with_capacity(k * d);
    for _ in 0..k {
        for &(lo, hi) in prior {
            particles.push(rng.random_range(lo..hi));
        }
    }
    ParticleEnsemble {
        family,
        particles,
        weights: vec![1.0 / k as f64; k],
        bounds: prior.to_vec(),
        step: 0,
    }
}

/// Liu-West kernel resampling: systematic resampling followed by shrinkage
/// towards the mean and a Gaussian jitter with covariance `(1 - a²) Σ`.
pub fn resample_liu_west(ens: &mut ParticleEnsemble, a: f64, rng: &mut Rng) {
    let k = ens.len();
    let d = ens.dim();
    let mu = ens.mean();
    let cov = ens.cov();
    let h2 = 1.0 - a * a;
    let chol = kernel_factor(&cov, h2);

    let u0: f64 = rng.random::<f64>();
    let picks = systematic_counts(&ens.weights, k, u0);
    let mut out = Vec::with_capacity(k * d);
    let mut z = DVector::zeros(d);
    for (i, &c) in picks.iter().enumerate() {
        let x = ens.particle(i).to_vec();
        for _ in 0..c {
            for v in z.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
            let jitter = &chol * &z;
            for j in 0..d {
                let (lo, hi) = ens.bounds[j];
                let v = a * x[j] + (1.0 - a) * mu[j] + jitter[j];
                out.push(v.clamp(lo, hi));
            }
        }
    }
    ens.particles = out;
    ens.weights = vec![1.0 / k as f64; k];
}

/// Cholesky factor of `h2 · cov`, regularized when the covariance is not
/// positive definite.
fn kernel_factor(cov: &DMatrix<f64>, h2: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    let scaled = cov * h2;
    if let Some(ch) = scaled.clone().cholesky() {
        return ch.l();
    }
    // Fall back to independent jitter on the marginal variances.
    let scale = (0..d).map(|i| scaled[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    DMatrix::from_fn(d, d, |i, j| if i == j { scaled[(i, i)].max(1e-12 * scale).sqrt() } else { 0.0 })
}

/// Copies of each index under systematic resampling of `m` draws with offset
/// `u0 ∈ [0, 1)`.
fn systematic_counts(weights: &[f64], m: usize, u0: f64) -> Vec<usize> {
    let mut counts = vec![0usize; weights.len()];
    let mut cum = 0.0;
    let mut j = 0usize;
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    for (i, &w) in weights.iter().enumerate() {
        cum += w;
        let edge = if i == last { f64::INFINITY } else { cum * m as f64 };
        while j < m && (j as f64 + u0) < edge {
            counts[i] += 1;
            j += 1;
        }
        if j == m {
            break;
        }
    }
    counts
}

/// Update followed by Liu-West resampling when `ESS < threshold · K`.
/// Returns whether a resample happened.
pub fn bayes_update(
    ens: &mut ParticleEnsemble,
    t: f64,
    n: u64,
    k0: u64,
    resample_threshold: f64,
    liu_west_a: f64,
    rng: &mut Rng,
) -> Result<bool> {
    ens.update(t, n, k0)?;
    Ok(maybe_resample(ens, resample_threshold, liu_west_a, rng))
}

fn maybe_resample(ens: &mut ParticleEnsemble, threshold: f64, a: f64, rng: &mut Rng) -> bool {
    if ens.ess() < threshold * ens.len() as f64 {
        resample_liu_west(ens, a, rng);
        true
    } else {
        false
    }
}

/// Posterior mean and covariance with a reliability flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: ParamVector,
    /// Row-major.
    pub cov: Vec<Vec<f64>>,
    pub ess: f64,
    /// Set when `ESS < 2`.
    pub warning: Option<String>,
}

pub fn posterior_mean(ens: &ParticleEnsemble) -> ParamVector {
    ParamVector::new(ens.family, ens.mean()).expect("dimension matches family")
}

pub fn posterior_cov(ens: &ParticleEnsemble) -> DMatrix<f64> {
    ens.cov()
}

pub fn posterior_summary(ens: &ParticleEnsemble) -> PosteriorSummary {
    let ess = ens.ess();
    PosteriorSummary {
        mean: posterior_mean(ens),
        cov: matrix_rows(&ens.cov()),
        ess,
        warning: (ess < 2.0).then(|| format!("effective sample size {ess:.3} < 2; posterior statistics unreliable")),
    }
}

/// Tables for binomial pmfs with a fixed number of trials.
struct BinomialTables {
    n: u64,
    ln_choose: Vec<f64>,
    /// `(n - k) / (k + 1)` and its reciprocal.
    up: Vec<f64>,
    down: Vec<f64>,
}

/// Relative size below which binomial terms are dropped.
const PMF_CUTOFF: f64 = 1e-18;

impl BinomialTables {
    fn new(n: u64) -> Self {
        let len = n as usize + 1;
        let mut ln_choose = vec![0.0; len];
        let mut up = vec![0.0; len];
        let mut down = vec![0.0; len];
        for k in 0..len {
            if k < n as usize {
                up[k] = (n - k as u64) as f64 / (k + 1) as f64;
                down[k] = (k + 1) as f64 / (n - k as u64) as f64;
            }
            if k > 0 {
                ln_choose[k] = ln_choose[k - 1] + up[k - 1].ln();
            }
        }
        BinomialTables { n, ln_choose, up, down }
    }

    /// Calls `f(k, pmf, ln pmf)` for every non-negligible outcome.
    #[inline]
    fn for_each(&self, p1: f64, mut f: impl FnMut(usize, f64, f64)) {
        // k counts outcome-0 results, success probability p0 = 1 - p1.
        let n = self.n as usize;
        if p1 <= 0.0 {
            f(n, 1.0, 0.0);
            return;
        }
        let p0 = 1.0 - p1;
        let (lp, lq) = ((-p1).ln_1p(), p1.ln());
        let odds = p0 / p1;
        let inv_odds = p1 / p0;
        let ln_odds = lp - lq;
        let base = n as f64 * lq;
        let ln_pmf = |k: usize| self.ln_choose[k] + k as f64 * ln_odds + base;
        let mode = (((n + 1) as f64 * p0).floor() as usize).min(n);
        let ln_m = ln_pmf(mode);
        let b_m = ln_m.exp();
        f(mode, b_m, ln_m);
        let floor = PMF_CUTOFF * b_m;
        let mut b = b_m;
        for k in mode..n {
            b *= self.up[k] * odds;
            if b < floor {
                break;
            }
            f(k + 1, b, ln_pmf(k + 1));
        }
        let mut b = b_m;
        for k in (1..=mode).rev() {
            b *= self.down[k - 1] * inv_odds;
            if b < floor {
                break;
            }
            f(k - 1, b, ln_pmf(k - 1));
        }
    }
}

/// Mutual information between parameter and outcome count for particles
/// given as `(weight, phase-flip probability)`.
fn mutual_information(particles: impl Iterator<Item = (f64, f64)>, tables: &BinomialTables, marginal: &mut Vec<f64>) -> f64 {
    marginal.clear();
    marginal.resize(tables.n as usize + 1, 0.0);
    let mut neg_cond_entropy = 0.0;
    for (w, p1) in particles {
        if w == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        tables.for_each(p1, |k, b, lb| {
            marginal[k] += w * b;
            acc += b * lb;
        });
        neg_cond_entropy += w * acc;
    }
    let entropy: f64 = marginal.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (entropy + neg_cond_entropy).max(0.0)
}

/// Expected KL divergence from prior to posterior for an `n`-shot batch at
/// time `t`, summed exactly over the `n + 1` outcomes. Zero for `t <= 0` or
/// `n = 0`.
pub fn expected_kl_gain(ens: &ParticleEnsemble, t: f64, n: u64) -> f64 {
    if !(t > 0.0) || n == 0 {
        return 0.0;
    }
    let tables = BinomialTables::new(n);
    let mut marginal = Vec::new();
    mutual_information(
        (0..ens.len()).map(|i| (ens.weights[i], phase_flip_prob_unchecked(&ens.model(i), t))),
        &tables,
        &mut marginal,
    )
}

/// Gains closer than this to the maximum count as ties.
const GAIN_TIE_TOL: f64 = 1e-12;

/// Candidate with the largest expected gain; the earliest wins ties.
pub fn select_time(ens: &ParticleEnsemble, candidates: &[f64], n: u64) -> Result<f64> {
    select_time_thinned(ens, candidates, n, 0).map(|(t, _)| t)
}

/// As [`select_time`], evaluating the gain on at most `max_particles`
/// systematically thinned particles (`0` = all). Also returns the gain.
pub fn select_time_thinned(ens: &ParticleEnsemble, candidates: &[f64], n: u64, max_particles: usize) -> Result<(f64, f64)> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("candidate grid is empty".into()));
    }
    let thin: Vec<(usize, f64)> = if max_particles == 0 || ens.len() <= max_particles {
        ens.weights.iter().copied().enumerate().filter(|(_, w)| *w > 0.0).collect()
    } else {
        systematic_counts(&ens.weights, max_particles, 0.5)
            .into_iter()
            .enumerate()
            .filter(|(_, c)| *c > 0)
            .map(|(i, c)| (i, c as f64 / max_particles as f64))
            .collect()
    };
    let models: Vec<(f64, NoiseModel)> = thin.iter().map(|&(i, w)| (w, ens.model(i))).collect();
    let tables = BinomialTables::new(n.max(1));
    let mut marginal = Vec::new();
    let gains: Vec<f64> = candidates
        .iter()
        .map(|&t| {
            if !(t > 0.0) || n == 0 {
                return 0.0;
            }
            mutual_information(
                models.iter().map(|(w, m)| (*w, phase_flip_prob_unchecked(m, t))),
                &tables,
                &mut marginal,
            )
        })
        .collect();
    let max = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let i = gains.iter().position(|&g| g >= max - GAIN_TIE_TOL).unwrap_or(0);
    Ok((candidates[i], gains[i]))
}

/// One step of a protocol trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub shots: u64,
    pub count0: u64,
    pub mean: Vec<f64>,
    /// Row-major posterior covariance.
    pub cov: Vec<f64>,
    pub ess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub family: Family,
    pub truth: NoiseModel,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub resamples: usize,
    /// Number of times the measurement time was (re)selected.
    pub selections: usize,
}

impl ProtocolTrace {
    pub fn total_shots(&self) -> u64 {
        self.steps.iter().map(|s| s.shots).sum()
    }

    pub fn final_cov(&self) -> Option<DMatrix<f64>> {
        let s = self.steps.last()?;
        let d = self.family.dim();
        Some(DMatrix::from_row_slice(d, d, &s.cov))
    }

    pub fn csv_header(&self) -> Vec<String> {
        let names = self.family.param_names();
        let mut h: Vec<String> = ["step", "t", "shots", "count0"].iter().map(|s| s.to_string()).collect();
        h.extend(names.iter().map(|n| format!("mean_{n}")));
        for a in names {
            for b in names {
                h.push(format!("cov_{a}_{b}"));
            }
        }
        h.push("ess".into());
        h
    }

    /// One row per step: `step,t,shots,count0,mean_*,cov_*,ess`.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(self.csv_header()).map_err(err)?;
        for s in &self.steps {
            let mut row = vec![s.step.to_string(), s.t.to_string(), s.shots.to_string(), s.count0.to_string()];
            row.extend(s.mean.iter().map(f64::to_string));
            row.extend(s.cov.iter().map(f64::to_string));
            row.push(s.ess.to_string());
            w.write_record(&row).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// A protocol that stopped early, with everything recorded up to the failure.
#[derive(Debug)]
pub struct ProtocolError {
    pub error: Error,
    pub trace: ProtocolTrace,
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} completed steps)", self.error, self.trace.steps.len())
    }
}

impl std::error::Error for ProtocolError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<ProtocolError> for Error {
    fn from(e: ProtocolError) -> Self {
        e.error
    }
}

/// Sequential loop: select a time, sample counts from `truth`, update.
pub fn run_protocol(truth: &NoiseModel, config: &ProtocolConfig) -> std::result::Result<ProtocolTrace, Box<ProtocolError>> {
    let empty = ProtocolTrace {
        family: config.family,
        truth: *truth,
        seed: config.seed,
        steps: Vec::new(),
        resamples: 0,
        selections: 0,
    };
    let fail = |error: Error, trace: ProtocolTrace| Box::new(ProtocolError { error, trace });
    if let Err(e) = config.validate() {
        return Err(fail(e, empty));
    }
    if truth.family() != config.family {
        return Err(fail(
            Error::InvalidParameter(format!("truth is {} but the prior is over {}", truth.family(), config.family)),
            empty,
        ));
    }
    let mut ens = match init_prior(config) {
        Ok(e) => e,
        Err(e) => return Err(fail(e, empty)),
    };
    let mut rng = rng_from_seed(config.seed);
    rng.set_stream(1);

    let mut trace = empty;
    let mut grid_t2 = NoiseModel::from_slice_unchecked(config.family, &ens.mean()).t2();
    let mut grid = config.candidates.times(grid_t2);
    let mut current_t = f64::NAN;
    let mut shots_at_selection = 0u64;
    let mut taken = 0u64;
    // Log-probabilities of the current particles at `current_t`.
    let mut cache: Option<Vec<f64>> = None;
    let budget = config.total_shots.unwrap_or(config.shots_per_step * config.steps as u64);

    for step in 1..=config.steps {
        if taken >= budget {
            break;
        }
        let shots = config.shots_per_step.min(budget - taken);
        let since = taken - shots_at_selection;
        let reselect = current_t.is_nan()
            || since as f64 >= (config.reselect_fraction * taken as f64).max(config.shots_per_step as f64);
        if reselect {
            let t2 = NoiseModel::from_slice_unchecked(config.family, &ens.mean()).t2();
            if (t2 / grid_t2 - 1.0).abs() > config.candidates.refresh_drift {
                grid_t2 = t2;
                grid = config.candidates.times(grid_t2);
            }
            let t = match select_time_thinned(&ens, &grid, shots, config.gain_particles) {
                Ok((t, _)) => t,
                Err(e) => return Err(fail(e, trace)),
            };
            if t != current_t {
                cache = None;
            }
            current_t = t;
            shots_at_selection = taken;
            trace.selections += 1;
        }
        let t = current_t;
        let p0 = 1.0 - phase_flip_prob_unchecked(truth, t);
        let k0 = sample_binomial(shots, p0, &mut rng);

        let p1 = cache.get_or_insert_with(|| (0..ens.len()).map(|i| phase_flip_prob_unchecked(&ens.model(i), t)).collect());
        if let Err(e) = ens.update_with_probs(p1, shots, k0) {
            return Err(fail(e, trace));
        }
        if maybe_resample(&mut ens, config.resample_threshold, config.liu_west_a, &mut rng) {
            trace.resamples += 1;
            cache = None;
        }
        taken += shots;
        trace.steps.push(StepRecord {
            step,
            t,
            shots,
            count0: k0,
            mean: ens.mean(),
            cov: ens.cov().transpose().as_slice().to_vec(),
            ess: ens.ess(),
        });
    }
    Ok(trace)
}

/// Expected posterior variance of the rate after one more single-shot
/// measurement under a Gaussian prior `N(γ̂, σ²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceUpdate {
    pub expected_variance: f64,
    /// `E[σ̃²] - σ²`, never positive.
    pub change: f64,
    /// The exponent overflowed; no gain is reported.
    pub overflow: bool,
}

/// `E[σ̃²] - σ² = -4 t² σ⁴ / (e^{4γ̂t - 4σ²t²} - 1)`.
pub fn lindblad_variance_update(gamma_hat: f64, sigma2: f64, t: f64) -> Result<VarianceUpdate> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("variance must be > 0, got {sigma2}")));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::domain("time", t));
    }
    if !gamma_hat.is_finite() {
        return Err(Error::InvalidParameter(format!("rate must be finite, got {gamma_hat}")));
    }
    let x = 4.0 * gamma_hat * t - 4.0 * sigma2 * t * t;
    let denom = x.exp_m1();
    if !denom.is_finite() {
        return Ok(VarianceUpdate { expected_variance: sigma2, change: -0.0, overflow: true });
    }
    let change = -4.0 * t * t * sigma2 * sigma2 / denom;
    Ok(VarianceUpdate { expected_variance: sigma2 + change, change, overflow: false })
}
