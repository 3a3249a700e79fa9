//! Non-Markovianity measures built on intervals where the dephasing rate is
//! negative.
//!
//! Both measures integrate exactly once the negative-rate intervals are known,
//! since `∫ γ = ΔΓ / 2` and `ṗ = γ e^{-Γ}` integrates to a difference of
//! phase-flip probabilities.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::noise::NoiseModel;

/// Samples per oscillation period when scanning for sign changes of `γ`.
pub const SAMPLES_PER_PERIOD: usize = 64;
/// Root tolerance for the sign-change bisection.
pub const ROOT_TOL: f64 = 1e-12;
/// The automatic horizon ends where the oscillating envelope `e^{-κt/2}` drops
/// below this value.
pub const ENVELOPE_CUTOFF: f64 = 1e-10;

const MAX_GRID_POINTS: usize = 50_000_000;

/// Integration horizon for the measures.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Horizon {
    /// Integrate until the oscillating part of `γ` is negligible.
    #[default]
    Auto,
    Until(f64),
}

impl From<Option<f64>> for Horizon {
    fn from(t: Option<f64>) -> Self {
        t.map_or(Horizon::Auto, Horizon::Until)
    }
}

fn horizon_end(model: &NoiseModel, horizon: Horizon) -> Result<f64> {
    match horizon {
        Horizon::Until(t) if t.is_finite() && t > 0.0 => Ok(t),
        Horizon::Until(t) => Err(Error::domain("horizon", t)),
        Horizon::Auto => Ok(match *model {
            NoiseModel::DisplacedLorentzian { kappa, delta_c, .. } => {
                let envelope = 2.0 * (1.0 / ENVELOPE_CUTOFF).ln() / kappa;
                // γ < 0 needs e^{-κt/2} sqrt(1 + x²) > 1, x = 2Δ/κ
                let x = 2.0 * delta_c / kappa;
                let exact = (1.0 + x * x).ln() / kappa;
                envelope.max(exact)
            }
            _ => 0.0,
        }),
    }
}

/// Maximal intervals of `[0, horizon]` on which `γ(t) < 0`.
pub fn negative_rate_intervals(model: &NoiseModel, horizon: Horizon) -> Result<Vec<(f64, f64)>> {
    let end = horizon_end(model, horizon)?;
    let NoiseModel::DisplacedLorentzian { delta_c, .. } = *model else {
        // White and OU rates are nonnegative for all times.
        return Ok(Vec::new());
    };
    if delta_c == 0.0 || end == 0.0 {
        return Ok(Vec::new());
    }
    let period = 2.0 * PI / delta_c;
    let dt = period / SAMPLES_PER_PERIOD as f64;
    let n = (end / dt).ceil() as usize;
    if n > MAX_GRID_POINTS {
        return Err(Error::Numerical(format!(
            "sign-change scan needs {n} grid points (limit {MAX_GRID_POINTS})"
        )));
    }
    let n = n.max(1);
    let step = end / n as f64;
    let g = |t: f64| model.gamma_unchecked(t);

    let mut intervals = Vec::new();
    let mut open: Option<f64> = None;
    let mut prev_t = 0.0;
    let mut prev_g = g(0.0);
    if prev_g < 0.0 {
        open = Some(0.0);
    }
    for i in 1..=n {
        let t = if i == n { end } else { i as f64 * step };
        let gt = g(t);
        match (prev_g < 0.0, gt < 0.0) {
            (false, true) => open = Some(bisect_root(&g, prev_t, t)),
            (true, false) => {
                let root = bisect_root(&g, prev_t, t);
                intervals.push((open.take().unwrap_or(prev_t), root));
            }
            _ => {}
        }
        prev_t = t;
        prev_g = gt;
    }
    if let Some(a) = open {
        intervals.push((a, end));
    }
    Ok(intervals)
}

/// Bisection for a sign change of `f` in `[a, b]`.
fn bisect_root(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let neg_a = f(a) < 0.0;
    while b - a > ROOT_TOL {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if (f(m) < 0.0) == neg_a {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// `𝒩_CP = ∫ (|γ| - γ) dt`.
pub fn n_cp(model: &NoiseModel, horizon: Horizon) -> Result<f64> {
    let intervals = negative_rate_intervals(model, horizon)?;
    Ok(intervals
        .iter()
        .map(|&(a, b)| model.attenuation_unchecked(a) - model.attenuation_unchecked(b))
        .sum::<f64>()
        .max(0.0))
}

/// `𝒩_TD = -∫_{γ<0} ṗ dt` with `p(t) = (1 - e^{-Γ}) / 2`.
pub fn n_td(model: &NoiseModel, horizon: Horizon) -> Result<f64> {
    let intervals = negative_rate_intervals(model, horizon)?;
    Ok(intervals
        .iter()
        .map(|&(a, b)| {
            0.5 * ((-model.attenuation_unchecked(b)).exp() - (-model.attenuation_unchecked(a)).exp())
        })
        .sum::<f64>()
        .max(0.0))
}

/// Minimum of `γ(t)` over `t > 0`, with its location.
///
/// For the displaced Lorentzian `γ' ∝ e^{-κt/2} cos(Δt)`, so the local minima
/// sit at `Δt = 3π/2 + 2πm` and the first one is the global minimum. For the
/// other families `γ` is nondecreasing and the infimum is `γ(0⁺)`.
pub fn min_rate(model: &NoiseModel) -> (f64, f64) {
    match *model {
        NoiseModel::DisplacedLorentzian { delta_c, .. } if delta_c > 0.0 => {
            let t = 1.5 * PI / delta_c;
            (t, model.gamma_unchecked(t).min(0.0_f64.max(model.gamma_unchecked(0.0))))
        }
        _ => (0.0, model.gamma_unchecked(0.0)),
    }
}

/// Smallest detuning `Δ_c` for which `γ` becomes negative at some time, found
/// by bisection on `Δ_c` to within `tol`.
pub fn markovian_boundary(kappa: f64, tol: f64) -> Result<f64> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be > 0, got {kappa}")));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    // The sign pattern of γ is independent of g2n.
    let negative = |delta: f64| -> Result<bool> {
        let m = NoiseModel::displaced_lorentzian(1.0, kappa, delta)?;
        Ok(min_rate(&m).1 < 0.0)
    };
    let mut lo = 0.0;
    let mut hi = kappa;
    let mut doublings = 0;
    while !negative(hi)? {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::Numerical("could not bracket the Markovian boundary".into()));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if negative(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
