//! Attenuation factor from the filter-function representation
//! `Γ(t) = ∫ S(ω) F(ω, t) dω` with `F(ω, t) = sin²(ωt/2) / (π ω²)`.
//!
//! This path integrates the spectrum numerically and exists to cross-check
//! the closed forms in [`crate::noise`].

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::quadrature::{adaptive_simpson, adaptive_simpson_panels, SimpsonConfig};

/// Filter function `F_Γ(ω, t)`; tends to `(t/2) δ(ω)` for long times.
pub fn filter_function(omega: f64, t: f64) -> f64 {
    if omega == 0.0 {
        return t * t / (4.0 * PI);
    }
    let s = (0.5 * omega * t).sin();
    s * s / (PI * omega * omega)
}

// Lobes of the filter function integrated explicitly before switching to the
// asymptotic tail treatment.
const MIN_LOBES: f64 = 2000.0;

/// Numerically integrates the symmetrized PSD against the filter function.
pub fn attenuation_quadrature(model: &NoiseModel, t: f64, tol: f64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::domain("time", t));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    let sbar = |w: f64| model.psd_symmetric(w);

    // Spectral features: Lorentzian width and centre.
    let (width, centre) = match *model {
        NoiseModel::White { .. } => (f64::INFINITY, 0.0),
        NoiseModel::OrnsteinUhlenbeck { tau_c, .. } => (1.0 / tau_c, 0.0),
        NoiseModel::DisplacedLorentzian { kappa, delta_c, .. } => (0.5 * kappa, delta_c),
    };
    let spectral_scale = if width.is_finite() { 200.0 * (width + centre) } else { 0.0 };
    let cutoff = (MIN_LOBES / t).max(spectral_scale);

    // Panels: half a filter lobe wide, refined to resolve the Lorentzian peak.
    let mut panel = PI / t;
    if width.is_finite() {
        panel = panel.min(width);
    }
    let n_panels = (cutoff / panel).ceil() as usize;
    let mut edges: Vec<f64> = (0..=n_panels).map(|i| i as f64 * cutoff / n_panels as f64).collect();
    if centre > 0.0 && centre < cutoff {
        edges.push(centre);
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup();
    }

    let cfg = SimpsonConfig { tol: 0.8 * tol, ..SimpsonConfig::default() };
    let body = |w: f64| 2.0 * sbar(w) * filter_function(w, t);
    let main = adaptive_simpson_panels(&body, &edges, &cfg)?;

    // Tail: (1/π) ∫_W^∞ S̄/ω² (1 - cos ωt) dω.
    // Non-oscillating part via u = 1/ω on [0, 1/W].
    let tail_cfg = SimpsonConfig { tol: 0.1 * tol, ..SimpsonConfig::default() };
    let inv = |u: f64| {
        if u == 0.0 {
            sbar(f64::INFINITY)
        } else {
            sbar(1.0 / u)
        }
    };
    let smooth_tail = adaptive_simpson(&inv, 0.0, 1.0 / cutoff, &tail_cfg)?.value / PI;

    // Oscillating part by integration by parts:
    // ∫_W^∞ h cos(ωt) ≈ -h(W) sin(Wt)/t - h'(W) cos(Wt)/t², h = S̄/ω².
    let h = |w: f64| sbar(w) / (w * w);
    let step = 1e-4 * cutoff;
    let dh = (h(cutoff + step) - h(cutoff - step)) / (2.0 * step);
    let (s, c) = (cutoff * t).sin_cos();
    let oscillating = -h(cutoff) * s / t - dh * c / (t * t);
    let value = main.value + smooth_tail - oscillating / PI;

    if !value.is_finite() {
        return Err(Error::Numerical(format!("filter-function quadrature diverged at t = {t}")));
    }
    Ok(value)
}
