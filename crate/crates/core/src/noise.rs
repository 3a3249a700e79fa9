//! Dephasing noise families and their closed-form dynamics.
//!
//! Every family is described by a power spectral density `S(ω)`. The qubit
//! coherence decays as `exp(-Γ(t))`, where the attenuation factor `Γ` is twice
//! the time integral of the (possibly negative) dephasing rate `γ(t)`.
//!
//! Parameter order, used by [`ParamVector`] and by every gradient:
//!
//! | family                | parameters               |
//! |-----------------------|--------------------------|
//! | `White`               | `t2`                     |
//! | `OrnsteinUhlenbeck`   | `t2`, `tau_c`            |
//! | `DisplacedLorentzian` | `g2n`, `kappa`, `delta_c`|

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_time, Error, Result};

/// Model family tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    White,
    OrnsteinUhlenbeck,
    DisplacedLorentzian,
}

impl Family {
    pub const ALL: [Family; 3] = [
        Family::White,
        Family::OrnsteinUhlenbeck,
        Family::DisplacedLorentzian,
    ];

    /// Number of learnable parameters.
    pub fn dim(self) -> usize {
        self.param_names().len()
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::White => &["t2"],
            Family::OrnsteinUhlenbeck => &["t2", "tau_c"],
            Family::DisplacedLorentzian => &["g2n", "kappa", "delta_c"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::White => "White",
            Family::OrnsteinUhlenbeck => "OrnsteinUhlenbeck",
            Family::DisplacedLorentzian => "DisplacedLorentzian",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "White" | "white" => Ok(Family::White),
            "OrnsteinUhlenbeck" | "ou" | "OU" => Ok(Family::OrnsteinUhlenbeck),
            "DisplacedLorentzian" | "dl" | "DL" => Ok(Family::DisplacedLorentzian),
            other => Err(Error::Parse(format!("unknown model family `{other}`"))),
        }
    }
}

/// Ordered parameter values of one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    family: Family,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(family: Family, values: Vec<f64>) -> Result<Self> {
        if values.len() != family.dim() {
            return Err(Error::InvalidParameter(format!(
                "{family} expects {} parameters, got {}",
                family.dim(),
                values.len()
            )));
        }
        Ok(ParamVector { family, values })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// A dephasing noise model together with its parameters.
///
/// Serialized as a JSON object tagged by `"kind"`, e.g.
/// `{"kind":"OrnsteinUhlenbeck","t2":1.0,"tau_c":0.5}`. Parsing validates the
/// parameter domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub enum NoiseModel {
    /// Flat spectrum, constant rate `1/(2 T2)`.
    White { t2: f64 },
    /// Lorentzian spectrum of a classical Ornstein-Uhlenbeck process.
    OrnsteinUhlenbeck { t2: f64, tau_c: f64 },
    /// Lorentzian centred at `-delta_c`, from a driven dissipative bosonic mode.
    DisplacedLorentzian { g2n: f64, kappa: f64, delta_c: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
enum ModelRepr {
    White { t2: f64 },
    OrnsteinUhlenbeck { t2: f64, tau_c: f64 },
    DisplacedLorentzian { g2n: f64, kappa: f64, delta_c: f64 },
}

impl TryFrom<ModelRepr> for NoiseModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let m = match r {
            ModelRepr::White { t2 } => NoiseModel::White { t2 },
            ModelRepr::OrnsteinUhlenbeck { t2, tau_c } => NoiseModel::OrnsteinUhlenbeck { t2, tau_c },
            ModelRepr::DisplacedLorentzian { g2n, kappa, delta_c } => {
                NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c }
            }
        };
        m.validate()?;
        Ok(m)
    }
}

impl From<NoiseModel> for ModelRepr {
    fn from(m: NoiseModel) -> Self {
        match m {
            NoiseModel::White { t2 } => ModelRepr::White { t2 },
            NoiseModel::OrnsteinUhlenbeck { t2, tau_c } => ModelRepr::OrnsteinUhlenbeck { t2, tau_c },
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                ModelRepr::DisplacedLorentzian { g2n, kappa, delta_c }
            }
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl NoiseModel {
    pub fn white(t2: f64) -> Result<Self> {
        let m = NoiseModel::White { t2 };
        m.validate()?;
        Ok(m)
    }

    pub fn ornstein_uhlenbeck(t2: f64, tau_c: f64) -> Result<Self> {
        let m = NoiseModel::OrnsteinUhlenbeck { t2, tau_c };
        m.validate()?;
        Ok(m)
    }

    pub fn displaced_lorentzian(g2n: f64, kappa: f64, delta_c: f64) -> Result<Self> {
        let m = NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c };
        m.validate()?;
        Ok(m)
    }

    /// Displaced Lorentzian specified through its effective `T2`, correlation
    /// time `tau_c = 2/kappa` and detuning.
    pub fn displaced_lorentzian_from_times(t2: f64, tau_c: f64, delta_c: f64) -> Result<Self> {
        positive("t2", t2)?;
        positive("tau_c", tau_c)?;
        let kappa = 2.0 / tau_c;
        let g2n = (0.25 * kappa * kappa + delta_c * delta_c) / (2.0 * kappa * t2);
        Self::displaced_lorentzian(g2n, kappa, delta_c)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::White { t2 } => positive("t2", t2),
            NoiseModel::OrnsteinUhlenbeck { t2, tau_c } => {
                positive("t2", t2)?;
                positive("tau_c", tau_c)
            }
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                positive("g2n", g2n)?;
                positive("kappa", kappa)?;
                if delta_c.is_finite() && delta_c >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "delta_c must be finite and >= 0, got {delta_c}"
                    )))
                }
            }
        }
    }

    pub fn family(&self) -> Family {
        match self {
            NoiseModel::White { .. } => Family::White,
            NoiseModel::OrnsteinUhlenbeck { .. } => Family::OrnsteinUhlenbeck,
            NoiseModel::DisplacedLorentzian { .. } => Family::DisplacedLorentzian,
        }
    }

    pub fn params(&self) -> ParamVector {
        ParamVector {
            family: self.family(),
            values: self.param_values().to_vec(),
        }
    }

    pub(crate) fn param_values(&self) -> ParamArray {
        match *self {
            NoiseModel::White { t2 } => ParamArray::new(&[t2]),
            NoiseModel::OrnsteinUhlenbeck { t2, tau_c } => ParamArray::new(&[t2, tau_c]),
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                ParamArray::new(&[g2n, kappa, delta_c])
            }
        }
    }

    pub fn from_params(p: &ParamVector) -> Result<Self> {
        let m = Self::from_slice_unchecked(p.family, &p.values);
        m.validate()?;
        Ok(m)
    }

    /// Builds a model from raw values without validating the domain.
    /// `values` must have `family.dim()` entries.
    pub fn from_slice_unchecked(family: Family, values: &[f64]) -> Self {
        match family {
            Family::White => NoiseModel::White { t2: values[0] },
            Family::OrnsteinUhlenbeck => NoiseModel::OrnsteinUhlenbeck {
                t2: values[0],
                tau_c: values[1],
            },
            Family::DisplacedLorentzian => NoiseModel::DisplacedLorentzian {
                g2n: values[0],
                kappa: values[1],
                delta_c: values[2],
            },
        }
    }

    pub fn from_slice(family: Family, values: &[f64]) -> Result<Self> {
        if values.len() != family.dim() {
            return Err(Error::InvalidParameter(format!(
                "{family} expects {} parameters, got {}",
                family.dim(),
                values.len()
            )));
        }
        let m = Self::from_slice_unchecked(family, values);
        m.validate()?;
        Ok(m)
    }

    /// Zero-frequency spectral density `S(0)`.
    pub fn s0(&self) -> f64 {
        match *self {
            NoiseModel::White { t2 } | NoiseModel::OrnsteinUhlenbeck { t2, .. } => 2.0 / t2,
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                4.0 * g2n * kappa / (0.25 * kappa * kappa + delta_c * delta_c)
            }
        }
    }

    /// Effective long-time decoherence time `2/S(0)`.
    pub fn t2(&self) -> f64 {
        match *self {
            NoiseModel::White { t2 } | NoiseModel::OrnsteinUhlenbeck { t2, .. } => t2,
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                (0.25 * kappa * kappa + delta_c * delta_c) / (2.0 * g2n * kappa)
            }
        }
    }

    /// Noise correlation time; zero for white noise.
    pub fn tau_c(&self) -> f64 {
        match *self {
            NoiseModel::White { .. } => 0.0,
            NoiseModel::OrnsteinUhlenbeck { tau_c, .. } => tau_c,
            NoiseModel::DisplacedLorentzian { kappa, .. } => 2.0 / kappa,
        }
    }

    /// Noise power spectral density `S(ω)`.
    pub fn psd(&self, omega: f64) -> f64 {
        match *self {
            NoiseModel::White { t2 } => 2.0 / t2,
            NoiseModel::OrnsteinUhlenbeck { t2, tau_c } => {
                let x = omega * tau_c;
                (2.0 / t2) / (1.0 + x * x)
            }
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                let d = omega + delta_c;
                4.0 * g2n * kappa / (d * d + 0.25 * kappa * kappa)
            }
        }
    }

    /// `(S(ω) + S(-ω)) / 2`; only this part enters the dephasing dynamics.
    pub fn psd_symmetric(&self, omega: f64) -> f64 {
        0.5 * (self.psd(omega) + self.psd(-omega))
    }

    /// Noise autocorrelation `C(dt)`. White noise has a Dirac-delta
    /// autocorrelation and is rejected.
    pub fn autocorr(&self, dt: f64) -> Result<Complex64> {
        match *self {
            NoiseModel::White { .. } => Err(Error::Unsupported(
                "white-noise autocorrelation is a Dirac delta".into(),
            )),
            NoiseModel::OrnsteinUhlenbeck { t2, tau_c } => {
                // c * tau_c / 2 with c = 2 / (T2 tau_c^2)
                Ok(Complex64::new((-dt.abs() / tau_c).exp() / (t2 * tau_c), 0.0))
            }
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                let env = 4.0 * g2n * (-0.5 * kappa * dt.abs()).exp();
                Ok(Complex64::from_polar(env, -delta_c * dt))
            }
        }
    }

    /// Time-dependent dephasing rate `γ(t)`.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.gamma_unchecked(t))
    }

    pub(crate) fn gamma_unchecked(&self, t: f64) -> f64 {
        match *self {
            NoiseModel::White { t2 } => 0.5 / t2,
            NoiseModel::OrnsteinUhlenbeck { t2, tau_c } => -(-t / tau_c).exp_m1() / (2.0 * t2),
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                let z = Complex64::new(0.5 * kappa, delta_c);
                2.0 * g2n * decay_integral(z, t).re
            }
        }
    }

    /// Attenuation factor `Γ(t) = 2 ∫₀ᵗ γ`.
    pub fn attenuation(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.attenuation_unchecked(t))
    }

    pub(crate) fn attenuation_unchecked(&self, t: f64) -> f64 {
        match *self {
            NoiseModel::White { t2 } => t / t2,
            NoiseModel::OrnsteinUhlenbeck { t2, tau_c } => tau_c * ou_phi(t / tau_c) / t2,
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                let z = Complex64::new(0.5 * kappa, delta_c);
                4.0 * g2n * double_decay_integral(z, t).re
            }
        }
    }

    /// Partial derivatives of `Γ(t)` in the family's parameter order.
    pub fn grad_attenuation(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        Ok(self.grad_attenuation_unchecked(t).as_slice().to_vec())
    }

    pub(crate) fn grad_attenuation_unchecked(&self, t: f64) -> ParamArray {
        match *self {
            NoiseModel::White { t2 } => ParamArray::new(&[-t / (t2 * t2)]),
            NoiseModel::OrnsteinUhlenbeck { t2, tau_c } => {
                let u = t / tau_c;
                let gamma = tau_c * ou_phi(u) / t2;
                ParamArray::new(&[-gamma / t2, ou_psi(u) / t2])
            }
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                let z = Complex64::new(0.5 * kappa, delta_c);
                let f = double_decay_integral(z, t);
                let df = double_decay_integral_dz(z, t);
                ParamArray::new(&[4.0 * f.re, 2.0 * g2n * df.re, -4.0 * g2n * df.im])
            }
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseModel::White { t2 } => write!(f, "White(t2={t2})"),
            NoiseModel::OrnsteinUhlenbeck { t2, tau_c } => {
                write!(f, "OrnsteinUhlenbeck(t2={t2}, tau_c={tau_c})")
            }
            NoiseModel::DisplacedLorentzian { g2n, kappa, delta_c } => {
                write!(f, "DisplacedLorentzian(g2n={g2n}, kappa={kappa}, delta_c={delta_c})")
            }
        }
    }
}

/// Stack-allocated parameter vector of length at most 3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ParamArray {
    len: usize,
    data: [f64; 3],
}

impl ParamArray {
    pub(crate) fn new(v: &[f64]) -> Self {
        let mut data = [0.0; 3];
        data[..v.len()].copy_from_slice(v);
        ParamArray { len: v.len(), data }
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        &self.data[..self.len]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.len]
    }
}

impl std::ops::Deref for ParamArray {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        self.as_slice()
    }
}

// Below this |z t| the closed forms lose digits to cancellation; use the
// Taylor series instead.
const SERIES_CUTOFF: f64 = 0.5;

/// `u - 1 + e^{-u}`.
fn ou_phi(u: f64) -> f64 {
    if u < SERIES_CUTOFF {
        // sum_{n>=2} (-u)^n / n!
        let mut term = 0.5 * u * u;
        let mut sum = term;
        for n in 3..40 {
            term *= -u / n as f64;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        u + (-u).exp_m1()
    }
}

/// `e^{-u}(1 + u) - 1`, i.e. `phi(u) - u phi'(u)`.
fn ou_psi(u: f64) -> f64 {
    if u < SERIES_CUTOFF {
        // sum_{n>=2} (-1)^n (1 - n) u^n / n!
        let mut pow = u * u / 2.0; // (-1)^n u^n / n! for n = 2
        let mut sum = -pow;
        for n in 3..40 {
            pow *= -u / n as f64;
            let term = (1.0 - n as f64) * pow;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (-u).exp() * (1.0 + u) - 1.0
    }
}

/// `∫₀ᵗ e^{-z s} ds = (1 - e^{-z t}) / z`.
fn decay_integral(z: Complex64, t: f64) -> Complex64 {
    let w = -z * t;
    if w.norm() < SERIES_CUTOFF {
        // t * sum_{m>=0} w^m / (m+1)!
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        for m in 1..40 {
            term = term * w / (m + 1) as f64;
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        sum * t
    } else {
        (1.0 - w.exp()) / z
    }
}

/// `∫₀ᵗ ∫₀^s e^{-z u} du ds = t/z - (1 - e^{-z t}) / z²`.
fn double_decay_integral(z: Complex64, t: f64) -> Complex64 {
    let w = -z * t;
    if w.norm() < SERIES_CUTOFF {
        // t² * sum_{m>=0} w^m / (m+2)!
        let mut term = Complex64::new(0.5, 0.0);
        let mut sum = term;
        for m in 1..40 {
            term = term * w / (m + 2) as f64;
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        sum * (t * t)
    } else {
        t / z - (1.0 - w.exp()) / (z * z)
    }
}

/// Derivative of [`double_decay_integral`] with respect to `z`.
fn double_decay_integral_dz(z: Complex64, t: f64) -> Complex64 {
    let w = -z * t;
    if w.norm() < SERIES_CUTOFF {
        // -t³ * sum_{m>=1} m w^{m-1} / (m+2)!
        let mut inv_fact = Complex64::new(1.0 / 6.0, 0.0); // w^{m-1}/(m+2)! at m = 1
        let mut sum = inv_fact;
        for m in 2..40 {
            inv_fact = inv_fact * w / (m + 2) as f64;
            let term = inv_fact * m as f64;
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        -sum * (t * t * t)
    } else {
        let e = w.exp();
        let z2 = z * z;
        -t / z2 - t * e / z2 + 2.0 * (1.0 - e) / (z2 * z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> NoiseModel {
        NoiseModel::ornstein_uhlenbeck(1.0, 0.5).unwrap()
    }

    #[test]
    fn psd_examples() {
        assert!((ou().psd(0.0) - 2.0).abs() < 1e-15);
        assert!((ou().psd(4.0) - 0.4).abs() < 1e-15);
        let dl = NoiseModel::displaced_lorentzian(1.0, 2.0, 0.0).unwrap();
        assert!((dl.psd(0.0) - 8.0).abs() < 1e-15);
    }

    #[test]
    fn autocorr_examples() {
        assert!((ou().autocorr(0.0).unwrap().re - 2.0).abs() < 1e-15);
        let dl = NoiseModel::displaced_lorentzian(1.0, 2.0, std::f64::consts::PI).unwrap();
        let c = dl.autocorr(1.0).unwrap();
        assert!((c.re + 4.0 * (-1.0f64).exp()).abs() < 1e-14);
        assert!(c.im.abs() < 1e-14);
        let dl0 = NoiseModel::displaced_lorentzian(1.0, 2.0, 0.0).unwrap();
        // matches OU with c = 8, tau_c = 1, i.e. T2 = 2 / (c tau_c^2) = 0.25
        let ou_eq = NoiseModel::ornstein_uhlenbeck(0.25, 1.0).unwrap();
        for dt in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let a = dl0.autocorr(dt).unwrap();
            let b = ou_eq.autocorr(dt).unwrap();
            assert!((a - b).norm() < 1e-14, "{dt}");
        }
        assert!(matches!(
            NoiseModel::white(1.0).unwrap().autocorr(0.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn gamma_limits_and_domain() {
        assert_eq!(ou().gamma(0.0).unwrap(), 0.0);
        assert!((ou().gamma(60.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(ou().gamma(-1.0).is_err());
        assert!(ou().attenuation(-1e-9).is_err());
        assert!(ou().grad_attenuation(f64::NAN).is_err());
        let w = NoiseModel::white(2.0).unwrap();
        assert_eq!(w.gamma(3.0).unwrap(), 0.25);
    }

    #[test]
    fn displaced_lorentzian_goes_negative_deep_in_nonmarkovian_regime() {
        let kappa = 1.0;
        let m = NoiseModel::displaced_lorentzian(1.0, kappa, 5.0 * kappa).unwrap();
        // first trough of the oscillation sits at delta_c t = 3 pi / 2
        let t = 1.5 * std::f64::consts::PI / 5.0;
        assert!(m.gamma(t).unwrap() < 0.0);
    }

    #[test]
    fn attenuation_examples() {
        for m in [
            ou(),
            NoiseModel::white(1.0).unwrap(),
            NoiseModel::displaced_lorentzian(1.0, 2.0, 5.0).unwrap(),
        ] {
            assert_eq!(m.attenuation(0.0).unwrap(), 0.0);
        }
        let w = NoiseModel::white(1.0).unwrap();
        assert!((w.attenuation(0.797).unwrap() - 0.797).abs() < 1e-15);
    }

    #[test]
    fn displaced_lorentzian_matches_printed_closed_form_up_to_phase_sign() {
        // Γ = S0/2 (t + (2/κ)(x²-1)/(x²+1) + (2/κ) e^{-κt/2} cos(Δt + 2 atan x)), x = 2Δ/κ
        let (g2n, kappa, delta) = (1.0, 2.0, 5.0);
        let m = NoiseModel::displaced_lorentzian(g2n, kappa, delta).unwrap();
        let x = 2.0 * delta / kappa;
        let s0 = m.s0();
        for t in [0.05, 0.3, 1.3, 4.0, 11.0] {
            let phi = delta * t + 2.0 * x.atan();
            let closed = 0.5
                * s0
                * (t + 2.0 / kappa * (x * x - 1.0) / (x * x + 1.0)
                    + 2.0 / kappa * (-0.5 * kappa * t).exp() * phi.cos());
            let ours = m.attenuation(t).unwrap();
            assert!((closed - ours).abs() < 1e-12 * ours.max(1e-3), "t={t}: {closed} vs {ours}");
            let g_closed = 0.25
                * s0
                * (1.0 - (-0.5 * kappa * t).exp() * ((delta * t).cos() - x * (delta * t).sin()));
            assert!((g_closed - m.gamma(t).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_examples() {
        let w = NoiseModel::white(1.0).unwrap();
        assert_eq!(w.grad_attenuation(1.0).unwrap(), vec![-1.0]);
        assert_eq!(ou().grad_attenuation(0.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn series_and_closed_forms_agree_at_cutoff() {
        for u in [0.49999, 0.5, 0.50001] {
            let closed = u + (-u as f64).exp_m1();
            assert!((ou_phi(u) - closed).abs() < 1e-15);
            let closed_psi = (-u as f64).exp() * (1.0 + u) - 1.0;
            assert!((ou_psi(u) - closed_psi).abs() < 1e-15);
        }
        let z = Complex64::new(0.3, 0.4);
        for t in [0.999, 1.0, 1.001] {
            let w = -z * t;
            let closed = t / z - (1.0 - w.exp()) / (z * z);
            assert!((double_decay_integral(z, t) - closed).norm() < 1e-14);
            let e = w.exp();
            let closed_dz = -t / (z * z) - t * e / (z * z) + 2.0 * (1.0 - e) / (z * z * z);
            assert!((double_decay_integral_dz(z, t) - closed_dz).norm() < 1e-13);
        }
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let m = NoiseModel::displaced_lorentzian(2.7, 6.5, 5.0).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"kind\":\"DisplacedLorentzian\""));
        let back: NoiseModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<NoiseModel>(r#"{"kind":"White","t2":-1}"#).is_err());
        assert!(serde_json::from_str::<NoiseModel>(r#"{"kind":"White","t2":1,"x":2}"#).is_err());
        assert!(serde_json::from_str::<NoiseModel>(r#"{"kind":"Pink","t2":1}"#).is_err());
    }

    #[test]
    fn derived_quantities() {
        let (g2n, kappa, delta) = (1.3, 2.1, 0.7);
        let m = NoiseModel::displaced_lorentzian(g2n, kappa, delta).unwrap();
        let expected = ((kappa / 2.0f64).powi(2) + delta * delta) / (2.0 * g2n * kappa);
        assert!((m.t2() - expected).abs() < 1e-15);
        assert!((m.t2() - 2.0 / m.s0()).abs() < 1e-14);
        let from_times = NoiseModel::displaced_lorentzian_from_times(1.0, 0.3, 5.0).unwrap();
        assert!((from_times.t2() - 1.0).abs() < 1e-14);
        if let NoiseModel::DisplacedLorentzian { g2n, .. } = from_times {
            assert!((g2n - 2.708).abs() < 1e-3);
        }
    }
}
