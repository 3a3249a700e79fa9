//! Adaptive Simpson quadrature with interval bisection.

use crate::error::{Error, Result};

/// Limits for [`adaptive_simpson`].
#[derive(Clone, Copy, Debug)]
pub struct SimpsonConfig {
    /// Absolute tolerance on the integral.
    pub tol: f64,
    /// Maximum bisection depth.
    pub max_depth: u32,
    /// Maximum number of integrand evaluations before giving up.
    pub max_evals: usize,
}

impl Default for SimpsonConfig {
    fn default() -> Self {
        SimpsonConfig {
            tol: 1e-9,
            max_depth: 60,
            max_evals: 20_000_000,
        }
    }
}

/// Integral value and bookkeeping.
#[derive(Clone, Copy, Debug)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub evals: usize,
}

struct State<'a, F> {
    f: &'a F,
    evals: usize,
    max_evals: usize,
    max_depth: u32,
    err: f64,
    depth_exceeded: bool,
}

/// Integrates `f` over `[a, b]` to absolute tolerance `cfg.tol`.
///
/// Uses the classical error estimate `|S₂ - S₁| / 15` with Richardson
/// correction on each accepted panel.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, cfg: &SimpsonConfig) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numerical(format!("non-finite integration bounds [{a}, {b}]")));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, error_estimate: 0.0, evals: 0 });
    }
    let mut st = State {
        f,
        evals: 3,
        max_evals: cfg.max_evals,
        max_depth: cfg.max_depth,
        err: 0.0,
        depth_exceeded: false,
    };
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let value = recurse(&mut st, a, b, fa, fm, fb, whole, cfg.tol, 0)?;
    if !value.is_finite() {
        return Err(Error::Numerical("integrand produced a non-finite value".into()));
    }
    if st.depth_exceeded {
        return Err(Error::Numerical(format!(
            "adaptive Simpson hit max depth {} on [{a}, {b}] (estimated error {:.3e})",
            cfg.max_depth, st.err
        )));
    }
    Ok(Quadrature { value, error_estimate: st.err, evals: st.evals })
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    st: &mut State<'_, F>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = (st.f)(lm);
    let frm = (st.f)(rm);
    st.evals += 2;
    if st.evals > st.max_evals {
        return Err(Error::Numerical(format!(
            "adaptive Simpson exceeded {} evaluations",
            st.max_evals
        )));
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth >= st.max_depth {
        st.depth_exceeded = true;
        st.err += delta.abs() / 15.0;
        return Ok(left + right + delta / 15.0);
    }
    if delta.abs() <= 15.0 * tol {
        st.err += delta.abs() / 15.0;
        return Ok(left + right + delta / 15.0);
    }
    let l = recurse(st, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?;
    let r = recurse(st, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?;
    Ok(l + r)
}

/// Integrates over consecutive panels `[edges[i], edges[i+1]]`, splitting the
/// tolerance in proportion to panel width.
pub fn adaptive_simpson_panels<F: Fn(f64) -> f64>(f: &F, edges: &[f64], cfg: &SimpsonConfig) -> Result<Quadrature> {
    let (Some(&first), Some(&last)) = (edges.first(), edges.last()) else {
        return Ok(Quadrature { value: 0.0, error_estimate: 0.0, evals: 0 });
    };
    let span = (last - first).abs();
    let mut total = Quadrature { value: 0.0, error_estimate: 0.0, evals: 0 };
    // Kahan summation; the panels can number in the thousands.
    let mut comp = 0.0;
    for w in edges.windows(2) {
        let local = SimpsonConfig {
            tol: cfg.tol * (w[1] - w[0]).abs() / span,
            ..*cfg
        };
        let q = adaptive_simpson(f, w[0], w[1], &local)?;
        let y = q.value - comp;
        let s = total.value + y;
        comp = (s - total.value) - y;
        total.value = s;
        total.error_estimate += q.error_estimate;
        total.evals += q.evals;
    }
    Ok(total)
}
