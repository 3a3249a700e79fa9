//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use dephasing::bayes::{
    expected_kl_gain, run_protocol, ParticleEnsemble, ProtocolConfig, ProtocolTrace,
};
use dephasing::filter::attenuation_quadrature;
use dephasing::frequentist::{
    asymptotic_cov, fit, lindblad_closed_form_fit, log_det_information, optimal_times, FitConfig,
    InitialGuess, SearchConfig,
};
use dephasing::harness::{precision_ratio, uniform_vs_optimal_ratio, ComparisonSpec};
use dephasing::nonmarkov::{markovian_boundary, n_cp, n_td, Horizon};
use dephasing::rng::{derive_seed, rng_from_seed};
use dephasing::sim::{ramsey_prob, sample_dataset};
use dephasing::{Error, Family, NoiseModel, Schedule};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Thread count the stated runtime limits refer to.
const REFERENCE_THREADS: usize = 8;

/// Compares against `limit_s` on `REFERENCE_THREADS` threads, scaled to the
/// threads available here.
fn within_time(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let threads = rayon::current_num_threads().clamp(1, REFERENCE_THREADS);
    let budget = limit_s * REFERENCE_THREADS as f64 / threads as f64;
    check(
        elapsed.as_secs_f64() < budget,
        format!(
            "{detail}; {:.2}s (limit {limit_s}s on {REFERENCE_THREADS} threads, {budget}s on {threads})",
            elapsed.as_secs_f64()
        ),
    )
}

fn ou(t2: f64, tau: f64) -> NoiseModel {
    NoiseModel::ornstein_uhlenbeck(t2, tau).unwrap()
}

fn dl(t2: f64, tau: f64, delta: f64) -> NoiseModel {
    NoiseModel::displaced_lorentzian_from_times(t2, tau, delta).unwrap()
}

fn c01_lindblad_optimal_time() -> Outcome {
    let start = Instant::now();
    let t = optimal_times(&NoiseModel::white(1.0).unwrap(), 1, &SearchConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check((t[0] - 0.797).abs() <= 1e-3, format!("t = {:.5}", t[0]))?;
    within_time(elapsed, 1.0, format!("t = {:.5}", t[0]))
}

fn c02_lindblad_variance() -> Outcome {
    let start = Instant::now();
    let (t2, n, t) = (1.0, 1000u64, 0.797);
    let model = NoiseModel::white(t2).unwrap();
    let schedule = Schedule::new(vec![(t, n)]).unwrap();
    let estimates: Vec<f64> = (0..10_000u64)
        .map(|s| {
            let d = sample_dataset(&model, &schedule, derive_seed(2, s));
            lindblad_closed_form_fit(d.records[0].freq0(), t).unwrap()
        })
        .collect();
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let expected = t2.powi(4) * ((2.0 * t / t2).exp() - 1.0) / (n as f64 * t * t);
    let rel = (var / expected - 1.0).abs();
    let detail = format!("var = {var:.4e}, formula = {expected:.4e}, rel = {rel:.3}");
    check(rel < 0.05, detail.clone())?;
    within_time(start.elapsed(), 10.0, detail)
}

fn c03_ou_optimal_times() -> Outcome {
    let start = Instant::now();
    let t = optimal_times(&ou(1.0, 0.5), 2, &SearchConfig::default()).map_err(|e| e.to_string())?;
    let detail = format!("t = ({:.4}, {:.4})", t[0], t[1]);
    check((t[0] - 0.56).abs() <= 0.02 && (t[1] - 1.99).abs() <= 0.02, detail.clone())?;
    within_time(start.elapsed(), 30.0, detail)
}

fn c04_ou_lindblad_limit() -> Outcome {
    let t = optimal_times(&ou(1.0, 1e-3), 2, &SearchConfig::default()).map_err(|e| e.to_string())?;
    check(
        (0.78..=0.82).contains(&t[1]) && t[0] <= 0.05,
        format!("t = ({:.5}, {:.4})", t[0], t[1]),
    )
}

fn c05_markovian_boundary() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for kappa in [0.5, 1.0, 4.0] {
        let b = markovian_boundary(kappa, 1e-8 * kappa).map_err(|e| e.to_string())?;
        let ratio = b / kappa;
        ok &= (ratio / 1.82 - 1.0).abs() <= 0.02;
        parts.push(format!("κ={kappa}: Δ/κ={ratio:.4}"));
    }
    check(ok, parts.join(", "))?;
    within_time(start.elapsed(), 5.0, parts.join(", "))
}

fn c06_model_consistency() -> Outcome {
    let start = Instant::now();
    let mut worst_match = 0.0_f64;
    for (t2, tau) in [(1.0, 0.5), (2.0, 0.01), (0.3, 7.0)] {
        let o = ou(t2, tau);
        let d = dl(t2, tau, 0.0);
        for i in 1..=1000 {
            let t = 10.0 * t2 * i as f64 / 1000.0;
            worst_match = worst_match.max((o.attenuation(t).unwrap() - d.attenuation(t).unwrap()).abs());
        }
    }
    let mut rng = rng_from_seed(6);
    let mut worst_quad = 0.0_f64;
    for i in 0..150 {
        let t2 = 10f64.powf(rng.random_range(-1.0..1.0));
        let tau = t2 * 10f64.powf(rng.random_range(-2.0..1.0));
        let model = match i % 3 {
            0 => NoiseModel::white(t2).unwrap(),
            1 => ou(t2, tau),
            _ => dl(t2, tau, rng.random_range(0.0..10.0) / t2),
        };
        let t = t2 * 10f64.powf(rng.random_range(-2.0..0.7));
        let exact = model.attenuation(t).unwrap();
        let quad = attenuation_quadrature(&model, t, 1e-11).map_err(|e| e.to_string())?;
        worst_quad = worst_quad.max(((quad - exact) / exact).abs());
    }
    let detail = format!("max |ΔΓ| = {worst_match:.2e}, max quadrature rel err = {worst_quad:.2e}");
    check(worst_match < 1e-12 && worst_quad < 1e-8, detail.clone())?;
    within_time(start.elapsed(), 30.0, detail)
}

fn c07_gradients() -> Outcome {
    let mut rng = rng_from_seed(7);
    let mut worst = 0.0_f64;
    for family in Family::ALL {
        for _ in 0..100 {
            let t2 = 10f64.powf(rng.random_range(-1.0..1.0));
            let tau = t2 * 10f64.powf(rng.random_range(-2.0..1.0));
            let model = match family {
                Family::White => NoiseModel::white(t2).unwrap(),
                Family::OrnsteinUhlenbeck => ou(t2, tau),
                Family::DisplacedLorentzian => dl(t2, tau, rng.random_range(0.0..10.0) / t2),
            };
            let t = t2 * 10f64.powf(rng.random_range(-2.0..0.7));
            let g = model.grad_attenuation(t).unwrap();
            let theta = model.params().into_values();
            let mut err2 = 0.0;
            let mut norm2 = 0.0;
            for j in 0..theta.len() {
                let h = 1e-5 * theta[j];
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let fu = NoiseModel::from_slice(family, &up).unwrap().attenuation(t).unwrap();
                let fd = NoiseModel::from_slice(family, &dn).unwrap().attenuation(t).unwrap();
                let num = (fu - fd) / (2.0 * h);
                err2 += ((num - g[j]) * theta[j]).powi(2);
                norm2 += (g[j] * theta[j]).powi(2);
            }
            worst = worst.max((err2 / norm2).sqrt());
        }
    }
    check(worst < 1e-6, format!("max relative error = {worst:.2e}"))
}

fn c08_asymptotic_covariance() -> Outcome {
    use rayon::prelude::*;
    let start = Instant::now();
    let model = ou(1.0, 0.5);
    let times = optimal_times(&model, 2, &SearchConfig::default()).map_err(|e| e.to_string())?;
    let schedule = Schedule::equal_split(&times, 100_000).unwrap();
    let asym = asymptotic_cov(&model, schedule.entries()).map_err(|e| e.to_string())?;
    let estimates: Vec<Vec<f64>> = (0..2000u64)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(8, r);
            let data = sample_dataset(&model, &schedule, seed);
            let mut cfg = FitConfig::around(&model, 3.0);
            cfg.initial_guess = InitialGuess::RandomInBox { restarts: 8, seed };
            fit(&data, Family::OrnsteinUhlenbeck, &cfg).unwrap().theta_hat.into_values()
        })
        .collect();
    let m = estimates.len() as f64;
    let mean: Vec<f64> = (0..2).map(|j| estimates.iter().map(|x| x[j]).sum::<f64>() / m).collect();
    let emp = DMatrix::from_fn(2, 2, |i, j| {
        estimates.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / (m - 1.0)
    });
    let worst = (0..4).map(|k| ((emp[k] - asym[k]) / asym[k]).abs()).fold(0.0, f64::max);
    let detail = format!(
        "empirical [{:.3e} {:.3e}; {:.3e}], asymptotic [{:.3e} {:.3e}; {:.3e}], worst rel = {worst:.3}",
        emp[(0, 0)],
        emp[(0, 1)],
        emp[(1, 1)],
        asym[(0, 0)],
        asym[(0, 1)],
        asym[(1, 1)]
    );
    check(worst <= 0.15, detail.clone())?;
    within_time(start.elapsed(), 300.0, detail)
}

fn c09_singularity() -> Outcome {
    let model = ou(1.0, 0.5);
    let coincident = asymptotic_cov(&model, &[(0.7, 500), (0.7, 500)]);
    let singular = matches!(coincident, Err(Error::Singular(_)));
    let mut dets = Vec::new();
    for k in 1..=5 {
        let eps = 10f64.powi(-k);
        let c = asymptotic_cov(&model, &[(0.7, 500), (0.7 + eps, 500)]).map_err(|e| e.to_string())?;
        dets.push(c.determinant());
    }
    let growing = dets.windows(2).all(|w| w[1] > w[0]);
    // det Σ ∝ Δt⁻² near the coincidence
    let slope = (dets[4] / dets[3]).log10();
    let unbounded = (1.8..=2.2).contains(&slope) && dets[4] / dets[0] > 1e7;
    check(
        singular && growing && unbounded,
        format!(
            "singular error: {singular}; det from {:.3e} to {:.3e} as Δt: 1e-1 → 1e-5, log-log slope {slope:.3}",
            dets[0], dets[4]
        ),
    )
}

/// Number of the last 100 selected times within ±0.1·T2 of some optimum.
fn cluster_hits(trace: &ProtocolTrace, optima: &[f64], t2: f64) -> usize {
    let tail = &trace.steps[trace.steps.len().saturating_sub(100)..];
    tail.iter().filter(|s| optima.iter().any(|o| (s.t - o).abs() <= 0.1 * t2)).count()
}

fn c10_time_clustering() -> Outcome {
    use rayon::prelude::*;
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, model, gain_particles) in [("OU", ou(1.0, 0.5), 512), ("DL", dl(1.0, 0.5, 5.0), 2048)] {
        let dim = model.family().dim();
        let optima = optimal_times(&model, dim, &SearchConfig::default()).map_err(|e| e.to_string())?;
        let hits: Vec<usize> = (0..10u64)
            .into_par_iter()
            .map(|seed| {
                let mut cfg = ProtocolConfig::around(&model, 3.0, 50, 300);
                cfg.gain_particles = gain_particles;
                cfg.seed = seed;
                let trace = run_protocol(&model, &cfg).unwrap();
                cluster_hits(&trace, &optima, 1.0)
            })
            .collect();
        let votes = hits.iter().filter(|&&h| h >= 60).count();
        ok &= votes > 5;
        parts.push(format!("{name}: {votes}/10 seeds ≥ 60 hits {hits:?}"));
    }
    check(ok, parts.join("; "))?;
    within_time(start.elapsed(), 600.0, parts.join("; "))
}

fn c11_posterior_scaling() -> Outcome {
    use rayon::prelude::*;
    let model = NoiseModel::white(1.0).unwrap();
    let runs = 30u64;
    let stds: Vec<Vec<f64>> = (0..runs)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = ProtocolConfig::around(&model, 3.0, 50, 500);
            cfg.seed = seed;
            let trace = run_protocol(&model, &cfg).unwrap();
            trace.steps.iter().map(|s| s.cov[0].sqrt()).collect()
        })
        .collect();
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for step in 50..=500usize {
        let mean_std = stds.iter().map(|s| s[step - 1]).sum::<f64>() / runs as f64;
        let (x, y) = ((step as f64).ln(), mean_std.ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        n += 1.0;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    check((slope + 0.5).abs() <= 0.1, format!("slope = {slope:.4}"))
}

fn c12_ratio_saturation() -> Outcome {
    let start = Instant::now();
    let mut spec = ComparisonSpec::new(ou(1.0, 0.3), 1_000_000);
    spec.frequentist_runs = 200;
    spec.bayesian_runs = 200;
    spec.bayes.reselect_fraction = 0.1;
    spec.seed = 12;
    let report = precision_ratio(&spec).map_err(|e| e.to_string())?;
    let detail = format!(
        "r_OU = {:.4} (F {:.4e}, B {:.4e})",
        report.ratio, report.frequentist.det_metric, report.bayesian.det_metric
    );
    check((0.85..=1.15).contains(&report.ratio), detail.clone())?;
    within_time(start.elapsed(), 900.0, detail)
}

fn c13_regime_flip() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut r_nm = Vec::new();
    let mut r_uo = Vec::new();
    for (tau, seed) in [(0.3, 130), (0.9, 131)] {
        let mut spec = ComparisonSpec::new(dl(1.0, tau, 5.0), 20_000);
        spec.frequentist_runs = 500;
        spec.bayesian_runs = 30;
        spec.seed = seed;
        let nm = precision_ratio(&spec).map_err(|e| e.to_string())?.ratio;
        let uo = uniform_vs_optimal_ratio(&spec, (0.02, 3.0), 20).map_err(|e| e.to_string())?.ratio;
        parts.push(format!("τ={tau}: r_NM = {nm:.3}, r_uni,opt = {uo:.3}"));
        r_nm.push(nm);
        r_uo.push(uo);
    }
    let ok = r_nm[0] < 1.0 && r_nm[1] > 1.0 && r_uo[0] < 1.0 && r_uo[1] > 1.0;
    check(ok, parts.join("; "))?;
    within_time(start.elapsed(), 1800.0, parts.join("; "))
}

fn run_property<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn model_strategy() -> impl Strategy<Value = NoiseModel> {
    (0usize..3, -1.0..1.0f64, -2.0..1.0f64, 0.0..10.0f64).prop_map(|(f, lt2, ltau, d)| {
        let t2 = 10f64.powf(lt2);
        let tau = t2 * 10f64.powf(ltau);
        match f {
            0 => NoiseModel::white(t2).unwrap(),
            1 => ou(t2, tau),
            _ => dl(t2, tau, d / t2),
        }
    })
}

fn ensemble(p: &[f64], w: &[f64]) -> ParticleEnsemble {
    ParticleEnsemble::new(Family::White, p.iter().map(|&x| vec![x]).collect(), w.to_vec(), vec![(0.1, 10.0)]).unwrap()
}

fn c14_properties() -> Outcome {
    let particles = || proptest::collection::vec(0.1..10.0f64, 3);
    let weights = || proptest::collection::vec(0.01..1.0f64, 3);
    let mut done = Vec::new();

    run_property(
        "weight normalization",
        (particles(), weights(), 0.01..5.0f64, 1u64..200, 0.0..1.0f64),
        |(p, w, t, n, frac)| {
            let mut e = ensemble(&p, &w);
            let k0 = (frac * n as f64).round() as u64;
            if e.update(t, n, k0).is_ok() {
                let s: f64 = e.weights().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            Ok(())
        },
    )?;
    done.push("weights");

    run_property("KL gain nonnegativity", (particles(), weights(), 0.0..5.0f64, 0u64..300), |(p, w, t, n)| {
        let g = expected_kl_gain(&ensemble(&p, &w), t, n);
        prop_assert!(g >= 0.0 && g.is_finite());
        Ok(())
    })?;
    done.push("KL gain");

    run_property(
        "Bayes rule vs 3-particle oracle",
        (particles(), weights(), 0.01..3.0f64, 1u64..100, 0.0..1.0f64),
        |(p, w, t, n, frac)| {
            let k0 = (frac * n as f64).round() as u64;
            let mut e = ensemble(&p, &w);
            let wsum: f64 = w.iter().sum();
            let lik: Vec<f64> = p
                .iter()
                .zip(&w)
                .map(|(&t2, &wi)| {
                    let m = NoiseModel::white(t2).unwrap();
                    let p0 = ramsey_prob(&m, t, 0).unwrap();
                    let p1 = ramsey_prob(&m, t, 1).unwrap();
                    (wi / wsum) * p0.powi(k0 as i32) * p1.powi((n - k0) as i32)
                })
                .collect();
            let z: f64 = lik.iter().sum();
            if !(z > 1e-250) {
                return Ok(());
            }
            e.update(t, n, k0).map_err(|err| TestCaseError::fail(err.to_string()))?;
            for (a, b) in e.weights().iter().zip(&lik) {
                prop_assert!((a - b / z).abs() <= 1e-14, "{a} vs {}", b / z);
            }
            Ok(())
        },
    )?;
    done.push("Bayes rule");

    run_property("probability normalization", (model_strategy(), 0.0..50.0f64), |(m, t)| {
        let p0 = ramsey_prob(&m, t, 0).unwrap();
        let p1 = ramsey_prob(&m, t, 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1));
        prop_assert!((p0 + p1 - 1.0).abs() <= 1e-15);
        Ok(())
    })?;
    done.push("normalization");

    run_property("N_CP/N_TD zero equivalence", (0.1..10.0f64, 0.0..30.0f64), |(kappa, delta)| {
        let m = NoiseModel::displaced_lorentzian(1.0, kappa, delta).unwrap();
        let cp = n_cp(&m, Horizon::Auto).unwrap();
        let td = n_td(&m, Horizon::Auto).unwrap();
        prop_assert_eq!(cp == 0.0, td == 0.0, "N_CP = {}, N_TD = {}", cp, td);
        Ok(())
    })?;
    done.push("zero equivalence");

    run_property(
        "det symmetry under time swap",
        (model_strategy(), proptest::collection::vec(0.01..5.0f64, 3)),
        |(m, ts)| {
            let k = m.family().dim();
            let a = &ts[..k];
            let mut b = a.to_vec();
            b.reverse();
            let (la, lb) = (log_det_information(&m, a), log_det_information(&m, &b));
            prop_assert!(la == lb || (la - lb).abs() <= 1e-9 * la.abs().max(1.0) || (la.is_nan() && lb.is_nan()));
            Ok(())
        },
    )?;
    done.push("det symmetry");

    Ok(format!("{} suites × 1000 cases: {}", done.len(), done.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("Lindblad optimal time", c01_lindblad_optimal_time),
        ("Lindblad variance formula", c02_lindblad_variance),
        ("OU optimal times", c03_ou_optimal_times),
        ("OU Lindblad limit", c04_ou_lindblad_limit),
        ("Non-Markovian boundary", c05_markovian_boundary),
        ("Model consistency", c06_model_consistency),
        ("Gradient suite", c07_gradients),
        ("Asymptotic covariance", c08_asymptotic_covariance),
        ("Singularity behavior", c09_singularity),
        ("Bayesian time clustering", c10_time_clustering),
        ("Posterior scaling", c11_posterior_scaling),
        ("Ratio saturation", c12_ratio_saturation),
        ("Regime flip", c13_regime_flip),
        ("Property suites", c14_properties),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {id:>2} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
