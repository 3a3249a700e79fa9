use dephasing::bayes::{init_prior, lindblad_variance_update, run_protocol, ProtocolConfig};
use dephasing::frequentist::{asymptotic_cov, fit, optimal_times, CostKind, FitConfig, InitialGuess, SearchConfig};
use dephasing::rng::derive_seed;
use dephasing::sim::{ramsey_prob, sample_dataset};
use dephasing::{Family, NoiseModel, Schedule};

#[test]
fn sampled_frequencies_within_four_sigma() {
    let cases = [
        (NoiseModel::white(1.0).unwrap(), 0.5, 7u64),
        (NoiseModel::ornstein_uhlenbeck(1.0, 0.5).unwrap(), 1.99, 100),
        (NoiseModel::displaced_lorentzian_from_times(1.0, 0.9, 5.0).unwrap(), 0.7, 1000),
        (NoiseModel::ornstein_uhlenbeck(2.0, 0.01).unwrap(), 0.05, 31),
    ];
    for (i, (m, t, n)) in cases.into_iter().enumerate() {
        let p = ramsey_prob(&m, t, 0).unwrap();
        let s = Schedule::new(vec![(t, n)]).unwrap();
        let reps = 2000u64;
        let total: u64 = (0..reps).map(|r| sample_dataset(&m, &s, derive_seed(i as u64, r)).records[0].count0).sum();
        let f = total as f64 / (n * reps) as f64;
        let se = (p * (1.0 - p) / (n * reps) as f64).sqrt();
        assert!((f - p).abs() < 4.0 * se, "case {i}: f = {f}, p = {p}, se = {se}");
    }
}

#[test]
fn binomial_counts_pass_chi_square() {
    let m = NoiseModel::ornstein_uhlenbeck(1.0, 0.5).unwrap();
    let (t, n) = (0.56, 20u64);
    let p = ramsey_prob(&m, t, 0).unwrap();
    let s = Schedule::new(vec![(t, n)]).unwrap();
    let reps = 20_000u64;
    let mut hist = vec![0u64; n as usize + 1];
    for r in 0..reps {
        hist[sample_dataset(&m, &s, derive_seed(77, r)).records[0].count0 as usize] += 1;
    }
    // exact pmf by recurrence, pooling sparse tails
    let mut pmf = vec![0.0; n as usize + 1];
    pmf[0] = (1.0 - p).powi(n as i32);
    for k in 1..=n as usize {
        pmf[k] = pmf[k - 1] * (n as f64 - k as f64 + 1.0) / k as f64 * p / (1.0 - p);
    }
    let (mut chi2, mut df) = (0.0f64, -1.0f64);
    let (mut obs_pool, mut exp_pool) = (0.0, 0.0);
    for k in 0..=n as usize {
        obs_pool += hist[k] as f64;
        exp_pool += pmf[k] * reps as f64;
        if exp_pool >= 5.0 {
            chi2 += (obs_pool - exp_pool).powi(2) / exp_pool;
            df += 1.0;
            obs_pool = 0.0;
            exp_pool = 0.0;
        }
    }
    chi2 += if exp_pool > 0.0 { (obs_pool - exp_pool).powi(2) / exp_pool } else { 0.0 };
    // roughly the 1e-5 upper quantile
    let critical = df + 6.0 * (2.0 * df).sqrt();
    assert!(chi2 < critical, "χ² = {chi2} on {df} dof");
}

#[test]
fn particle_posterior_matches_dense_grid() {
    let truth = NoiseModel::white(1.0).unwrap();
    let mut cfg = ProtocolConfig::new(Family::White, vec![(1.0 / 3.0, 3.0)], 10, 1);
    cfg.particles = 40_000;
    let mut ens = init_prior(&cfg).unwrap();
    let schedule = Schedule::new(vec![(0.3, 40), (0.8, 60), (2.0, 30)]).unwrap();
    let data = sample_dataset(&truth, &schedule, 5);
    for r in &data.records {
        ens.update(r.t, r.shots, r.count0).unwrap();
    }
    let grid = 200_000;
    let (lo, hi) = (1.0 / 3.0, 3.0);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    let lw: Vec<(f64, f64)> = (0..grid)
        .map(|i| {
            let t2 = lo + (hi - lo) * (i as f64 + 0.5) / grid as f64;
            let m = NoiseModel::white(t2).unwrap();
            let ll: f64 = data
                .records
                .iter()
                .map(|r| {
                    r.count0 as f64 * ramsey_prob(&m, r.t, 0).unwrap().ln()
                        + r.count1() as f64 * ramsey_prob(&m, r.t, 1).unwrap().ln()
                })
                .sum();
            (t2, ll)
        })
        .collect();
    let max = lw.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    for &(t2, ll) in &lw {
        let w = (ll - max).exp();
        z += w;
        m1 += w * t2;
        m2 += w * t2 * t2;
    }
    let mean = m1 / z;
    let var = m2 / z - mean * mean;
    let pm = ens.mean()[0];
    let pv = ens.cov()[(0, 0)];
    let se = (var / ens.ess()).sqrt();
    assert!((pm - mean).abs() < 4.0 * se, "particle mean {pm}, grid {mean}, se {se}");
    assert!((pv / var - 1.0).abs() < 4.0 * (2.0 / ens.ess()).sqrt() + 0.02, "particle var {pv}, grid {var}");
}

/// Expected posterior variance of `γ` after one shot at `t` for a Gaussian
/// prior, by quadrature over a dense grid.
fn grid_expected_variance(gamma_hat: f64, sigma2: f64, t: f64) -> f64 {
    let sd = sigma2.sqrt();
    let n = 40_001;
    let (lo, hi) = (gamma_hat - 12.0 * sd, gamma_hat + 12.0 * sd);
    let h = (hi - lo) / (n - 1) as f64;
    let mut acc = [[0.0f64; 3]; 2];
    for i in 0..n {
        let g = lo + h * i as f64;
        let prior = (-(g - gamma_hat).powi(2) / (2.0 * sigma2)).exp();
        let e = (-2.0 * g * t).exp();
        for (m, lik) in [0.5 * (1.0 + e), 0.5 * (1.0 - e)].into_iter().enumerate() {
            let w = prior * lik;
            acc[m][0] += w;
            acc[m][1] += w * g;
            acc[m][2] += w * g * g;
        }
    }
    let z = acc[0][0] + acc[1][0];
    acc.iter()
        .map(|a| {
            let mean = a[1] / a[0];
            (a[0] / z) * (a[2] / a[0] - mean * mean)
        })
        .sum()
}

#[test]
fn variance_update_matches_grid_oracle() {
    for &(g, s2, t) in &[(0.5, 1e-3, 0.797), (0.5, 4e-4, 0.2), (1.3, 1e-2, 0.4), (0.2, 1e-4, 3.0)] {
        let formula = lindblad_variance_update(g, s2, t).unwrap().expected_variance;
        let grid = grid_expected_variance(g, s2, t);
        assert!((formula / grid - 1.0).abs() < 1e-8, "γ̂={g} σ²={s2} t={t}: {formula} vs {grid}");
    }
}

#[test]
fn variance_update_is_best_at_lindblad_optimum() {
    // γ̂ = 1/2 is T2 = 1; the tiny prior width recovers the Fisher optimum.
    let (g, s2) = (0.5, 1e-8);
    let f = |t: f64| lindblad_variance_update(g, s2, t).unwrap().expected_variance;
    let (mut a, mut b) = (0.1f64, 3.0f64);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let t = 0.5 * (a + b);
    assert!((t - 0.797).abs() < 1e-3, "argmin t = {t}");
}

#[test]
fn fits_land_within_four_sigma() {
    for (i, m) in [
        NoiseModel::white(1.0).unwrap(),
        NoiseModel::ornstein_uhlenbeck(1.0, 0.5).unwrap(),
        NoiseModel::displaced_lorentzian_from_times(1.0, 0.9, 5.0).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let times = optimal_times(&m, m.family().dim(), &SearchConfig::default()).unwrap();
        let s = Schedule::equal_split(&times, 60_000).unwrap();
        let cov = asymptotic_cov(&m, s.entries()).unwrap();
        for seed in 0..5 {
            let data = sample_dataset(&m, &s, derive_seed(100 + i as u64, seed));
            let mut cfg = FitConfig::around(&m, 3.0);
            cfg.initial_guess = InitialGuess::RandomInBox { restarts: 8, seed };
            let rep = fit(&data, m.family(), &cfg).unwrap();
            for (j, (est, truth)) in rep.theta_hat.values().iter().zip(m.params().values()).enumerate() {
                let sd = cov[(j, j)].sqrt();
                assert!((est - truth).abs() < 4.0 * sd, "{:?} seed {seed}: θ{j} = {est}, truth {truth}, sd {sd}", m.family());
            }
        }
    }
}

#[test]
fn weighted_least_squares_agrees_with_likelihood() {
    let m = NoiseModel::ornstein_uhlenbeck(1.0, 0.5).unwrap();
    let times = optimal_times(&m, 2, &SearchConfig::default()).unwrap();
    let s = Schedule::equal_split(&times, 100_000).unwrap();
    let cov = asymptotic_cov(&m, s.entries()).unwrap();
    for seed in 0..5 {
        let data = sample_dataset(&m, &s, seed);
        let mut cfg = FitConfig::around(&m, 3.0);
        cfg.initial_guess = InitialGuess::RandomInBox { restarts: 8, seed };
        let nll = fit(&data, Family::OrnsteinUhlenbeck, &cfg).unwrap();
        cfg.cost = CostKind::Wls;
        let wls = fit(&data, Family::OrnsteinUhlenbeck, &cfg).unwrap();
        for j in 0..2 {
            let d = (nll.theta_hat.values()[j] - wls.theta_hat.values()[j]).abs();
            assert!(d < 0.1 * cov[(j, j)].sqrt(), "seed {seed}: θ{j} differs by {d}");
        }
    }
}

#[test]
fn white_posterior_tracks_variance_recursion() {
    let truth = NoiseModel::white(1.0).unwrap();
    let (runs, start, shots) = (10u64, 20usize, 50u64);
    let (mut actual, mut predicted) = (0.0, 0.0);
    for seed in 0..runs {
        let mut cfg = ProtocolConfig::around(&truth, 3.0, shots, 200);
        cfg.particles = 2000;
        cfg.gain_particles = 128;
        cfg.seed = seed;
        let trace = run_protocol(&truth, &cfg).unwrap();
        // γ = 1/(2 T2); the delta method moves the T2 posterior onto γ
        let rec = &trace.steps[start - 1];
        let t2 = rec.mean[0];
        let mut gamma = 0.5 / t2;
        let mut s2 = rec.cov[0] / (4.0 * t2.powi(4));
        for step in &trace.steps[start..] {
            for _ in 0..step.shots {
                s2 = lindblad_variance_update(gamma, s2, step.t).unwrap().expected_variance;
            }
            gamma = 0.5 / step.mean[0];
        }
        let last = trace.steps.last().unwrap();
        actual += last.cov[0] / (4.0 * last.mean[0].powi(4));
        predicted += s2;
    }
    let ratio = actual / predicted;
    assert!((ratio - 1.0).abs() < 0.2, "posterior/recursion variance ratio {ratio}");
}
