//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use mpsynth::bounds::{thm31_bound, thm32_bound, BoundInputs};
use mpsynth::dataset::{encode, simulate_planted, Encoded, Schema};
use mpsynth::eval::{run_experiment, spearman, ExperimentConfig};
use mpsynth::learn::{
    dp_sgd_encoded, dpsgd_sigma_squared, empirical_risk, risk_gradient, sgd_trajectory, train_encoded, DpSgdConfig,
    LossSpec, TrainConfig,
};
use mpsynth::marginals::{compute_marginals, enumerate_queries, max_l1, Marginal};
use mpsynth::polyapprox::{approx_report, bernstein, iterated_bernstein, logistic_loss, remez_minimax, Interval, Polynomial};
use mpsynth::privacy::{calibrate, lemma34_l1_bound, PrivacyParams, SensitivityMode};
use mpsynth::seed;
use mpsynth::synth::{brute_force_search, gen_mechanism1, sample_column, BruteConfig, NoisyMarginalSet, SynthMode, SynthOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

// ---------------------------------------------------------------------------
// 1. Degree-4 approximations of ln(1 + e^{-x}) on [-5, 5]

fn coeffs_match(p: &Polynomial, want: &[f64], tol: f64) -> bool {
    p.coeffs.len() == want.len() && p.coeffs.iter().zip(want).all(|(a, b)| within(*a, *b, tol))
}

fn criterion_1_iterated() -> Outcome {
    let iv = Interval::new(-5.0, 5.0).unwrap();
    let expected: [(usize, [f64; 5], f64); 3] = [
        (1, [1.2377, -0.5, 0.0544, 0.0, -0.0001], 0.545),
        (4, [0.7934, -0.5, 0.0812, 0.0, -0.0005], 0.100),
        (9, [0.7504, -0.5, 0.0931, 0.0, -0.0009], 0.057),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, coeffs, err) in expected {
        let p = iterated_bernstein(logistic_loss, 4, k, iv).unwrap();
        let e = approx_report(&p, logistic_loss).max_abs_error;
        let ok = coeffs_match(&p, &coeffs, 0.005) && p.coeffs[3].abs() <= 0.005 && within(e, err, 0.01);
        pass &= ok;
        detail.push(format!("k={k} err={e:.4}"));
    }
    outcome(pass, detail.join(", "))
}

fn criterion_1_minimax() -> Outcome {
    let iv = Interval::new(-5.0, 5.0).unwrap();
    let p = remez_minimax(logistic_loss, 4, iv, 1e-12).unwrap();
    let e = approx_report(&p, logistic_loss).max_abs_error;
    let coeffs_ok = coeffs_match(&p, &[0.71, -0.5, 0.1096, 0.0, -0.0015], 0.01);
    let err_ok = within(e, 0.061, 0.01);
    let bern9 = approx_report(&iterated_bernstein(logistic_loss, 4, 9, iv).unwrap(), logistic_loss).max_abs_error;
    outcome(
        coeffs_ok && err_ok,
        format!(
            "coefficients {} (a2={:.4}), minimax error {e:.4} vs expected 0.061 +- 0.01 (9x iterated Bernstein {bern9:.4})",
            if coeffs_ok { "match" } else { "differ" },
            p.coeffs[2]
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Bernstein error and coefficient certificates

/// Piecewise-linear function through `knots` (sorted by abscissa).
fn pl_eval(knots: &[(f64, f64)], x: f64) -> f64 {
    let i = knots.partition_point(|k| k.0 <= x).clamp(1, knots.len() - 1);
    let (a, b) = (knots[i - 1], knots[i]);
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

/// Exact modulus of continuity of a piecewise-linear function: the window
/// oscillation is maximal when a window edge sits on a knot or the boundary.
fn pl_modulus(knots: &[(f64, f64)], h: f64) -> f64 {
    let (a, b) = (knots[0].0, knots[knots.len() - 1].0);
    if h >= b - a {
        let vals: Vec<f64> = knots.iter().map(|k| k.1).collect();
        return vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
    }
    let mut starts = vec![a, b - h];
    for k in knots {
        starts.push(k.0);
        starts.push(k.0 - h);
    }
    let mut best = 0.0f64;
    for s in starts {
        let s = s.clamp(a, b - h);
        let mut vals = vec![pl_eval(knots, s), pl_eval(knots, s + h)];
        vals.extend(knots.iter().filter(|k| k.0 > s && k.0 < s + h).map(|k| k.1));
        let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
        let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
        best = best.max(hi - lo);
    }
    best
}

fn criterion_2() -> Outcome {
    let mut rng = seed::rng(2024);
    let mut worst_err_ratio = 0.0f64;
    let mut worst_coef_ratio = 0.0f64;
    for _ in 0..100 {
        let a = rng.random_range(-3.0..=0.0);
        let b = rng.random_range(1.0..=4.0);
        let pieces = rng.random_range(1..10);
        let slope_cap = rng.random_range(0.1..5.0);
        let mut xs: Vec<f64> = (0..pieces - 1).map(|_| rng.random_range(a..b)).collect();
        xs.push(a);
        xs.push(b);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut knots = vec![(xs[0], rng.random_range(-2.0..2.0))];
        for w in xs.windows(2) {
            let prev = knots.last().unwrap().1;
            knots.push((w[1], prev + rng.random_range(-slope_cap..slope_cap) * (w[1] - w[0])));
        }
        let d = rng.random_range(1..=30);
        let iv = Interval::new(a, b).unwrap();
        let f = |x: f64| pl_eval(&knots, x);
        let p = bernstein(f, d, iv).unwrap();
        let err = approx_report(&p, f).max_abs_error;
        let err_bound = 1.25 * pl_modulus(&knots, (b - a) / (d as f64).sqrt());
        let sup = knots.iter().map(|k| k.1.abs()).fold(0.0, f64::max);
        let coef_bound = sup * (1.0 + 2.0 / (b - a)).powi(d as i32);
        worst_err_ratio = worst_err_ratio.max(err / err_bound);
        worst_coef_ratio = worst_coef_ratio.max(p.coeff_abs_sum() / coef_bound);
    }
    outcome(
        worst_err_ratio <= 1.0 && worst_coef_ratio <= 1.0,
        format!("worst error/bound {worst_err_ratio:.3}, worst coefficient-sum/bound {worst_coef_ratio:.3}"),
    )
}

// ---------------------------------------------------------------------------
// 3. Exact generator against exhaustive enumeration

/// Every count vector over `cells` cells summing to `n`.
fn compositions(cells: usize, n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == cells - 1 {
        prefix.push(n);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for k in 0..=n {
        prefix.push(k);
        compositions(cells, n - k, prefix, out);
        prefix.pop();
    }
}

/// Independent objective: builds the dataset row by row and recounts.
fn oracle_objective(schema: &Schema, counts: &[usize], noisy: &[Marginal]) -> f64 {
    let sizes = schema.domain_sizes();
    let mut rows = Vec::new();
    for (cell, &c) in counts.iter().enumerate() {
        let mut row = vec![0u32; sizes.len()];
        let mut rest = cell;
        for j in (0..sizes.len()).rev() {
            row[j] = (rest % sizes[j]) as u32;
            rest /= sizes[j];
        }
        rows.extend(std::iter::repeat_n(row, c));
    }
    let mut worst = 0.0f64;
    for m in noisy {
        let attrs = m.query.attrs();
        let mut hist = vec![0.0; m.counts.len()];
        for r in &rows {
            let idx = attrs.iter().fold(0, |acc, &a| acc * sizes[a] + r[a] as usize);
            hist[idx] += 1.0;
        }
        worst = worst.max(hist.iter().zip(&m.counts).map(|(a, b)| (a - b).abs()).sum());
    }
    worst
}

fn criterion_3() -> Outcome {
    let schema = Schema::from_domains(&[2, 2]).unwrap();
    let queries = enumerate_queries(schema.width(), 2).unwrap();
    let results: Vec<(f64, f64, bool)> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng(seed::derive(3, s, 0));
            let n = rng.random_range(1..=6);
            let real = simulate_planted(&[2, 2], n, &[1.0, -0.5], 0.3, s).unwrap();
            let cal = calibrate(2, 2, &PrivacyParams::new(1.0, 1e-3, 3.0).unwrap(), SensitivityMode::Exact).unwrap();
            let noisy = mpsynth::privacy::add_noise_all(&compute_marginals(&real, &queries).unwrap(), cal.sigma, s).unwrap();
            let nm = NoisyMarginalSet::new(schema.clone(), noisy.clone(), cal.sigma, s).unwrap();
            let got = brute_force_search(n, &nm, &BruteConfig::default()).unwrap();
            let mut all = Vec::new();
            compositions(8, n, &mut Vec::new(), &mut all);
            let objs: Vec<f64> = all.iter().map(|c| oracle_objective(&schema, c, &noisy)).collect();
            let best = objs.iter().cloned().fold(f64::INFINITY, f64::min);
            // ties go to the lexicographically largest count vector
            let lex = all
                .iter()
                .zip(&objs)
                .filter(|(_, &o)| o <= best + 1e-7 * best.max(1.0))
                .map(|(c, _)| c)
                .max()
                .unwrap();
            let counts: Vec<usize> = got.counts.iter().map(|&c| c as usize).collect();
            (got.objective, best, &counts == lex)
        })
        .collect();
    let mismatches = results.iter().filter(|(g, b, _)| (g - b).abs() > 1e-9 * b.max(1.0)).count();
    let tie_breaks = results.iter().filter(|r| r.2).count();
    outcome(
        mismatches == 0 && tie_breaks == 50,
        format!("{} of 50 optima and {tie_breaks} of 50 tie-breaks matched the exhaustive oracle", 50 - mismatches),
    )
}

// ---------------------------------------------------------------------------
// 4. High-probability l1 deviation of brute-force synthetic marginals

/// Smallest `k` with `P(Binomial(trials, p) <= k) >= q`.
fn binomial_quantile(trials: usize, p: f64, q: f64) -> usize {
    let mut pmf = (1.0 - p).powi(trials as i32);
    let mut cdf = pmf;
    let mut k = 0;
    while cdf < q && k < trials {
        pmf *= (trials - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
        k += 1;
        cdf += pmf;
    }
    k
}

const COVERAGE_EPSILONS: [f64; 4] = [8.0, 16.0, 32.0, 64.0];

fn criterion_4() -> Outcome {
    let (m, n, d, lambda) = (3, 50, 2, 3.0);
    let runs = 500;
    let opts = SynthOptions { mode: SynthMode::Brute, ..SynthOptions::default() };
    let queries = enumerate_queries(m + 1, d).unwrap();
    let violations: Vec<bool> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive(4, i as u64, 0);
            let eps = COVERAGE_EPSILONS[i % COVERAGE_EPSILONS.len()];
            let privacy = PrivacyParams::new(eps.min(1.0), 1.0 / (n * n) as f64, lambda).unwrap();
            let privacy = PrivacyParams { epsilon: eps, ..privacy.with_large_epsilon() };
            let real = simulate_planted(&[2, 2, 2], n, &[1.0, -1.0, 0.5], 0.3, s).unwrap();
            let (synthetic, report) = gen_mechanism1(&real, d, &privacy, &opts, s).unwrap();
            let dev = max_l1(&compute_marginals(&real, &queries).unwrap(), &compute_marginals(&synthetic, &queries).unwrap()).unwrap();
            dev > lemma34_l1_bound(report.sigma, d, m, 2, lambda)
        })
        .collect();
    let bad = violations.iter().filter(|&&v| v).count();
    let limit = binomial_quantile(runs, 2f64.powf(-lambda), 0.99);
    outcome(
        bad <= limit,
        format!("{bad}/{runs} violations (limit {limit}, epsilon grid {COVERAGE_EPSILONS:?})"),
    )
}

// ---------------------------------------------------------------------------
// 5. Measured excess risk against the explicit bounds

fn criterion_5() -> Outcome {
    let (m, n) = (3, 200);
    let tau = 1.0 / (m as f64).sqrt();
    let gamma = 0.5;
    let phi = LossSpec::phi_gamma(gamma).unwrap();
    let logistic = LossSpec::logistic();
    let opts = SynthOptions { mode: SynthMode::Brute, ..SynthOptions::default() };
    let cfg = TrainConfig::default();
    let results: Vec<(f64, f64, f64, f64)> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let d = 2 + (i % 2) as usize;
            let s = seed::derive(5, i, 0);
            let real = simulate_planted(&[2, 2, 2], n, &[1.0, -1.0, 0.5], 0.3, s).unwrap();
            let privacy = PrivacyParams::new(1.0, 1e-5, 3.0).unwrap();
            let (synthetic, _) = gen_mechanism1(&real, d, &privacy, &opts, s).unwrap();
            let queries = enumerate_queries(m + 1, d).unwrap();
            let nu = max_l1(&compute_marginals(&real, &queries).unwrap(), &compute_marginals(&synthetic, &queries).unwrap()).unwrap();
            let (re, se) = (encode(&real), encode(&synthetic));
            let excess = |loss: &LossSpec| {
                let wr = train_encoded(&re, real.schema(), loss, tau, &cfg).unwrap().model;
                let ws = train_encoded(&se, synthetic.schema(), loss, tau, &cfg).unwrap().model;
                (empirical_risk(loss, &ws.w, &re).unwrap() - empirical_risk(loss, &wr.w, &re).unwrap()).abs()
            };
            let inputs = BoundInputs { k: phi.lipschitz_k, phi0: phi.value_at_zero, ..BoundInputs::new(n, m, d, tau, nu) };
            (
                excess(&phi),
                thm31_bound(&inputs).unwrap().total,
                excess(&logistic),
                thm32_bound(&BoundInputs::new(n, m, d, tau, nu)).unwrap().total,
            )
        })
        .collect();
    let phi_ok = results.iter().filter(|r| r.0 <= r.1).count();
    let log_ok = results.iter().filter(|r| r.2 <= r.3).count();
    let worst = results.iter().map(|r| (r.0 / r.1).max(r.2 / r.3)).fold(0.0, f64::max);
    outcome(
        phi_ok == 200 && log_ok == 200,
        format!("phi_gamma {phi_ok}/200, logistic {log_ok}/200 within bound (largest excess/bound {worst:.2e})"),
    )
}

// ---------------------------------------------------------------------------
// 6. Error trends over the privacy budget

fn criterion_6() -> Outcome {
    let cfg: ExperimentConfig = toml::from_str(
        r#"
        epsilons = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]
        repeats = 10
        d = 2
        mode = "fitted"
        allow_large_epsilon = true
        seed = 6
        [data.simulate]
        domains = [3, 3, 2, 2]
        n = 2000
        weights = [1.5, -1.0, 0.8, 0.5]
        coupling = 0.4
        seed = 6
        "#,
    )
    .unwrap();
    let out = run_experiment(&cfg, Path::new(".")).unwrap();
    if !out.all_ok() {
        return outcome(false, "some runs failed");
    }
    let eps: Vec<f64> = out.aggregates.iter().map(|a| a.epsilon).collect();
    let l1: Vec<f64> = out.aggregates.iter().map(|a| a.normalized_l1_mean_mean).collect();
    let risk: Vec<f64> = out.aggregates.iter().map(|a| a.excess_empirical_risk_mean).collect();
    let (r1, r2) = (spearman(&eps, &l1).unwrap(), spearman(&eps, &risk).unwrap());
    outcome(
        r1 <= -0.7 && r2 <= -0.7,
        format!("spearman(eps, l1) = {r1:.3}, spearman(eps, excess risk) = {r2:.3}"),
    )
}

// ---------------------------------------------------------------------------
// 7. Solver correctness

fn random_encoded(rng: &mut seed::Rng, n: usize, m: usize) -> Encoded {
    Encoded {
        x: (0..n * m).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        y: (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect(),
        m,
    }
}

fn criterion_7() -> Outcome {
    let mut rng = seed::rng(7);
    let spec = LossSpec::logistic();
    let mut worst_rel = 0.0f64;
    for _ in 0..50 {
        let m = rng.random_range(1..=6);
        let n = rng.random_range(1..=50);
        let data = random_encoded(&mut rng, n, m);
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = risk_gradient(&spec, &w, &data).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..m)
            .map(|j| {
                let (mut a, mut b) = (w.clone(), w.clone());
                a[j] += h;
                b[j] -= h;
                (empirical_risk(&spec, &a, &data).unwrap() - empirical_risk(&spec, &b, &data).unwrap()) / (2.0 * h)
            })
            .collect();
        let diff: f64 = fd.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_rel = worst_rel.max(diff / scale);
    }
    let ds = simulate_planted(&[5], 120, &[1.5], 0.0, 7).unwrap();
    let data = encode(&ds);
    let mut worst_gap = 0.0f64;
    for tau in [0.2, 0.7, 2.0] {
        let got = train_encoded(&data, ds.schema(), &spec, tau, &TrainConfig::default()).unwrap().objective;
        let steps = (2.0 * tau / 1e-4).round() as i64;
        let oracle = (0..=steps)
            .map(|i| empirical_risk(&spec, &[-tau + i as f64 * 1e-4], &data).unwrap())
            .fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.max((got - oracle).abs());
    }
    outcome(
        worst_rel <= 1e-6 && worst_gap <= 1e-4,
        format!("worst gradient relative error {worst_rel:.2e}, worst oracle gap {worst_gap:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 8. Sampler conservation

fn criterion_8() -> Outcome {
    let mut rng = seed::rng(8);
    let mut bad = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..20);
        let mu: Vec<f64> = (0..k)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..50.0) })
            .collect();
        if mu.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        let n = rng.random_range(1..500);
        let out = sample_column(&mu, n, &mut rng).unwrap();
        let total: f64 = mu.iter().sum();
        let mut counts = vec![0usize; k];
        for v in &out {
            counts[*v as usize] += 1;
        }
        let ok = out.len() == n
            && counts.iter().zip(&mu).all(|(&c, &w)| {
                let t = w * n as f64 / total;
                c as f64 >= t.floor() - 1e-9 && c as f64 <= t.ceil() + 1e-9
            });
        bad += (!ok) as usize;
    }
    outcome(bad == 0, format!("{} of 1000 inputs conserved", 1000 - bad))
}

// ---------------------------------------------------------------------------
// 9. DP-SGD noise scale and zero-noise trajectory

fn criterion_9() -> Outcome {
    let mut rng = seed::rng(9);
    let mut worst_ulps = 0.0f64;
    for _ in 0..20 {
        let l = rng.random_range(0.1..5.0);
        let t = rng.random_range(1..10_000);
        let n = rng.random_range(10..100_000);
        let eps = rng.random_range(0.05..8.0);
        let delta = 10f64.powf(-rng.random_range(2.0..12.0));
        let got = dpsgd_sigma_squared(l, t, n, eps, delta);
        // evaluated in a different order: (4 L / (n ε))² · T · (-ln δ)
        let q = 4.0 * l / (n as f64 * eps);
        let want = q * q * t as f64 * -delta.ln();
        worst_ulps = worst_ulps.max((got - want).abs() / (want * f64::EPSILON));
    }
    let ds = simulate_planted(&[3, 2, 2], 150, &[1.0, -0.5, 0.8], 0.3, 9).unwrap();
    let data = encode(&ds);
    let cfg = DpSgdConfig {
        iterations: 200,
        batch_size: 16,
        learning_rate: 0.3,
        clip_norm: f64::INFINITY,
        lipschitz: 1.0,
        epsilon: 1.0,
        delta: 1e-5,
        zero_noise: true,
    };
    let dp = dp_sgd_encoded(&data, ds.schema(), &LossSpec::logistic(), &cfg, 99, true).unwrap();
    let plain = sgd_trajectory(&data, &LossSpec::logistic(), 200, 16, 0.3, 99).unwrap();
    let identical = dp.trajectory == plain;
    outcome(
        worst_ulps <= 8.0 && identical,
        format!("worst sigma^2 deviation {worst_ulps:.1} ulp, zero-noise trajectory identical: {identical}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1a iterated Bernstein coefficients and errors", criterion_1_iterated, Duration::from_secs(10)),
        ("1b minimax approximation", criterion_1_minimax, Duration::from_secs(10)),
        ("2 Bernstein certificates", criterion_2, Duration::from_secs(30)),
        ("3 exact generator vs exhaustive oracle", criterion_3, Duration::from_secs(60)),
        ("4 l1 deviation coverage", criterion_4, Duration::from_secs(300)),
        ("5 excess risk within bounds", criterion_5, Duration::from_secs(600)),
        ("6 epsilon trends", criterion_6, Duration::from_secs(900)),
        ("7 solver correctness", criterion_7, Duration::from_secs(60)),
        ("8 sampler conservation", criterion_8, Duration::from_secs(10)),
        ("9 DP-SGD noise and trajectory", criterion_9, Duration::from_secs(30)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, budget) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= budget;
        failed += (!pass) as usize;
        println!(
            "{} criterion {name}: {} [{:.1}s / {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criterion check(s) failed");
        std::process::exit(1);
    }
}
