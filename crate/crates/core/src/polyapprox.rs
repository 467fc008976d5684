//! Polynomial approximation on an interval: Bernstein, iterated Bernstein and
//! minimax (Remez exchange), with sup-norm error and coefficient-sum reports.
//!
//! Polynomials are stored in the power basis of the original variable `x`.
//! The Bernstein-to-power conversion is ill-conditioned, so it is carried out
//! in double-double arithmetic and rounded once at the end.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MAX_BERNSTEIN_DEGREE: usize = 30;
/// Uniform evaluation grid size (endpoints included).
pub const REPORT_GRID: usize = 4097;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(invalid(format!("interval requires a < b, got [{a}, {b}]")));
        }
        Ok(Self { a, b })
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    /// `points` uniformly spaced values, both endpoints included.
    pub fn grid(&self, points: usize) -> impl Iterator<Item = f64> + '_ {
        let step = self.width() / (points - 1) as f64;
        (0..points).map(move |i| {
            if i + 1 == points {
                self.b
            } else {
                self.a + step * i as f64
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    /// `coeffs[k]` multiplies `x^k`.
    pub coeffs: Vec<f64>,
    pub interval: Interval,
}

impl Polynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn coeff_abs_sum(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub max_abs_error: f64,
    pub coeff_abs_sum: f64,
    pub grid_points: usize,
}

// ---------------------------------------------------------------------------
// double-double helpers

#[derive(Debug, Clone, Copy, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    fn from(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = two_sum(s, e);
        Dd { hi, lo }
    }

    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = two_sum(p, e);
        Dd { hi, lo }
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul(Dd::from(-q1)));
        let q2 = r.hi / o.hi;
        let (hi, lo) = two_sum(q1, q2);
        Dd { hi, lo }
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

fn binomial_row(d: usize) -> Vec<f64> {
    let mut row = vec![1.0; d + 1];
    for k in 1..d {
        row[k] = row[k - 1] * (d - k + 1) as f64 / k as f64;
    }
    row.iter().map(|v| v.round()).collect()
}

/// Converts Bernstein control values on `iv` to power-basis coefficients in `x`.
fn bernstein_to_power(samples: &[f64], iv: Interval) -> Vec<f64> {
    let d = samples.len() - 1;
    let binom: Vec<Vec<f64>> = (0..=d).map(binomial_row).collect();
    // coefficients in u = (x - a) / (b - a)
    let mut in_u = vec![Dd::default(); d + 1];
    for (k, slot) in in_u.iter_mut().enumerate() {
        for (i, &s) in samples.iter().enumerate().take(k + 1) {
            let mut w = binom[d][i] * binom[d - i][k - i];
            if (k - i) % 2 == 1 {
                w = -w;
            }
            *slot = slot.add(Dd::from(s).mul(Dd::from(w)));
        }
    }
    // substitute u = alpha x + beta
    let width = Dd::from(iv.b).add(Dd::from(-iv.a));
    let alpha = Dd::from(1.0).div(width);
    let beta = Dd::from(-iv.a).div(width);
    let mut out = vec![Dd::default(); d + 1];
    for (k, &ak) in in_u.iter().enumerate() {
        // (alpha x + beta)^k = Σ_j C(k,j) alpha^j beta^(k-j) x^j
        let mut apow = Dd::from(1.0);
        for j in 0..=k {
            let mut bpow = Dd::from(1.0);
            for _ in 0..k - j {
                bpow = bpow.mul(beta);
            }
            let term = ak.mul(Dd::from(binom[k][j])).mul(apow).mul(bpow);
            out[j] = out[j].add(term);
            apow = apow.mul(alpha);
        }
    }
    out.into_iter().map(Dd::value).collect()
}

fn nodes(d: usize, iv: Interval) -> Vec<f64> {
    (0..=d)
        .map(|i| iv.a + iv.width() * i as f64 / d as f64)
        .collect()
}

fn check_degree(d: usize) -> Result<()> {
    if d == 0 {
        return Err(invalid("Bernstein degree must be at least 1"));
    }
    if d > MAX_BERNSTEIN_DEGREE {
        return Err(invalid(format!(
            "Bernstein degree {d} exceeds the supported maximum {MAX_BERNSTEIN_DEGREE}"
        )));
    }
    Ok(())
}

fn sample<F: Fn(f64) -> f64>(f: &F, xs: &[f64]) -> Result<Vec<f64>> {
    xs.iter()
        .map(|&x| {
            let v = f(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(invalid(format!("function is not finite at x = {x}")))
            }
        })
        .collect()
}

/// Evaluates the Bernstein form with control values `samples` directly
/// (de Casteljau), without going through the power basis.
pub fn bernstein_form_eval(samples: &[f64], iv: Interval, x: f64) -> f64 {
    let u = (x - iv.a) / iv.width();
    let mut b = samples.to_vec();
    for r in 1..b.len() {
        for i in 0..b.len() - r {
            b[i] = b[i] * (1.0 - u) + b[i + 1] * u;
        }
    }
    b[0]
}

/// Degree-`d` Bernstein polynomial of `f` on `iv`.
pub fn bernstein<F: Fn(f64) -> f64>(f: F, d: usize, iv: Interval) -> Result<Polynomial> {
    check_degree(d)?;
    let s = sample(&f, &nodes(d, iv))?;
    Ok(Polynomial {
        coeffs: bernstein_to_power(&s, iv),
        interval: iv,
    })
}

/// Control values of the iterated Bernstein approximant
/// `Q_1 = B f`, `Q_{j+1} = Q_j + B(f - Q_j)`.
///
/// `B g` depends on `g` only through its node values, so every `Q_j` is the
/// Bernstein polynomial of some control vector `c_j` and the recurrence reads
/// `c_{j+1} = c_j + v - M c_j` with `v = f(nodes)` and `M` the matrix that
/// evaluates a Bernstein form at the nodes.
pub fn iterated_bernstein_controls<F: Fn(f64) -> f64>(
    f: F,
    d: usize,
    iters: usize,
    iv: Interval,
) -> Result<Vec<f64>> {
    check_degree(d)?;
    if iters == 0 {
        return Err(invalid("iterated Bernstein needs at least one iteration"));
    }
    let xs = nodes(d, iv);
    let v = sample(&f, &xs)?;
    let mut c = v.clone();
    for _ in 1..iters {
        let mc: Vec<f64> = xs.iter().map(|&x| bernstein_form_eval(&c, iv, x)).collect();
        for i in 0..=d {
            c[i] += v[i] - mc[i];
        }
    }
    Ok(c)
}

pub fn iterated_bernstein<F: Fn(f64) -> f64>(
    f: F,
    d: usize,
    iters: usize,
    iv: Interval,
) -> Result<Polynomial> {
    let c = iterated_bernstein_controls(f, d, iters, iv)?;
    Ok(Polynomial {
        coeffs: bernstein_to_power(&c, iv),
        interval: iv,
    })
}

// ---------------------------------------------------------------------------
// Remez exchange

const REMEZ_MAX_ITERS: usize = 100;
const REMEZ_GRID: usize = 8193;

/// Solves a dense system by Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[r][k] -= factor * a[col][k];
                }
                rhs[r] -= factor * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (rhs[r] - s) / a[r][r];
    }
    Some(x)
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * t + v)
}

/// Maximizes `|g|` on `[lo, hi]` by golden-section search.
fn refine_extremum<G: Fn(f64) -> f64>(g: &G, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut g1, mut g2) = (g(x1).abs(), g(x2).abs());
    for _ in 0..80 {
        if g1 > g2 {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - INV_PHI * (hi - lo);
            g1 = g(x1).abs();
        } else {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + INV_PHI * (hi - lo);
            g2 = g(x2).abs();
        }
    }
    0.5 * (lo + hi)
}

/// Locates one extremum per maximal run of constant error sign and keeps
/// `keep` consecutive alternating ones that include the global maximum.
fn alternating_extrema<G: Fn(f64) -> f64>(err: &G, keep: usize) -> Vec<f64> {
    let grid: Vec<f64> = Interval { a: -1.0, b: 1.0 }.grid(REMEZ_GRID).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| err(t)).collect();
    let mut picks: Vec<usize> = Vec::new();
    let mut run_sign = 0.0f64;
    for (i, &v) in vals.iter().enumerate() {
        let s = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        if s != 0.0 && s != run_sign {
            picks.push(i);
            run_sign = s;
        } else if let Some(last) = picks.last_mut() {
            if v.abs() > vals[*last].abs() && (s == run_sign || s == 0.0) {
                *last = i;
            }
        }
    }
    let mut pts: Vec<f64> = picks
        .iter()
        .map(|&i| {
            let lo = grid[i.saturating_sub(1)];
            let hi = grid[(i + 1).min(grid.len() - 1)];
            let x = refine_extremum(err, lo, hi);
            if err(x).abs() >= vals[i].abs() {
                x
            } else {
                grid[i]
            }
        })
        .collect();
    while pts.len() > keep {
        if err(pts[0]).abs() < err(*pts.last().unwrap()).abs() {
            pts.remove(0);
        } else {
            pts.pop();
        }
    }
    pts
}

/// Expands `p(t)` with `t = (x - mid) / half` into powers of `x`.
fn rescale_to_x(ct: &[f64], mid: f64, half: f64) -> Vec<f64> {
    let n = ct.len();
    let mut out = vec![0.0; n];
    // (x - mid)^k / half^k
    let mut basis = vec![1.0];
    for (k, &c) in ct.iter().enumerate() {
        for (j, &b) in basis.iter().enumerate() {
            out[j] += c * b;
        }
        if k + 1 < n {
            let mut next = vec![0.0; basis.len() + 1];
            for (j, &b) in basis.iter().enumerate() {
                next[j + 1] += b / half;
                next[j] -= b * mid / half;
            }
            basis = next;
        }
    }
    out
}

/// Best uniform approximation of degree `d` by the Remez exchange algorithm.
///
/// Converges when the largest error magnitude over the interval is within
/// `tol` of the levelled error on the `d + 2` reference points.
pub fn remez_minimax<F: Fn(f64) -> f64>(f: F, d: usize, iv: Interval, tol: f64) -> Result<Polynomial> {
    if !(tol > 0.0) {
        return Err(invalid("remez tolerance must be positive"));
    }
    let mid = 0.5 * (iv.a + iv.b);
    let half = 0.5 * iv.width();
    let ft = |t: f64| f(mid + half * t);
    let n = d + 2;
    let mut reference: Vec<f64> = (0..n)
        .map(|i| -(std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..REMEZ_MAX_ITERS {
        let rows: Vec<Vec<f64>> = reference
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut row: Vec<f64> = (0..=d).map(|k| t.powi(k as i32)).collect();
                row.push(if i % 2 == 0 { 1.0 } else { -1.0 });
                row
            })
            .collect();
        let rhs: Vec<f64> = reference.iter().map(|&t| ft(t)).collect();
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(invalid("function is not finite on the reference set"));
        }
        let Some(sol) = solve_dense(rows, rhs) else {
            break;
        };
        let (ct, level) = (sol[..=d].to_vec(), sol[d + 1].abs());
        let err = |t: f64| ft(t) - horner(&ct, t);
        let grid_max = Interval { a: -1.0, b: 1.0 }
            .grid(REMEZ_GRID)
            .map(|t| err(t).abs())
            .fold(0.0, f64::max);
        let extrema = alternating_extrema(&err, n);
        let max_err = extrema.iter().map(|&t| err(t).abs()).fold(grid_max, f64::max);
        if best.as_ref().is_none_or(|(e, _)| max_err < *e) {
            best = Some((max_err, ct.clone()));
        }
        if max_err <= tol || max_err - level <= tol {
            return Ok(Polynomial {
                coeffs: rescale_to_x(&ct, mid, half),
                interval: iv,
            });
        }
        if extrema.len() < n {
            break;
        }
        reference = extrema;
    }
    let (best_error, ct) = best.unwrap_or((f64::INFINITY, vec![0.0; d + 1]));
    Err(Error::NonConvergence {
        iterations: REMEZ_MAX_ITERS,
        best_error,
        best: Box::new(Polynomial {
            coeffs: rescale_to_x(&ct, mid, half),
            interval: iv,
        }),
    })
}

/// Sup-norm error on a uniform grid plus the absolute coefficient sum.
pub fn approx_report<F: Fn(f64) -> f64>(p: &Polynomial, f: F) -> ApproxReport {
    let max_abs_error = p
        .interval
        .grid(REPORT_GRID)
        .map(|x| (p.eval(x) - f(x)).abs())
        .fold(0.0, f64::max);
    ApproxReport {
        max_abs_error,
        coeff_abs_sum: p.coeff_abs_sum(),
        grid_points: REPORT_GRID,
    }
}

/// Sup norm of `f` on a uniform grid.
pub fn grid_sup_norm<F: Fn(f64) -> f64>(f: F, iv: Interval) -> f64 {
    iv.grid(REPORT_GRID).map(|x| f(x).abs()).fold(0.0, f64::max)
}

/// The logistic loss `ln(1 + e^{-x})`, i.e. minus the log-sigmoid.
pub fn logistic_loss(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}
