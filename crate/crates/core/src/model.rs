//! Oscillator nonlinearities of Lambda-Omega type and their bistability structure.
//!
//! Every node of the chain carries the complex rate `f(r, mu, eps) = lambda(r, mu) + i*omega(r, mu, eps)`.
//! The real part is an even polynomial in `r` with an affine dependence on `mu`; the frequency splits as
//! `omega = omega0(mu) + eps*omega1(r) + eps^2*omega2(r)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Positive roots are searched in `(R_SEARCH_MIN, R_SEARCH_MAX)`.
pub const R_SEARCH_MIN: f64 = 1e-8;
pub const R_SEARCH_MAX: f64 = 10.0;
/// Roots closer than this are reported with the near-fold flag.
pub const NEAR_FOLD_GAP: f64 = 1e-6;

const SEARCH_GRID: usize = 4000;

/// Polynomial nonlinearity `f = lambda + i*omega`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub name: String,
    /// Coefficients of `r^0, r^2, r^4, ...` in the `mu`-independent part of `lambda`.
    pub lambda_even: Vec<f64>,
    /// `lambda` contains the term `lambda_mu * mu`.
    pub lambda_mu: f64,
    /// Coefficients of `mu^0, mu^1, ...` of `omega0`.
    pub omega0: Vec<f64>,
    /// Coefficients of `r^0, r^1, ...` of `omega1` (empty means identically zero).
    #[serde(default)]
    pub omega1: Vec<f64>,
    /// Coefficients of `r^0, r^1, ...` of `omega2` (empty means identically zero).
    #[serde(default)]
    pub omega2: Vec<f64>,
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn horner_deriv(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().enumerate().skip(1).rev().fold(0.0, |acc, (i, &c)| acc * x + i as f64 * c)
}

impl NonlinearitySpec {
    /// `lambda = lambda_mu*mu + sum_i c_i r^(2i)`, no frequency dependence.
    pub fn even_polynomial(name: impl Into<String>, lambda_even: Vec<f64>, lambda_mu: f64) -> Self {
        Self { name: name.into(), lambda_even, lambda_mu, omega0: vec![], omega1: vec![], omega2: vec![] }
    }

    pub fn with_omega0(mut self, omega0: Vec<f64>) -> Self {
        self.omega0 = omega0;
        self
    }

    pub fn with_omega1(mut self, omega1: Vec<f64>) -> Self {
        self.omega1 = omega1;
        self
    }

    pub fn with_omega2(mut self, omega2: Vec<f64>) -> Self {
        self.omega2 = omega2;
        self
    }

    pub fn lambda(&self, r: f64, mu: f64) -> f64 {
        self.lambda_mu * mu + horner(&self.lambda_even, r * r)
    }

    /// Partial derivative of `lambda` in `r`.
    pub fn lambda_r(&self, r: f64, _mu: f64) -> f64 {
        2.0 * r * horner_deriv(&self.lambda_even, r * r)
    }

    /// Partial derivative of `lambda` in `mu`.
    pub fn lambda_dmu(&self, _r: f64, _mu: f64) -> f64 {
        self.lambda_mu
    }

    pub fn omega0(&self, mu: f64) -> f64 {
        horner(&self.omega0, mu)
    }

    pub fn omega1(&self, r: f64) -> f64 {
        horner(&self.omega1, r)
    }

    pub fn omega2(&self, r: f64) -> f64 {
        horner(&self.omega2, r)
    }

    pub fn omega(&self, r: f64, mu: f64, eps: f64) -> f64 {
        self.omega0(mu) + eps * self.omega1(r) + eps * eps * self.omega2(r)
    }

    pub fn omega_r(&self, r: f64, _mu: f64, eps: f64) -> f64 {
        eps * horner_deriv(&self.omega1, r) + eps * eps * horner_deriv(&self.omega2, r)
    }

    pub fn omega_dmu(&self, _r: f64, mu: f64, _eps: f64) -> f64 {
        horner_deriv(&self.omega0, mu)
    }

    /// Complex rate `f(r, mu, eps)`.
    pub fn f(&self, r: f64, mu: f64, eps: f64) -> Complex64 {
        Complex64::new(self.lambda(r, mu), self.omega(r, mu, eps))
    }

    /// `d f / d r`.
    pub fn f_r(&self, r: f64, mu: f64, eps: f64) -> Complex64 {
        Complex64::new(self.lambda_r(r, mu), self.omega_r(r, mu, eps))
    }

    /// True when the frequency carries no O(eps) amplitude dependence.
    pub fn omega1_vanishes(&self) -> bool {
        self.omega1.iter().all(|&c| c == 0.0)
    }

    /// Positive roots of `lambda(., mu)` in the search window, ascending.
    ///
    /// The window is split at the critical points of `lambda` so each piece is monotone; a
    /// piece with a sign change holds exactly one root, found by bisection and polished by
    /// Newton. A critical point where `lambda` touches zero counts as a double root.
    pub fn positive_roots(&self, mu: f64) -> Vec<f64> {
        let g = |r: f64| self.lambda(r, mu);
        let dg = |r: f64| self.lambda_r(r, mu);
        let h = (R_SEARCH_MAX - R_SEARCH_MIN) / SEARCH_GRID as f64;
        let grid: Vec<f64> = (0..=SEARCH_GRID).map(|i| R_SEARCH_MIN + i as f64 * h).collect();

        let mut crit = Vec::new();
        for w in grid.windows(2) {
            let (a, b) = (dg(w[0]), dg(w[1]));
            if a == 0.0 {
                crit.push(w[0]);
            } else if a * b < 0.0 {
                crit.push(bisect(&dg, w[0], w[1]));
            }
        }

        let mut knots = vec![R_SEARCH_MIN];
        knots.extend(crit.iter().copied().filter(|&c| c > R_SEARCH_MIN && c < R_SEARCH_MAX));
        knots.push(R_SEARCH_MAX);

        let mut roots = Vec::new();
        let mut piece_has_root = vec![false; knots.len() - 1];
        for (i, w) in knots.windows(2).enumerate() {
            let (ga, gb) = (g(w[0]), g(w[1]));
            if ga * gb < 0.0 {
                let mut x = bisect(&g, w[0], w[1]);
                // one guarded Newton polish
                let d = dg(x);
                if d != 0.0 {
                    let y = x - g(x) / d;
                    if y > w[0] && y < w[1] && g(y).abs() <= g(x).abs() {
                        x = y;
                    }
                }
                roots.push(x);
                piece_has_root[i] = true;
            }
        }
        // tangential roots at interior critical points
        let scale = 1.0 + self.lambda_even.iter().fold(self.lambda_mu.abs() * mu.abs(), |m, c| m.max(c.abs()));
        for (j, &c) in knots.iter().enumerate().skip(1).take(knots.len() - 2) {
            if g(c).abs() <= 1e-13 * scale && !piece_has_root[j - 1] && !piece_has_root[j] {
                roots.push(c);
                roots.push(c);
            }
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots
    }
}

fn bisect(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if (gm < 0.0) == (ga < 0.0) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Looks up one of the built-in nonlinearities.
///
/// * `quintic`: `lambda = -mu + 2 r^2 - r^4`, `omega = 0`.
/// * `quintic_rotating`: same `lambda`, `omega0 = 1`.
/// * `hbm`: real part of the one-harmonic balance model at unit frequency,
///   `lambda = -((12 pi^2 / 8) r^4 - (12 pi^4 / 5) r^2 + 2 mu)`, `omega = 0`.
pub fn builtin_spec(name: &str) -> Result<NonlinearitySpec> {
    match name {
        "quintic" => Ok(NonlinearitySpec::even_polynomial("quintic", vec![0.0, 2.0, -1.0], -1.0)),
        "quintic_rotating" => {
            Ok(NonlinearitySpec::even_polynomial("quintic_rotating", vec![0.0, 2.0, -1.0], -1.0).with_omega0(vec![1.0]))
        }
        "hbm" => {
            let c4 = 12.0 * PI * PI / 8.0;
            let c2 = 12.0 * PI.powi(4) / 5.0;
            Ok(NonlinearitySpec::even_polynomial("hbm", vec![0.0, c2, -c4], -2.0))
        }
        other => Err(Error::UnknownSpec(other.to_string())),
    }
}

/// Names accepted by [`builtin_spec`].
pub const BUILTIN_NAMES: [&str; 3] = ["quintic", "quintic_rotating", "hbm"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BistabilityProfile {
    pub mu: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub lambda_r_minus: f64,
    pub lambda_r_plus: f64,
    pub lambda_at_zero: f64,
    /// The two roots are closer than [`NEAR_FOLD_GAP`].
    pub near_fold: bool,
}

/// The two positive roots `r_-(mu) < r_+(mu)` of `lambda(., mu)`.
///
/// Accepts `mu` in `(0, 1]`; at the fold endpoint the double root is returned with
/// `near_fold` set.
pub fn bistable_roots(spec: &NonlinearitySpec, mu: f64) -> Result<BistabilityProfile> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::MuOutOfRange(mu));
    }
    let roots = spec.positive_roots(mu);
    if roots.len() != 2 {
        return Err(Error::NotBistable { mu, found: roots.len() });
    }
    let (r_minus, r_plus) = (roots[0], roots[1]);
    Ok(BistabilityProfile {
        mu,
        r_minus,
        r_plus,
        lambda_r_minus: spec.lambda_r(r_minus, mu),
        lambda_r_plus: spec.lambda_r(r_plus, mu),
        lambda_at_zero: spec.lambda(0.0, mu),
        near_fold: r_plus - r_minus < NEAR_FOLD_GAP,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridCheck {
    pub mu: f64,
    pub root_count: usize,
    pub stability_ok: bool,
    pub evenness_ok: bool,
    pub max_evenness_defect: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub spec: String,
    pub points: Vec<GridCheck>,
    /// `r_-` increases along the grid (it vanishes at the pitchfork end).
    pub pitchfork_trend: bool,
    /// `r_+ - r_-` decreases along the grid (the roots merge at the fold end).
    pub fold_trend: bool,
    pub admissible: bool,
    pub failures: Vec<String>,
}

fn count_word(n: usize) -> String {
    match n {
        0 => "no positive root".into(),
        1 => "one positive root".into(),
        n => format!("{n} positive roots"),
    }
}

/// Numerical check of the bistability hypotheses on a parameter grid.
pub fn verify_hypotheses(spec: &NonlinearitySpec, mu_grid: &[f64]) -> HypothesisReport {
    let mut failures = Vec::new();
    let mut points = Vec::with_capacity(mu_grid.len());
    let mut profiles = Vec::new();
    if mu_grid.is_empty() {
        failures.push("empty parameter grid".to_string());
    }

    for &mu in mu_grid {
        if !(mu > 0.0 && mu < 1.0) {
            failures.push(format!("mu = {mu}: outside (0, 1)"));
        }
        let roots = spec.positive_roots(mu);
        let root_count = roots.len();
        let mut defect: f64 = 0.0;
        for i in 0..=200 {
            let r = R_SEARCH_MAX * i as f64 / 200.0;
            defect = defect.max((spec.lambda(r, mu) - spec.lambda(-r, mu)).abs());
        }
        let evenness_ok = defect <= 1e-12;
        if !evenness_ok {
            failures.push(format!("mu = {mu}: lambda not even in r (defect {defect:e})"));
        }
        let mut stability_ok = false;
        if root_count == 2 {
            let (rm, rp) = (roots[0], roots[1]);
            stability_ok = spec.lambda(0.0, mu) < 0.0 && spec.lambda_r(rp, mu) < 0.0 && spec.lambda_r(rm, mu) > 0.0;
            if !stability_ok {
                failures.push(format!("mu = {mu}: stability signs violated"));
            }
            profiles.push((mu, rm, rp));
        } else {
            failures.push(format!("mu = {mu}: {}", count_word(root_count)));
        }
        points.push(GridCheck { mu, root_count, stability_ok, evenness_ok, max_evenness_defect: defect });
    }

    let all_two = !mu_grid.is_empty() && profiles.len() == mu_grid.len();
    let mut sorted = profiles.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let pitchfork_trend = all_two && sorted.windows(2).all(|w| w[1].1 > w[0].1);
    let fold_trend = all_two && sorted.windows(2).all(|w| (w[1].2 - w[1].1) < (w[0].2 - w[0].1));
    if all_two && !pitchfork_trend {
        failures.push("r_- does not increase away from the pitchfork".into());
    }
    if all_two && !fold_trend {
        failures.push("r_+ - r_- does not shrink towards the fold".into());
    }
    let admissible = failures.is_empty() && pitchfork_trend && fold_trend;
    HypothesisReport { spec: spec.name.clone(), points, pitchfork_trend, fold_trend, admissible, failures }
}
