//! Pseudo-arclength continuation in `mu` with fold refinement and isola closure.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::ops::AddAssign;

use crate::error::{Error, Result};
use crate::lattice::{state_distance, wrap_angle, LatticeSystem, PolarState};
use crate::linalg::{null_vector_bordered, null_vector_svd, solve_equilibrated};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationConfig {
    pub ds_init: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    /// Max-norm residual tolerance.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub max_steps: usize,
    pub mu_window: (f64, f64),
    pub closure_tol: f64,
    /// Bound on the tangent's `mu`-component at a refined fold.
    pub fold_refine_tol: f64,
    pub step_growth: f64,
    /// Largest accepted angle (radians) between consecutive tangents.
    pub max_turn: f64,
    /// Stop once every amplitude is below this value.
    pub amp_floor: Option<f64>,
    /// Stop once the pattern is in phase with amplitude spread below this value.
    pub uniform_tol: Option<f64>,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            ds_init: 0.01,
            ds_min: 1e-8,
            ds_max: 0.05,
            newton_tol: 1e-10,
            newton_max_iter: 12,
            max_steps: 20000,
            mu_window: (-0.05, 1.05),
            closure_tol: 1e-6,
            fold_refine_tol: 1e-10,
            step_growth: 1.3,
            max_turn: 0.5,
            amp_floor: Some(0.1),
            uniform_tol: Some(0.02),
        }
    }
}

impl ContinuationConfig {
    /// Defaults with `ds_max` capped at `eps^(2/3)`, the width of the recruitment folds near
    /// `mu = 0`. Larger steps can pass over those folds once `eps` is well below `1e-2`.
    pub fn for_eps(eps: f64) -> Self {
        let d = Self::default();
        let ds_max = d.ds_max.min(eps.powf(2.0 / 3.0)).max(d.ds_min);
        Self { ds_max, ds_init: d.ds_init.min(ds_max), max_steps: d.max_steps.max((20.0 / ds_max) as usize), ..d }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0 < self.ds_min && self.ds_min <= self.ds_init && self.ds_init <= self.ds_max) {
            return bad("need 0 < ds_min <= ds_init <= ds_max");
        }
        if !(self.newton_tol > 0.0 && self.closure_tol > 0.0 && self.fold_refine_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter must be positive");
        }
        if !(self.mu_window.0 < self.mu_window.1) {
            return bad("mu_window must be an increasing pair");
        }
        if !(self.step_growth >= 1.0) {
            return bad("step_growth must be at least 1");
        }
        if !(self.max_turn > 0.0) {
            return bad("max_turn must be positive");
        }
        if self.amp_floor.is_some_and(|a| !(a >= 0.0)) || self.uniform_tol.is_some_and(|u| !(u >= 0.0)) {
            return bad("amp_floor and uniform_tol must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    ClosedIsola,
    Open,
    WindowExit,
    StepLimit,
}

impl std::fmt::Display for Closure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Closure::ClosedIsola => "closed_isola",
            Closure::Open => "open",
            Closure::WindowExit => "window_exit",
            Closure::StepLimit => "step_limit",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub state: PolarState,
    pub arclength: f64,
    pub tangent: Vec<f64>,
    pub is_fold: bool,
    pub newton_iters: usize,
}

impl BranchPoint {
    pub fn tangent_mu(&self) -> f64 {
        *self.tangent.last().unwrap_or(&0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub mu: f64,
    pub arclength: f64,
    /// Index into `Branch::points`, when the fold is stored there.
    pub index: Option<usize>,
    pub refined: bool,
    pub state: PolarState,
}

/// Why one direction of a run stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Termination {
    pub direction: i32,
    pub closure: Closure,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub folds: Vec<FoldRecord>,
    pub closure: Closure,
    pub terminations: Vec<Termination>,
    pub provenance: Provenance,
}

impl Branch {
    pub fn arclength(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.arclength - a.arclength,
            _ => 0.0,
        }
    }

    pub fn mu_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.state.mu), hi.max(p.state.mu)))
    }

    pub fn fold_mus(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.mu).collect()
    }

    pub fn with_seed_descriptor(mut self, seed: impl Into<String>) -> Self {
        self.provenance.seed = seed.into();
        self
    }
}

/// Hex SHA-256 of the JSON encoding of the run inputs.
pub fn config_hash(system: &LatticeSystem, config: &ContinuationConfig, seed: &PolarState) -> String {
    let json = serde_json::to_vec(&(system, config, seed)).unwrap_or_default();
    hex::encode(Sha256::digest(&json))
}

pub enum NewtonMode<'a> {
    FixedMu,
    /// Pseudo-arclength condition `<x - prev, tangent> = ds` in `(r, phi, rho, mu)`.
    Bordered {
        prev: &'a PolarState,
        tangent: &'a [f64],
        ds: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corrected {
    pub state: PolarState,
    pub iters: usize,
    pub residual: f64,
}

fn to_x(s: &PolarState) -> DVector<f64> {
    DVector::from_vec(s.to_vector())
}

fn from_x(n: usize, x: &DVector<f64>) -> PolarState {
    PolarState {
        r: x.rows(0, n).iter().copied().collect(),
        phi: x.rows(n, n - 1).iter().copied().collect(),
        rho: x[2 * n - 1],
        mu: x[2 * n],
    }
}

/// `a - b` with phase differences compared modulo `2 pi`.
fn delta(n: usize, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut d = a - b;
    for i in n..2 * n - 1 {
        d[i] = wrap_angle(d[i]);
    }
    d
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

pub fn max_residual(system: &LatticeSystem, state: &PolarState) -> Result<f64> {
    Ok(amax(&system.residual(state)?))
}

fn correct_raw(
    system: &LatticeSystem,
    start: &PolarState,
    mode: &NewtonMode<'_>,
    tol: f64,
    max_iter: usize,
) -> Result<Corrected> {
    let n = start.nodes();
    let mut x = start.clone();
    x.wrap_phases();
    let mut last = f64::INFINITY;
    for it in 0..=max_iter {
        let f = system.residual(&x)?;
        let mut res = amax(&f);
        let mut g = 0.0;
        if let NewtonMode::Bordered { prev, tangent, ds } = mode {
            let d = delta(n, &to_x(&x), &to_x(prev));
            g = d.iter().zip(tangent.iter()).map(|(a, b)| a * b).sum::<f64>() - ds;
            res = res.max(g.abs());
        }
        if !res.is_finite() {
            break;
        }
        last = res;
        if res <= tol {
            return Ok(Corrected { state: x, iters: it, residual: res });
        }
        if it == max_iter {
            break;
        }
        let j = system.jacobian(&x)?;
        let mut xv = to_x(&x);
        match mode {
            NewtonMode::FixedMu => {
                let a = j.columns(0, 2 * n).into_owned();
                let b = -DVector::from_vec(f);
                let dx = solve_equilibrated(a, b)?;
                xv.rows_mut(0, 2 * n).add_assign(&dx);
            }
            NewtonMode::Bordered { tangent, .. } => {
                let mut a = j.insert_row(2 * n, 0.0);
                for (c, t) in tangent.iter().enumerate() {
                    a[(2 * n, c)] = *t;
                }
                let mut b = -DVector::from_vec(f).insert_row(2 * n, 0.0);
                b[2 * n] = -g;
                xv += solve_equilibrated(a, b)?;
            }
        }
        x = from_x(n, &xv);
        x.wrap_phases();
    }
    Err(Error::NoConvergence { iters: max_iter, residual: last })
}

/// Newton correction in fixed-`mu` or bordered pseudo-arclength mode.
///
/// Converged states are returned with non-negative amplitudes.
pub fn newton_correct(
    system: &LatticeSystem,
    state: &PolarState,
    mode: NewtonMode<'_>,
    config: &ContinuationConfig,
) -> Result<Corrected> {
    if let NewtonMode::Bordered { prev, tangent, .. } = &mode {
        if prev.nodes() != state.nodes() || tangent.len() != 2 * state.nodes() + 1 {
            return Err(Error::Dimension("bordered correction needs matching state and tangent".into()));
        }
    }
    state.validate()?;
    let mut c = correct_raw(system, state, &mode, config.newton_tol, config.newton_max_iter)?;
    c.state.canonicalize();
    Ok(c)
}

fn tangent_at(system: &LatticeSystem, state: &PolarState, reference: &DVector<f64>) -> Result<DVector<f64>> {
    null_vector_bordered(&system.jacobian(state)?, reference)
}

/// Canonicalizes a state and flips the amplitude components of its tangent to match.
fn canonical_point(mut state: PolarState, mut tangent: DVector<f64>) -> (PolarState, DVector<f64>) {
    for i in state.canonicalize() {
        tangent[i] = -tangent[i];
    }
    (state, tangent)
}

struct FoldHit {
    state: PolarState,
    tangent: DVector<f64>,
    s: f64,
    iters: usize,
}

/// Locates the zero of the tangent `mu`-component on the arclength interval `(0, ds)` from `a`.
fn refine_fold(
    system: &LatticeSystem,
    a: &PolarState,
    t_a: &DVector<f64>,
    ds: f64,
    g_hi_init: f64,
    config: &ContinuationConfig,
) -> Result<FoldHit> {
    let n = a.nodes();
    let xa = to_x(a);
    let ta: Vec<f64> = t_a.iter().copied().collect();
    let eval = |s: f64| -> Result<FoldHit> {
        let pred = from_x(n, &(&xa + t_a * s));
        let c = correct_raw(
            system,
            &pred,
            &NewtonMode::Bordered { prev: a, tangent: &ta, ds: s },
            config.newton_tol,
            config.newton_max_iter,
        )?;
        let t = tangent_at(system, &c.state, t_a)?;
        Ok(FoldHit { state: c.state, tangent: t, s, iters: c.iters })
    };
    let (mut lo, mut g_lo) = (0.0, t_a[2 * n]);
    let (mut hi, mut g_hi) = (ds, g_hi_init);
    let mut side = 0;
    for _ in 0..80 {
        let mut s = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        let hit = eval(s)?;
        let g = hit.tangent[2 * n];
        if g.abs() <= config.fold_refine_tol {
            return Ok(hit);
        }
        if g.signum() == g_hi.signum() {
            hi = s;
            g_hi = g;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        } else {
            lo = s;
            g_lo = g;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        }
        if hi - lo <= 1e-15 * ds.max(1.0) {
            break;
        }
    }
    Err(Error::NoConvergence { iters: 80, residual: f64::NAN })
}

fn in_phase_uniform(state: &PolarState, tol: f64) -> bool {
    let (lo, hi) = state.r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    hi - lo < tol && lo > 0.5 && state.phi.iter().all(|p| p.abs() < 0.1)
}

/// Traces one direction of the branch through `seed`.
///
/// `direction` orients the first tangent by the sign of its `mu`-component.
pub fn continue_branch(
    system: &LatticeSystem,
    seed: &PolarState,
    direction: i32,
    config: &ContinuationConfig,
) -> Result<Branch> {
    config.validate()?;
    if direction != 1 && direction != -1 {
        return Err(Error::InvalidArgument(format!("direction must be +1 or -1, got {direction}")));
    }
    seed.validate()?;
    let seed_res = max_residual(system, seed)?;
    if !(seed_res <= config.newton_tol) {
        return Err(Error::SeedNotConverged(seed_res));
    }
    let n = seed.nodes();
    let imu = 2 * n;
    let mut t = null_vector_svd(&system.jacobian(seed)?)?;
    if t[imu] * f64::from(direction) < 0.0 {
        t = -t;
    }
    let (seed_c, t0) = canonical_point(seed.clone(), t);
    let x0 = to_x(&seed_c);
    let mut points = vec![BranchPoint {
        state: seed_c.clone(),
        arclength: 0.0,
        tangent: t0.iter().copied().collect(),
        is_fold: false,
        newton_iters: 0,
    }];
    let mut t = t0;
    let mut mu_sign = if t[imu] != 0.0 { t[imu].signum() } else { direction as f64 };
    let mut ds = config.ds_init;
    let cos_turn = config.max_turn.cos();
    let closure_after = 10.0 * config.ds_init;
    let mut folds = Vec::new();

    let (closure, note) = 'run: loop {
        if points.len() > config.max_steps {
            break (Closure::StepLimit, format!("reached {} steps", config.max_steps));
        }
        let cur = points.last().unwrap().clone();
        let xc = to_x(&cur.state);
        let tv: Vec<f64> = t.iter().copied().collect();

        if cur.arclength > closure_after {
            let d = delta(n, &x0, &xc);
            let proj = d.dot(&t);
            let perp = (&d - &t * proj).norm();
            if proj > 0.0 && d.norm() <= 1.5 * ds && perp <= 0.5 * proj {
                let pred = from_x(n, &(&xc + &t * proj));
                let mode = NewtonMode::Bordered { prev: &cur.state, tangent: &tv, ds: proj };
                if let Ok(c) = correct_raw(system, &pred, &mode, config.newton_tol, config.newton_max_iter) {
                    let mut s = c.state.clone();
                    s.canonicalize();
                    if state_distance(&s, &seed_c) < config.closure_tol {
                        let tn = tangent_at(system, &c.state, &t).unwrap_or_else(|_| t.clone());
                        let (s, tn) = canonical_point(c.state, tn);
                        points.push(BranchPoint {
                            state: s,
                            arclength: cur.arclength + proj,
                            tangent: tn.iter().copied().collect(),
                            is_fold: false,
                            newton_iters: c.iters,
                        });
                        break 'run (Closure::ClosedIsola, "returned to the seed".into());
                    }
                }
            }
        }

        let pred = from_x(n, &(&xc + &t * ds));
        let mode = NewtonMode::Bordered { prev: &cur.state, tangent: &tv, ds };
        let corrected = match correct_raw(system, &pred, &mode, config.newton_tol, config.newton_max_iter) {
            Ok(c) => c,
            Err(Error::NoConvergence { .. }) | Err(Error::SingularJacobian) => {
                ds *= 0.5;
                if ds < config.ds_min {
                    break (Closure::Open, format!("corrector failed below ds_min at mu = {}", cur.state.mu));
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let xn = to_x(&corrected.state);
        let t_new = match tangent_at(system, &corrected.state, &t) {
            Ok(v) => v,
            Err(_) => {
                let sec = delta(n, &xn, &xc);
                let nrm = sec.norm();
                if nrm > 0.0 {
                    sec / nrm
                } else {
                    ds *= 0.5;
                    if ds < config.ds_min {
                        break (Closure::Open, format!("singular Jacobian at mu = {}", cur.state.mu));
                    }
                    continue;
                }
            }
        };
        if t_new.dot(&t) < cos_turn && ds * 0.5 >= config.ds_min {
            ds *= 0.5;
            continue;
        }

        if t_new[imu] * mu_sign < 0.0 {
            match refine_fold(system, &cur.state, &t, ds, t_new[imu], config) {
                Ok(hit) => {
                    let (s, tf) = canonical_point(hit.state, hit.tangent);
                    folds.push(FoldRecord {
                        mu: s.mu,
                        arclength: cur.arclength + hit.s,
                        index: Some(points.len()),
                        refined: true,
                        state: s.clone(),
                    });
                    points.push(BranchPoint {
                        state: s,
                        arclength: cur.arclength + hit.s,
                        tangent: tf.iter().copied().collect(),
                        is_fold: true,
                        newton_iters: hit.iters,
                    });
                    t = tf;
                    mu_sign = -mu_sign;
                    continue;
                }
                Err(_) => {
                    let (s, tn) = canonical_point(corrected.state, t_new);
                    folds.push(FoldRecord {
                        mu: s.mu,
                        arclength: cur.arclength + ds,
                        index: Some(points.len()),
                        refined: false,
                        state: s.clone(),
                    });
                    points.push(BranchPoint {
                        state: s,
                        arclength: cur.arclength + ds,
                        tangent: tn.iter().copied().collect(),
                        is_fold: true,
                        newton_iters: corrected.iters,
                    });
                    t = tn;
                    mu_sign = -mu_sign;
                    continue;
                }
            }
        }

        let (s, tn) = canonical_point(corrected.state, t_new);
        points.push(BranchPoint {
            state: s.clone(),
            arclength: cur.arclength + ds,
            tangent: tn.iter().copied().collect(),
            is_fold: false,
            newton_iters: corrected.iters,
        });
        t = tn;
        if s.mu < config.mu_window.0 || s.mu > config.mu_window.1 {
            break (Closure::WindowExit, format!("mu = {} left the window", s.mu));
        }
        if config.amp_floor.is_some_and(|a| s.max_amplitude() < a) {
            break (Closure::WindowExit, format!("amplitudes fell below the floor at mu = {}", s.mu));
        }
        if config.uniform_tol.is_some_and(|u| in_phase_uniform(&s, u)) {
            break (Closure::WindowExit, format!("reached the uniform in-phase state at mu = {}", s.mu));
        }
        if corrected.iters <= 3 {
            ds = (ds * config.step_growth).min(config.ds_max);
        }
    };

    let hash = config_hash(system, config, seed);
    Ok(Branch {
        points,
        folds,
        closure,
        terminations: vec![Termination { direction, closure, note }],
        provenance: Provenance { seed: format!("explicit state at mu = {}", seed.mu), config_hash: hash },
    })
}

/// Continues in both directions from the seed and joins the halves, unless either
/// direction closes into an isola on its own.
pub fn continue_both(system: &LatticeSystem, seed: &PolarState, config: &ContinuationConfig) -> Result<Branch> {
    let fwd = continue_branch(system, seed, 1, config)?;
    if fwd.closure == Closure::ClosedIsola {
        return Ok(fwd);
    }
    let bwd = continue_branch(system, seed, -1, config)?;
    if bwd.closure == Closure::ClosedIsola {
        return Ok(bwd);
    }
    let len_b = bwd.points.last().map_or(0.0, |p| p.arclength);
    let mut points: Vec<BranchPoint> = bwd
        .points
        .iter()
        .skip(1)
        .rev()
        .map(|p| BranchPoint {
            arclength: len_b - p.arclength,
            tangent: p.tangent.iter().map(|x| -x).collect(),
            ..p.clone()
        })
        .collect();
    points.extend(fwd.points.iter().map(|p| BranchPoint { arclength: len_b + p.arclength, ..p.clone() }));
    let folds = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_fold)
        .map(|(i, p)| FoldRecord {
            mu: p.state.mu,
            arclength: p.arclength,
            index: Some(i),
            refined: p.tangent_mu().abs() <= config.fold_refine_tol,
            state: p.state.clone(),
        })
        .collect();
    let closure = [bwd.closure, fwd.closure]
        .into_iter()
        .max_by_key(|c| match c {
            Closure::Open => 3,
            Closure::StepLimit => 2,
            Closure::WindowExit => 1,
            Closure::ClosedIsola => 0,
        })
        .unwrap();
    let mut terminations = bwd.terminations;
    terminations.extend(fwd.terminations);
    Ok(Branch { points, folds, closure, terminations, provenance: fwd.provenance })
}

/// Fold records from a finished branch: stored fold points, plus refinements of any
/// sign change of the tangent `mu`-component between two ordinary neighbours.
pub fn detect_folds(branch: &Branch, system: &LatticeSystem, config: &ContinuationConfig) -> Vec<FoldRecord> {
    let pts = &branch.points;
    let mut out = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        if p.is_fold {
            out.push(FoldRecord {
                mu: p.state.mu,
                arclength: p.arclength,
                index: Some(i),
                refined: p.tangent_mu().abs() <= config.fold_refine_tol,
                state: p.state.clone(),
            });
        }
        let Some(q) = pts.get(i + 1) else { continue };
        if p.is_fold || q.is_fold || p.tangent_mu() * q.tangent_mu() >= 0.0 {
            continue;
        }
        let t_a = DVector::from_vec(p.tangent.clone());
        let ds = q.arclength - p.arclength;
        match refine_fold(system, &p.state, &t_a, ds, q.tangent_mu(), config) {
            Ok(hit) => {
                let mut s = hit.state;
                s.canonicalize();
                out.push(FoldRecord { mu: s.mu, arclength: p.arclength + hit.s, index: None, refined: true, state: s });
            }
            Err(_) => out.push(FoldRecord {
                mu: q.state.mu,
                arclength: q.arclength,
                index: Some(i + 1),
                refined: false,
                state: q.state.clone(),
            }),
        }
    }
    out
}

pub fn classify_closure(branch: &Branch, config: &ContinuationConfig) -> Closure {
    if let (Some(a), Some(b)) = (branch.points.first(), branch.points.last()) {
        if branch.arclength() > 10.0 * config.ds_init && state_distance(&a.state, &b.state) < config.closure_tol {
            return Closure::ClosedIsola;
        }
    }
    branch.closure
}

/// Unit tangent of the branch through `state`, oriented by `direction` in `mu`.
pub fn initial_tangent(system: &LatticeSystem, state: &PolarState, direction: i32) -> Result<Vec<f64>> {
    let n = state.nodes();
    let mut t = null_vector_svd(&system.jacobian(state)?)?;
    if t[2 * n] * f64::from(direction) < 0.0 {
        t = -t;
    }
    Ok(t.iter().copied().collect())
}
