//! Leading-order formulas: seeds, far-field tails, uncoupled branch curves, fold predictors,
//! the frequency-mismatch obstruction and the conservative recruitment rule.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::lattice::{BoundaryKind, Coupling, LatticeSystem, PolarState};
use crate::model::{bistable_roots, NonlinearitySpec};

const DENOM_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Minus,
    Plus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTemplate {
    /// All phase differences zero.
    InPhase,
    /// `-pi/2` across core interfaces, `+pi/2` from the last core node outward.
    Conservative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedAnsatz {
    /// Number of core nodes.
    pub k: usize,
    pub pattern: Vec<Level>,
    pub phase_template: PhaseTemplate,
    pub bc: BoundaryKind,
    pub n: usize,
}

impl SeedAnsatz {
    /// Core of `k` nodes at `r_+`.
    pub fn all_plus(k: usize, n: usize, template: PhaseTemplate, bc: BoundaryKind) -> Self {
        Self { k, pattern: vec![Level::Plus; k], phase_template: template, bc, n }
    }

    /// `k` nodes at `r_+` followed by one node at `r_-`.
    pub fn plus_then_minus(k: usize, n: usize, template: PhaseTemplate, bc: BoundaryKind) -> Self {
        let mut pattern = vec![Level::Plus; k];
        pattern.push(Level::Minus);
        Self { k: k + 1, pattern, phase_template: template, bc, n }
    }

    /// A point on the lower half of the isola with `k` fully active nodes.
    pub fn isola(k: usize, n: usize) -> Self {
        Self::plus_then_minus(k, n, PhaseTemplate::Conservative, BoundaryKind::OnSite)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("lattice size {} is below 2", self.n)));
        }
        if self.k < 1 || self.k > self.n - 1 {
            return Err(Error::InvalidArgument(format!("core size {} outside 1..={}", self.k, self.n - 1)));
        }
        if self.pattern.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "pattern has {} entries for a core of {}",
                self.pattern.len(),
                self.k
            )));
        }
        Ok(())
    }

    /// Short text form such as `++-` used in run provenance.
    pub fn describe(&self) -> String {
        let p: String = self.pattern.iter().map(|l| if *l == Level::Plus { '+' } else { '-' }).collect();
        format!("k={} pattern={} template={:?} bc={} N={}", self.k, p, self.phase_template, self.bc, self.n)
    }

    /// Template phase differences `phi_1..phi_{N-1}`.
    pub fn phases(&self) -> Vec<f64> {
        (1..self.n)
            .map(|i| match self.phase_template {
                PhaseTemplate::InPhase => 0.0,
                PhaseTemplate::Conservative if i < self.k => -FRAC_PI_2,
                PhaseTemplate::Conservative => FRAC_PI_2,
            })
            .collect()
    }
}

/// `(r_-, r_+)` on the closed interval `[0, 1]`, with `r_-(0) = 0`.
pub fn branch_roots(spec: &NonlinearitySpec, mu: f64) -> Result<(f64, f64)> {
    if mu == 0.0 {
        let roots = spec.positive_roots(0.0);
        let rp = roots.iter().copied().fold(f64::NAN, f64::max);
        if rp.is_nan() {
            return Err(Error::NotBistable { mu, found: 0 });
        }
        return Ok((0.0, rp));
    }
    let p = bistable_roots(spec, mu)?;
    Ok((p.r_minus, p.r_plus))
}

fn level_root(level: Level, roots: (f64, f64)) -> f64 {
    match level {
        Level::Minus => roots.0,
        Level::Plus => roots.1,
    }
}

fn check_mu_open(mu: f64) -> Result<()> {
    if mu > 0.0 && mu < 1.0 {
        Ok(())
    } else {
        Err(Error::MuOutOfRange(mu))
    }
}

/// First-order core amplitude corrections for in-phase patterns under dissipative coupling.
pub fn core_correction(spec: &NonlinearitySpec, mu: f64, pattern: &[Level], bc: BoundaryKind) -> Result<Vec<f64>> {
    check_mu_open(mu)?;
    let k = pattern.len();
    if k == 0 {
        return Err(Error::InvalidArgument("empty pattern".into()));
    }
    let roots = branch_roots(spec, mu)?;
    let r0: Vec<f64> = pattern.iter().map(|&l| level_root(l, roots)).collect();
    let at = |i: isize| -> f64 {
        if i == 0 {
            match bc {
                BoundaryKind::OffSite => r0[0],
                BoundaryKind::OnSite => r0.get(1).copied().unwrap_or(0.0),
            }
        } else {
            r0.get(i as usize - 1).copied().unwrap_or(0.0)
        }
    };
    (1..=k)
        .map(|n| {
            let r = r0[n - 1];
            let d = spec.lambda(r, mu) + r * spec.lambda_r(r, mu);
            if d.abs() < DENOM_GUARD {
                return Err(Error::DegenerateDenominator(n));
            }
            let num =
                if n < k { 2.0 * r - at(n as isize + 1) - at(n as isize - 1) } else { 2.0 * r - at(n as isize - 1) };
            Ok(num / d)
        })
        .collect()
}

/// Leading-order tail amplitudes for nodes `k+1..=n`, `r_j = (-eps / lambda(0, mu))^(j-k) r0_k`.
pub fn farfield_tail(spec: &NonlinearitySpec, mu: f64, eps: f64, k: usize, n: usize, r0_k: f64) -> Result<Vec<f64>> {
    let l0 = spec.lambda(0.0, mu);
    if l0.abs() < 1e-12 {
        return Err(Error::DegenerateFarField);
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("core size {k} exceeds lattice size {n}")));
    }
    let q = -eps / l0;
    let mut out = Vec::with_capacity(n - k);
    let mut r = r0_k;
    for _ in k..n {
        r *= q;
        out.push(r);
    }
    Ok(out)
}

/// Asymptotic seed: corrected core, geometric tail, template phases and `rho = omega_0(mu)`.
///
/// Core corrections solve the first-order amplitude equations for the given coupling and
/// template phases; for `c = 1` with in-phase template they equal [`core_correction`].
pub fn build_seed(
    spec: &NonlinearitySpec,
    mu: f64,
    eps: f64,
    ansatz: &SeedAnsatz,
    coupling: Coupling,
) -> Result<PolarState> {
    check_mu_open(mu)?;
    ansatz.validate()?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be non-negative")));
    }
    let (k, n) = (ansatz.k, ansatz.n);
    let roots = branch_roots(spec, mu)?;
    let mut r0 = vec![0.0; n];
    for (i, &l) in ansatz.pattern.iter().enumerate() {
        r0[i] = level_root(l, roots);
    }
    let phi = ansatz.phases();

    // First-order coupling term of each core amplitude equation at the leading-order state.
    let lead = PolarState { r: r0.clone(), phi: phi.clone(), rho: spec.omega0(mu), mu };
    let unit = LatticeSystem::new(spec.clone(), coupling, 1.0, ansatz.bc);
    let coupled = unit.node_residuals(&lead)?;
    let mut r = r0.clone();
    for i in 0..k {
        let d = spec.lambda(r0[i], mu) + r0[i] * spec.lambda_r(r0[i], mu);
        if d.abs() < DENOM_GUARD {
            return Err(Error::DegenerateDenominator(i + 1));
        }
        let forcing = coupled[i].re - spec.lambda(r0[i], mu) * r0[i];
        r[i] = r0[i] - eps * forcing / d;
    }

    let l0 = spec.lambda(0.0, mu);
    if l0.abs() < 1e-12 {
        return Err(Error::DegenerateFarField);
    }
    for i in k..n {
        let p = phi[i - 1];
        let g = coupling.c_re * p.cos() + coupling.c_im * p.sin();
        let prev = if i == k { r0[k - 1] } else { r[i - 1] };
        r[i] = -eps * g * prev / l0;
    }
    Ok(PolarState { r, phi, rho: spec.omega0(mu), mu })
}

/// Exact uncoupled point on segment `segment` of the snaking curve, local parameter `s` in `[0, 2]`.
///
/// The first `segment` nodes sit at `r_+`, the next follows `r_-` up to the fold and `r_+` back down.
pub fn snaking_curve(spec: &NonlinearitySpec, n: usize, segment: usize, s: f64) -> Result<PolarState> {
    if n < 2 || segment >= n {
        return Err(Error::OutOfDomain(format!("segment {segment} for N = {n}")));
    }
    if !(0.0..=2.0).contains(&s) {
        return Err(Error::OutOfDomain(format!("local parameter s = {s}")));
    }
    let mu = tent(s);
    let roots = branch_roots(spec, mu)?;
    let mut r = vec![0.0; n];
    r[..segment].fill(roots.1);
    r[segment] = r_zero(s, roots);
    Ok(PolarState { r, phi: vec![0.0; n - 1], rho: spec.omega0(mu), mu })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolaHalf {
    Lower,
    Upper,
}

/// Exact uncoupled point on the isola with `k` fully active nodes, `s` in `[0, 2]`.
pub fn isola_curve(spec: &NonlinearitySpec, n: usize, k: usize, s: f64, half: IsolaHalf) -> Result<PolarState> {
    if k < 1 || k + 2 > n {
        return Err(Error::OutOfDomain(format!("isola index {k} for N = {n}")));
    }
    if !(0.0..=2.0).contains(&s) {
        return Err(Error::OutOfDomain(format!("local parameter s = {s}")));
    }
    let mu = tent(s);
    let roots = branch_roots(spec, mu)?;
    let mut r = vec![0.0; n];
    r[..k].fill(roots.1);
    match half {
        IsolaHalf::Lower => r[k] = r_zero(s, roots),
        IsolaHalf::Upper => {
            r[k] = r_zero(2.0 - s, roots);
            r[k + 1] = roots.0;
        }
    }
    let phi = (1..n)
        .map(|i| match i.cmp(&(k + 1)) {
            std::cmp::Ordering::Less => -FRAC_PI_2,
            std::cmp::Ordering::Equal => FRAC_PI_2,
            std::cmp::Ordering::Greater => 0.0,
        })
        .collect();
    Ok(PolarState { r, phi, rho: spec.omega0(mu), mu })
}

fn tent(s: f64) -> f64 {
    if s <= 1.0 {
        s
    } else {
        2.0 - s
    }
}

fn r_zero(s: f64, roots: (f64, f64)) -> f64 {
    if s <= 1.0 {
        roots.0
    } else {
        roots.1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    /// Coupling strength scaled to one.
    EpsChart,
    /// Distance to the uncoupled bifurcation scaled to a constant.
    MuChart,
}

/// A point of a leading-order chart solution near `mu = 1` or `mu = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPrediction {
    pub chart: Chart,
    pub s: f64,
    pub mu: f64,
    pub eps: f64,
    /// Amplitude of the node undergoing the transition.
    pub amplitude: f64,
    pub fold_flag: bool,
}

/// Near `mu = 1`, chart `eps~ = 1`: `mu = 1 - (1 + s^2) eps`, `r_k = 1 + s sqrt(eps)`.
pub fn mu1_eps_chart(eps: f64, s: f64) -> ChartPrediction {
    let mu = 1.0 - (1.0 + s * s) * eps;
    ChartPrediction {
        chart: Chart::EpsChart,
        s,
        mu,
        eps,
        amplitude: 1.0 + s * eps.max(0.0).sqrt(),
        fold_flag: s == 0.0,
    }
}

/// Near `mu = 1`, chart `mu~ = 2`: `eps = (2 - s^2)(1 - mu)/2`, `r_k = 1 + s sqrt(2(1 - mu))/2`.
pub fn mu1_mu_chart(mu: f64, s: f64) -> ChartPrediction {
    let d = (1.0 - mu).max(0.0);
    ChartPrediction {
        chart: Chart::MuChart,
        s,
        mu,
        eps: (2.0 - s * s) * d / 2.0,
        amplitude: 1.0 + s * (2.0 * d).sqrt() / 2.0,
        fold_flag: false,
    }
}

/// Near `mu = 0`, chart `eps~ = 1`: `mu = (1 + s^3)/s eps^(2/3)`, `r_k = s eps^(1/3)`.
pub fn mu0_eps_chart(eps: f64, s: f64) -> ChartPrediction {
    ChartPrediction {
        chart: Chart::EpsChart,
        s,
        mu: (1.0 + s.powi(3)) / s * eps.powf(2.0 / 3.0),
        eps,
        amplitude: s * eps.cbrt(),
        fold_flag: (s - 2f64.powf(-1.0 / 3.0)).abs() < 1e-15,
    }
}

/// Near `mu = 0`, chart `mu~ = 2`: `eps = s (2 - s^2) mu^(3/2) / 2^(3/2)`, `r_k = s sqrt(2 mu)/2`.
pub fn mu0_mu_chart(mu: f64, s: f64) -> ChartPrediction {
    let m = mu.max(0.0);
    ChartPrediction {
        chart: Chart::MuChart,
        s,
        mu,
        eps: s * (2.0 - s * s) * m.powf(1.5) / 2f64.powf(1.5),
        amplitude: s * (2.0 * m).sqrt() / 2.0,
        fold_flag: false,
    }
}

/// Leading-order fold near `mu = 1`: `mu = 1 - eps`, with an `O(eps^(3/2))` correction.
pub fn fold_prediction_mu1(eps: f64) -> ChartPrediction {
    mu1_eps_chart(eps, 0.0)
}

/// Leading-order recruitment fold near `mu = 0`: `mu = (3/2) 2^(1/3) eps^(2/3)`,
/// `r_k = 2^(-1/3) eps^(1/3)`, with relative corrections `O(eps^(1/3))`.
pub fn fold_prediction_mu0(eps: f64) -> ChartPrediction {
    let mut p = mu0_eps_chart(eps, 2f64.powf(-1.0 / 3.0));
    p.fold_flag = true;
    p
}

/// `(3/2) 2^(1/3)`, the scaled recruitment-fold location.
pub fn mu0_fold_constant() -> f64 {
    1.5 * 2f64.cbrt()
}

/// Ratio between the recruitment-fold location of `spec` and the normalized prediction.
///
/// The recruited node obeys `-m mu r + b r^3 + eps a = 0` at leading order, with
/// `m = -lambda_mu`, `b` the `r^2` coefficient of `lambda` and `a = r_+(0)` the amplitude of
/// its active neighbour; the fold then sits at `b^(1/3) a^(2/3) / m` times the normalized value.
pub fn mu0_model_scale(spec: &NonlinearitySpec) -> Result<f64> {
    let m = -spec.lambda_mu;
    let b = spec.lambda_even.get(1).copied().unwrap_or(0.0);
    if !(m > 0.0 && b > 0.0) {
        return Err(Error::InvalidArgument("recruitment fold needs lambda_mu < 0 and a positive r^2 term".into()));
    }
    let (_, a) = branch_roots(spec, 0.0)?;
    Ok(b.cbrt() * a.powf(2.0 / 3.0) / m)
}

/// Recruitment-fold prediction in the units of `spec`.
pub fn fold_prediction_mu0_model(spec: &NonlinearitySpec, eps: f64) -> Result<ChartPrediction> {
    let scale = mu0_model_scale(spec)?;
    let mut p = fold_prediction_mu0(eps);
    p.mu *= scale;
    Ok(p)
}

/// Positive roots `s_- < s_+` of `s^3 - 2 s + 1`, where the `eps~ = 1` branch near `mu = 0`
/// reaches `mu~ = 2`.
pub fn mu0_chart_overlap() -> (f64, f64) {
    let g = |s: f64| s.powi(3) - 2.0 * s + 1.0;
    // s = 1 is an exact root; the other positive root is isolated in (0.5, 0.8).
    let (mut lo, mut hi) = (0.5, 0.8);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(lo) * g(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (0.5 * (lo + hi), 1.0)
}

/// Frequency-mismatch report for the pattern `(r_+, ..., r_+, r_-, 0, ...)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub mu: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    /// `|omega_1(r_-) - omega_1(r_+)|`.
    pub delta: f64,
    /// `r_+ / r_-`.
    pub threshold: f64,
    pub obstructed: bool,
    /// Leading-order interface phase `sin(phi_k)` as the core grows; may exceed one in modulus.
    pub sin_phi_limit: f64,
    pub has_real_solution: bool,
    /// `omega(r_-, mu, 0) != omega(r_+, mu, 0)`.
    pub order_one_mismatch: bool,
}

pub fn mismatch_bound(spec: &NonlinearitySpec, mu: f64) -> Result<MismatchReport> {
    check_mu_open(mu)?;
    let (rm, rp) = branch_roots(spec, mu)?;
    let diff = spec.omega1(rm) - spec.omega1(rp);
    let threshold = rp / rm;
    let sin_phi_limit = rm / rp * diff;
    Ok(MismatchReport {
        mu,
        r_minus: rm,
        r_plus: rp,
        delta: diff.abs(),
        threshold,
        obstructed: diff.abs() > threshold,
        sin_phi_limit,
        has_real_solution: sin_phi_limit.abs() <= 1.0,
        order_one_mismatch: (spec.omega(rm, mu, 0.0) - spec.omega(rp, mu, 0.0)).abs() > 1e-10,
    })
}

/// Interface phase `sin(phi_k)` of the leading-order phase equations for a core of `k` nodes
/// at `r_+` followed by one at `r_-` (off-site boundary).
///
/// Summing the first `k` equations gives `k (omega_1(r_+) - Omega) + q sin(phi_k) = 0` with
/// `q = r_- / r_+`, and the last gives `Omega = omega_1(r_-) - sin(phi_k) / q`.
pub fn mismatch_interface_phase(spec: &NonlinearitySpec, mu: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("core needs at least one r_+ node".into()));
    }
    let rep = mismatch_bound(spec, mu)?;
    let q = rep.r_minus / rep.r_plus;
    let kk = k as f64;
    Ok(rep.sin_phi_limit / (1.0 + q * q / kk))
}

/// Node predicted to fold first near `mu = 1` on a conservative isola whose active core has
/// `k` nodes: `kappa = -1` (all phase differences `-pi/2`) gives node `k`, `kappa = +1`
/// (last phase difference `+pi/2`) gives node `k - 1`.
pub fn conservative_recruitment(kappa: i32, k: usize) -> Result<usize> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("active core {k} must have at least 2 nodes")));
    }
    match kappa {
        -1 => Ok(k),
        1 => Ok(k - 1),
        _ => Err(Error::InvalidArgument(format!("kappa must be -1 or +1, got {kappa}"))),
    }
}

/// Node recruited near `mu = 0` to `r_-`: node `k` if `phi_{k-1} = +pi/2`, node `k + 1` if
/// `phi_{k-1} = -pi/2` and `phi_k = +pi/2`.
pub fn conservative_recruitment_mu0(phi_km1_sign: i32, phi_k_sign: i32, k: usize) -> Result<usize> {
    match (phi_km1_sign, phi_k_sign) {
        (1, _) => Ok(k),
        (-1, 1) => Ok(k + 1),
        _ => Err(Error::InvalidArgument(format!("no recruitment rule for phase signs ({phi_km1_sign}, {phi_k_sign})"))),
    }
}

/// Printed closed-form determinants of the core phase blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseBlockDeterminant {
    pub printed: f64,
    pub nonsingular: bool,
}

/// Evaluates the printed determinant formulas for the core values `r0 = (r_1..r_k)`.
pub fn phase_block_determinant(r0: &[f64], bc: BoundaryKind) -> Result<PhaseBlockDeterminant> {
    let k = r0.len();
    if k == 0 {
        return Err(Error::InvalidArgument("empty core".into()));
    }
    let ghost = match bc {
        BoundaryKind::OffSite => r0[0],
        BoundaryKind::OnSite => r0.get(1).copied().unwrap_or(0.0),
    };
    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
    let prod: f64 = r0[..k - 1].iter().product();
    let squares: f64 = r0.iter().map(|x| x * x).sum();
    let printed = match bc {
        BoundaryKind::OffSite => sign * prod * (ghost * ghost + squares),
        BoundaryKind::OnSite => sign * (ghost * ghost + 2.0 * squares) * prod,
    };
    Ok(PhaseBlockDeterminant { printed, nonsingular: r0.iter().all(|&x| x != 0.0) })
}

/// Jacobian block of the core phase equations (divided by `eps`) with respect to
/// `(rho, phi_1..phi_{k-1})`, for the in-phase pattern `r0` and dissipative coupling.
pub fn phase_block_matrix(spec: &NonlinearitySpec, r0: &[f64], bc: BoundaryKind) -> Result<DMatrix<f64>> {
    let k = r0.len();
    if k == 0 {
        return Err(Error::InvalidArgument("empty core".into()));
    }
    let n = k + 1;
    let mut r = r0.to_vec();
    r.push(0.0);
    let state = PolarState { r, phi: vec![0.0; n - 1], rho: 0.0, mu: 0.5 };
    let j = LatticeSystem::new(spec.clone(), Coupling::DISSIPATIVE, 1.0, bc).jacobian(&state)?;
    let mut m = DMatrix::zeros(k, k);
    for row in 0..k {
        m[(row, 0)] = j[(2 * row + 1, 2 * n - 1)];
        for c in 1..k {
            m[(row, c)] = j[(2 * row + 1, n + c - 1)];
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_spec;
    use approx::assert_abs_diff_eq;

    fn quintic() -> NonlinearitySpec {
        builtin_spec("quintic").unwrap()
    }

    fn roots(mu: f64) -> (f64, f64) {
        let d = (1.0 - mu).sqrt();
        ((1.0 - d).sqrt(), (1.0 + d).sqrt())
    }

    #[test]
    fn core_correction_examples() {
        let spec = quintic();
        let s = core_correction(&spec, 0.75, &[Level::Plus; 4], BoundaryKind::OffSite).unwrap();
        assert_abs_diff_eq!(s[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[2], 0.0, epsilon = 1e-12);
        let (rm, rp) = roots(0.75);
        let lr = 4.0 * rp - 4.0 * rp.powi(3);
        assert_abs_diff_eq!(s[3], 1.0 / lr, epsilon = 1e-9);
        assert_abs_diff_eq!(s[3], -0.408248, epsilon = 1e-6);

        let m = core_correction(&spec, 0.75, &[Level::Plus, Level::Minus], BoundaryKind::OffSite).unwrap();
        assert_abs_diff_eq!(rp - rm, 0.517638, epsilon = 1e-6);
        assert_abs_diff_eq!(rp * lr, -3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m[0], (rp - rm) / (rp * lr), epsilon = 1e-9);
    }

    #[test]
    fn core_correction_rejects_bad_mu() {
        let spec = quintic();
        assert!(core_correction(&spec, 1.0, &[Level::Plus], BoundaryKind::OnSite).is_err());
        assert!(core_correction(&spec, 0.5, &[], BoundaryKind::OnSite).is_err());
    }

    #[test]
    fn farfield_examples() {
        let spec = quintic();
        let (_, rp) = roots(0.75);
        let t = farfield_tail(&spec, 0.75, 0.01, 3, 6, rp).unwrap();
        assert_eq!(t.len(), 3);
        assert_abs_diff_eq!(t[0], 0.016330, epsilon = 1e-6);
        assert_abs_diff_eq!(t[1] / t[0], 0.01 / 0.75, epsilon = 1e-12);
        assert!(farfield_tail(&spec, 0.75, 0.0, 3, 6, rp).unwrap().iter().all(|&x| x == 0.0));
        assert!(matches!(farfield_tail(&spec, 0.0, 0.01, 3, 6, rp), Err(Error::DegenerateFarField)));
    }

    #[test]
    fn uncoupled_seed_is_exact() {
        let spec = builtin_spec("quintic_rotating").unwrap();
        for (ansatz, c) in [
            (SeedAnsatz::all_plus(3, 6, PhaseTemplate::InPhase, BoundaryKind::OffSite), Coupling::DISSIPATIVE),
            (SeedAnsatz::isola(2, 6), Coupling::CONSERVATIVE),
        ] {
            let s = build_seed(&spec, 0.5, 0.0, &ansatz, c).unwrap();
            let sys = LatticeSystem::new(spec.clone(), c, 0.0, ansatz.bc);
            let res = sys.residual(&s).unwrap();
            assert!(res.iter().all(|x| x.abs() < 1e-14), "{res:?}");
        }
    }

    #[test]
    fn seed_matches_core_correction_for_dissipative_coupling() {
        let spec = quintic();
        let pattern = [Level::Plus, Level::Plus, Level::Minus];
        let ansatz = SeedAnsatz {
            k: 3,
            pattern: pattern.to_vec(),
            phase_template: PhaseTemplate::InPhase,
            bc: BoundaryKind::OnSite,
            n: 6,
        };
        let eps = 0.01;
        let s = build_seed(&spec, 0.5, eps, &ansatz, Coupling::DISSIPATIVE).unwrap();
        let sig = core_correction(&spec, 0.5, &pattern, BoundaryKind::OnSite).unwrap();
        let (rm, rp) = roots(0.5);
        let r0 = [rp, rp, rm];
        for i in 0..3 {
            assert_abs_diff_eq!(s.r[i], r0[i] + eps * sig[i], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(s.r[3], eps / 0.5 * rm, epsilon = 1e-12);
    }

    #[test]
    fn ansatz_validation() {
        assert!(SeedAnsatz::all_plus(0, 5, PhaseTemplate::InPhase, BoundaryKind::OnSite).validate().is_err());
        assert!(SeedAnsatz::all_plus(5, 5, PhaseTemplate::InPhase, BoundaryKind::OnSite).validate().is_err());
        let mut a = SeedAnsatz::isola(2, 6);
        assert_eq!(a.k, 3);
        assert!(a.validate().is_ok());
        a.pattern.pop();
        assert!(a.validate().is_err());
        let p = SeedAnsatz::isola(2, 6).phases();
        assert_eq!(p, vec![-FRAC_PI_2, -FRAC_PI_2, FRAC_PI_2, FRAC_PI_2, FRAC_PI_2]);
    }

    #[test]
    fn snaking_curve_examples() {
        let spec = quintic();
        let p = snaking_curve(&spec, 5, 2, 1.0).unwrap();
        assert_abs_diff_eq!(p.mu, 1.0);
        for i in 0..3 {
            assert_abs_diff_eq!(p.r[i], 1.0, epsilon = 1e-6);
        }
        let p = snaking_curve(&spec, 5, 0, 0.5).unwrap();
        assert_abs_diff_eq!(p.r[0], 0.541196, epsilon = 1e-6);
        let p = snaking_curve(&spec, 5, 3, 1.5).unwrap();
        assert_abs_diff_eq!(p.mu, 0.5);
        assert_abs_diff_eq!(p.r[3], 1.306563, epsilon = 1e-6);
        assert_eq!(&p.r[..3], &[p.r[3]; 3]);
        assert_eq!(p.r[4], 0.0);
        assert!(snaking_curve(&spec, 5, 5, 0.5).is_err());
        assert!(snaking_curve(&spec, 5, 1, 2.5).is_err());
    }

    #[test]
    fn isola_curve_examples() {
        let spec = quintic();
        let p = isola_curve(&spec, 8, 3, 0.0, IsolaHalf::Lower).unwrap();
        assert_eq!(p.r[3], 0.0);
        let lo = isola_curve(&spec, 8, 3, 1.0, IsolaHalf::Lower).unwrap();
        assert_abs_diff_eq!(lo.mu, 1.0);
        assert_abs_diff_eq!(lo.r[3], 1.0, epsilon = 1e-6);
        let up = isola_curve(&spec, 8, 3, 0.5, IsolaHalf::Upper).unwrap();
        assert_abs_diff_eq!(up.r[3], 1.306563, epsilon = 1e-6);
        assert_abs_diff_eq!(up.r[4], 0.541196, epsilon = 1e-6);
        assert_eq!(up.phi[..3], [-FRAC_PI_2; 3]);
        assert_eq!(up.phi[3], FRAC_PI_2);
        assert_eq!(up.phi[4], 0.0);
        assert!(isola_curve(&spec, 8, 7, 0.5, IsolaHalf::Upper).is_err());
    }

    #[test]
    fn fold_predictions() {
        assert_abs_diff_eq!(fold_prediction_mu1(0.01).mu, 0.99, epsilon = 1e-15);
        assert_abs_diff_eq!(fold_prediction_mu1(0.0).mu, 1.0);
        let p = fold_prediction_mu0(0.01);
        assert_abs_diff_eq!(p.mu, 0.087720, epsilon = 1e-6);
        assert_abs_diff_eq!(p.amplitude, 2f64.powf(-1.0 / 3.0) * 0.01f64.cbrt(), epsilon = 1e-15);
        assert!(p.fold_flag);
        assert_eq!(fold_prediction_mu0(0.0).mu, 0.0);
        assert_abs_diff_eq!(mu0_fold_constant(), 1.889882, epsilon = 1e-6);
        assert!(fold_prediction_mu0(1e-3).mu < fold_prediction_mu0(1e-2).mu);
        assert!(fold_prediction_mu1(1e-3).mu > fold_prediction_mu1(1e-2).mu);
    }

    #[test]
    fn mu0_fold_is_the_minimum_of_the_eps_chart() {
        let eps = 1e-3;
        let f = fold_prediction_mu0(eps);
        for s in [0.5, 0.7, 0.78, 0.8, 0.9, 1.2] {
            assert!(mu0_eps_chart(eps, s).mu >= f.mu - 1e-15);
        }
    }

    #[test]
    fn chart_overlap() {
        let (sm, sp) = mu0_chart_overlap();
        assert_abs_diff_eq!(sm, (5f64.sqrt() - 1.0) / 2.0, epsilon = 1e-12);
        assert_eq!(sp, 1.0);
        for s in [sm, sp] {
            let p = mu0_eps_chart(1.0, s);
            assert_abs_diff_eq!(p.mu, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mu1_charts_agree_on_overlap() {
        // Same (mu, eps) in both charts: s' = s sqrt(2 / (1 + s^2)).
        let eps = 1e-3;
        let a = mu1_eps_chart(eps, 0.6);
        let s2 = 0.6 * (2.0 / 1.36f64).sqrt();
        let b = mu1_mu_chart(a.mu, s2);
        assert_abs_diff_eq!(b.eps, eps, epsilon = 1e-15);
        assert_abs_diff_eq!(a.amplitude, b.amplitude, epsilon = 1e-12);
    }

    #[test]
    fn mu0_model_scale_for_quintic() {
        let spec = quintic();
        assert_abs_diff_eq!(mu0_model_scale(&spec).unwrap(), 2f64.powf(2.0 / 3.0), epsilon = 1e-12);
        let p = fold_prediction_mu0_model(&spec, 1e-3).unwrap();
        assert_abs_diff_eq!(p.mu, 1.889882 * 2f64.powf(2.0 / 3.0) * 0.01, epsilon = 1e-8);
    }

    #[test]
    fn mismatch_examples() {
        let base = quintic();
        let r = mismatch_bound(&base.clone().with_omega1(vec![0.0, 1.0]), 0.75).unwrap();
        assert_abs_diff_eq!(r.delta, 0.517638, epsilon = 1e-6);
        assert_abs_diff_eq!(r.threshold, 1.732051, epsilon = 1e-6);
        assert!(!r.obstructed);
        assert_abs_diff_eq!(r.sin_phi_limit, -0.298858, epsilon = 1e-6);
        assert!(r.has_real_solution);
        assert!(!r.order_one_mismatch);

        let z = mismatch_bound(&base, 0.75).unwrap();
        assert_eq!(z.delta, 0.0);
        assert_eq!(z.sin_phi_limit, 0.0);
        assert!(!z.obstructed);

        let o = mismatch_bound(&base.clone().with_omega1(vec![0.0, 5.0]), 0.75).unwrap();
        assert_abs_diff_eq!(o.delta, 2.588190, epsilon = 1e-6);
        assert!(o.obstructed);
        assert!(!o.has_real_solution);
    }

    #[test]
    fn recruitment() {
        assert_eq!(conservative_recruitment(-1, 3).unwrap(), 3);
        assert_eq!(conservative_recruitment(1, 3).unwrap(), 2);
        assert!(conservative_recruitment(0, 3).is_err());
        assert!(conservative_recruitment(1, 1).is_err());
        assert_eq!(conservative_recruitment_mu0(1, 0, 4).unwrap(), 4);
        assert_eq!(conservative_recruitment_mu0(-1, 1, 4).unwrap(), 5);
        assert!(conservative_recruitment_mu0(-1, -1, 4).is_err());
    }

    #[test]
    fn printed_phase_block_determinants() {
        let (_, rp) = roots(0.75);
        let d = phase_block_determinant(&[rp, rp], BoundaryKind::OffSite).unwrap();
        assert_abs_diff_eq!(d.printed, -3.0 * rp.powi(3), epsilon = 1e-12);
        assert_abs_diff_eq!(d.printed, -5.511, epsilon = 1e-3);
        assert!(d.nonsingular);
        let z = phase_block_determinant(&[rp, 0.0, rp], BoundaryKind::OnSite).unwrap();
        assert_eq!(z.printed, 0.0);
        assert!(!z.nonsingular);
        for k in 1..=8 {
            let r = vec![0.7; k];
            for bc in [BoundaryKind::OnSite, BoundaryKind::OffSite] {
                let d = phase_block_determinant(&r, bc).unwrap();
                assert!(d.nonsingular && d.printed != 0.0);
            }
        }
    }

    #[test]
    fn assembled_phase_block_is_nonsingular() {
        let spec = quintic();
        let (rm, rp) = roots(0.5);
        for k in 1..=6 {
            for bc in [BoundaryKind::OnSite, BoundaryKind::OffSite] {
                let mut r0 = vec![rp; k];
                r0[k - 1] = rm;
                let m = phase_block_matrix(&spec, &r0, bc).unwrap();
                assert!(m.determinant().abs() > 1e-8, "k={k} {bc}");
            }
        }
        // Two-node off-site block: rows (-r1, r2; -r2, -r1) up to sign, determinant r1^2 + r2^2.
        let m = phase_block_matrix(&spec, &[rp, rm], BoundaryKind::OffSite).unwrap();
        assert_abs_diff_eq!(m.determinant().abs(), rp * rp + rm * rm, epsilon = 1e-12);
    }
}
