//! Time-domain checks: fixed-step RK4 integration of the oscillator chain, relative-equilibrium
//! verification and the linearization spectrum in the co-rotating frame.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{complex_residual, BoundaryKind, Coupling, PolarState};
use crate::model::NonlinearitySpec;

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub z_samples: Vec<Vec<Complex64>>,
    /// Step actually used (the horizon is split into equal steps).
    pub dt: f64,
    pub order: u32,
    /// Set when a non-finite state stopped the integration early.
    pub aborted: bool,
}

impl Trajectory {
    pub fn last(&self) -> Option<&[Complex64]> {
        self.z_samples.last().map(|v| v.as_slice())
    }
}

/// Full symmetric chain for a half-lattice state: `2N` nodes for off-site states (mirror across
/// `n = 1/2`), `2N - 1` for on-site states (mirror across `n = 1`).
pub fn unfold(state: &PolarState, bc: BoundaryKind) -> Vec<Complex64> {
    let z = state.to_complex();
    let skip = match bc {
        BoundaryKind::OffSite => 0,
        BoundaryKind::OnSite => 1,
    };
    z.iter().skip(skip).rev().chain(z.iter()).copied().collect()
}

/// `dZ/dt` for the open chain with reflecting ends.
pub fn vector_field(
    spec: &NonlinearitySpec,
    c: Coupling,
    z: &[Complex64],
    eps: f64,
    mu: f64,
) -> Result<Vec<Complex64>> {
    if z.len() == 1 {
        return Ok(vec![spec.f(z[0].norm(), mu, eps) * z[0]]);
    }
    complex_residual(spec, c, z, 0.0, mu, eps, BoundaryKind::OffSite)
}

fn axpy(a: f64, x: &[Complex64], y: &[Complex64]) -> Vec<Complex64> {
    x.iter().zip(y).map(|(xi, yi)| yi + xi * a).collect()
}

/// Classical fourth-order Runge-Kutta on `[0, t_end]` with `ceil(t_end / dt)` equal steps,
/// sampling every step.
pub fn integrate(
    spec: &NonlinearitySpec,
    c: Coupling,
    z0: &[Complex64],
    eps: f64,
    mu: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end >= dt) {
        return Err(Error::InvalidArgument(format!("need 0 < dt <= T, got dt = {dt}, T = {t_end}")));
    }
    if z0.is_empty() {
        return Err(Error::Dimension("empty initial state".into()));
    }
    let steps = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut traj = Trajectory { times: vec![0.0], z_samples: vec![z0.to_vec()], dt: h, order: 4, aborted: false };
    let mut z = z0.to_vec();
    for i in 1..=steps {
        let k1 = vector_field(spec, c, &z, eps, mu)?;
        let k2 = vector_field(spec, c, &axpy(h / 2.0, &k1, &z), eps, mu)?;
        let k3 = vector_field(spec, c, &axpy(h / 2.0, &k2, &z), eps, mu)?;
        let k4 = vector_field(spec, c, &axpy(h, &k3, &z), eps, mu)?;
        for j in 0..z.len() {
            z[j] += (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (h / 6.0);
        }
        if z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            traj.aborted = true;
            break;
        }
        traj.times.push(i as f64 * h);
        traj.z_samples.push(z.clone());
    }
    Ok(traj)
}

/// `max_t ||Z(t) - exp(i rho t) z0||_inf` over the samples of `traj`.
pub fn verify_relative_equilibrium(traj: &Trajectory, z0: &[Complex64], rho: f64) -> Result<f64> {
    if rho.abs() < 1e-6 {
        return Err(Error::PeriodUndefined(rho));
    }
    relative_deviation(traj, z0, rho)
}

/// Same deviation without the period requirement, for checks over a fixed horizon.
pub fn relative_deviation(traj: &Trajectory, z0: &[Complex64], rho: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (t, z) in traj.times.iter().zip(&traj.z_samples) {
        if z.len() != z0.len() {
            return Err(Error::Dimension("trajectory and reference differ in size".into()));
        }
        let rot = Complex64::from_polar(1.0, rho * t);
        for (a, b) in z.iter().zip(z0) {
            worst = worst.max((a - rot * b).norm());
        }
    }
    Ok(worst)
}

/// One rotation period `2 pi / |rho|`.
pub fn period(rho: f64) -> Result<f64> {
    if rho.abs() < 1e-6 {
        return Err(Error::PeriodUndefined(rho));
    }
    Ok(2.0 * std::f64::consts::PI / rho.abs())
}

/// Real `2N x 2N` Jacobian of the co-rotating field `f(|z|) z - i rho z + eps c (lattice Laplacian)`
/// in the variables `(Re z_1, Im z_1, ..., Re z_N, Im z_N)`, with the ghost rules of `bc`.
pub fn corotating_jacobian(
    spec: &NonlinearitySpec,
    c: Coupling,
    state: &PolarState,
    eps: f64,
    bc: BoundaryKind,
) -> Result<DMatrix<f64>> {
    state.validate()?;
    let z = state.to_complex();
    let n = z.len();
    let mu = state.mu;
    let ec = eps * c.as_complex();
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    fn put(jac: &mut DMatrix<f64>, row: usize, col: usize, d: Complex64) {
        jac[(2 * row, 2 * col)] += d.re;
        jac[(2 * row + 1, 2 * col)] += d.im;
        // d/d(Im z_col) of a holomorphic-in-z term is i times its d/d(Re z_col).
        let di = Complex64::i() * d;
        jac[(2 * row, 2 * col + 1)] += di.re;
        jac[(2 * row + 1, 2 * col + 1)] += di.im;
    }
    for m in 0..n {
        let left = match (m, bc) {
            (0, BoundaryKind::OnSite) if n > 1 => 1,
            (0, _) => 0,
            _ => m - 1,
        };
        let right = if m + 1 < n { m + 1 } else { m };
        put(&mut jac, m, m, -2.0 * ec);
        put(&mut jac, m, right, ec);
        put(&mut jac, m, left, ec);
        put(&mut jac, m, m, Complex64::new(0.0, -state.rho));
        let r = z[m].norm();
        let f = spec.f(r, mu, eps);
        put(&mut jac, m, m, f);
        if r > 0.0 {
            // d(f(r) z)/dx = f + f_r (x/r) z, d/dy = i f + f_r (y/r) z: the second parts are
            // not holomorphic, so add them column by column.
            let fr = spec.f_r(r, mu, eps);
            let gx = fr * z[m] * (z[m].re / r);
            let gy = fr * z[m] * (z[m].im / r);
            jac[(2 * m, 2 * m)] += gx.re;
            jac[(2 * m + 1, 2 * m)] += gx.im;
            jac[(2 * m, 2 * m + 1)] += gy.re;
            jac[(2 * m + 1, 2 * m + 1)] += gy.im;
        }
    }
    Ok(jac)
}

/// Eigenvalues of [`corotating_jacobian`], sorted by decreasing real part.
pub fn linearization_spectrum(
    spec: &NonlinearitySpec,
    c: Coupling,
    state: &PolarState,
    eps: f64,
    bc: BoundaryKind,
) -> Result<Vec<Complex64>> {
    let jac = corotating_jacobian(spec, c, state, eps, bc)?;
    let mut ev: Vec<Complex64> = jac.complex_eigenvalues().iter().copied().collect();
    if ev.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::InvalidArgument("eigenvalue computation produced non-finite values".into()));
    }
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(ev)
}
