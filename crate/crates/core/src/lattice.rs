//! Steady-state polar system of the nearest-neighbour chain.
//!
//! Unknowns are the amplitudes `r_1..r_N`, the phase differences `phi_1..phi_{N-1}`
//! (`phi_n = theta_{n+1} - theta_n`) and the rotation frequency `rho`; `mu` is the parameter.
//! Node `n` contributes the complex equation
//!
//! ```text
//! 0 = f(r_n) r_n - i rho r_n + eps c (r_{n+1} e^{i phi_n} - 2 r_n + r_{n-1} e^{-i phi_{n-1}})
//! ```
//!
//! whose real part is the amplitude row `2n-1` and imaginary part the phase row `2n`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::NonlinearitySpec;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y <= -PI {
        y += 2.0 * PI;
    } else if y > PI {
        y -= 2.0 * PI;
    }
    y
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarState {
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
    pub rho: f64,
    pub mu: f64,
}

impl PolarState {
    pub fn new(r: Vec<f64>, phi: Vec<f64>, rho: f64, mu: f64) -> Result<Self> {
        let s = Self { r, phi, rho, mu };
        s.validate()?;
        Ok(s)
    }

    /// The uncoupled all-zero state with `n` nodes.
    pub fn zeros(n: usize, rho: f64, mu: f64) -> Self {
        Self { r: vec![0.0; n], phi: vec![0.0; n.saturating_sub(1)], rho, mu }
    }

    pub fn nodes(&self) -> usize {
        self.r.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.r.len() < 2 {
            return Err(Error::Dimension(format!("need at least 2 nodes, got {}", self.r.len())));
        }
        if self.phi.len() + 1 != self.r.len() {
            return Err(Error::Dimension(format!(
                "{} amplitudes need {} phase differences, got {}",
                self.r.len(),
                self.r.len() - 1,
                self.phi.len()
            )));
        }
        let finite =
            self.r.iter().chain(&self.phi).all(|x| x.is_finite()) && self.rho.is_finite() && self.mu.is_finite();
        if !finite {
            return Err(Error::InvalidArgument("state has non-finite entries".into()));
        }
        Ok(())
    }

    /// Flattened `(r, phi, rho, mu)`, length `2N + 1`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.nodes() + 1);
        v.extend_from_slice(&self.r);
        v.extend_from_slice(&self.phi);
        v.push(self.rho);
        v.push(self.mu);
        v
    }

    pub fn from_vector(n: usize, v: &[f64]) -> Result<Self> {
        if v.len() != 2 * n + 1 {
            return Err(Error::Dimension(format!("expected {} entries, got {}", 2 * n + 1, v.len())));
        }
        Ok(Self { r: v[..n].to_vec(), phi: v[n..2 * n - 1].to_vec(), rho: v[2 * n - 1], mu: v[2 * n] })
    }

    /// Complex amplitudes `z_n = r_n exp(i theta_n)` with `theta_1 = 0`.
    pub fn to_complex(&self) -> Vec<Complex64> {
        let mut theta = 0.0;
        let mut z = Vec::with_capacity(self.nodes());
        for (n, &r) in self.r.iter().enumerate() {
            if n > 0 {
                theta += self.phi[n - 1];
            }
            z.push(Complex64::from_polar(r, theta));
        }
        z
    }

    /// Absorbs negative amplitudes into the phases and wraps all phase differences.
    ///
    /// Returns the indices of the flipped nodes.
    pub fn canonicalize(&mut self) -> Vec<usize> {
        let n = self.nodes();
        let mut flipped = Vec::new();
        for i in 0..n {
            if self.r[i] < 0.0 {
                self.r[i] = -self.r[i];
                if i > 0 {
                    self.phi[i - 1] += PI;
                }
                if i + 1 < n {
                    self.phi[i] -= PI;
                }
                flipped.push(i);
            }
        }
        self.wrap_phases();
        flipped
    }

    pub fn wrap_phases(&mut self) {
        for p in &mut self.phi {
            *p = wrap_angle(*p);
        }
    }

    pub fn max_amplitude(&self) -> f64 {
        self.r.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Euclidean norm of the amplitude vector.
    pub fn r_l2(&self) -> f64 {
        self.r.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Max-norm distance in `(r, phi, rho, mu)` with phase differences compared modulo `2 pi`.
pub fn state_distance(a: &PolarState, b: &PolarState) -> f64 {
    let dr = a.r.iter().zip(&b.r).map(|(x, y)| (x - y).abs());
    let dp = a.phi.iter().zip(&b.phi).map(|(x, y)| wrap_angle(x - y).abs());
    dr.chain(dp).chain([(a.rho - b.rho).abs(), (a.mu - b.mu).abs()]).fold(0.0, f64::max)
}

/// Left boundary condition; the right end is always off-site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Reflection across node 1: `(r_0, phi_0) = (r_2, -phi_1)`.
    OnSite,
    /// Reflection across `n = 1/2`: `(r_0, phi_0) = (r_1, 0)`.
    OffSite,
}

impl std::fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundaryKind::OnSite => "on_site",
            BoundaryKind::OffSite => "off_site",
        })
    }
}

/// Unit-modulus coupling constant `c = c_re + i c_im`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub c_re: f64,
    pub c_im: f64,
}

impl Coupling {
    pub const DISSIPATIVE: Coupling = Coupling { c_re: 1.0, c_im: 0.0 };
    pub const CONSERVATIVE: Coupling = Coupling { c_re: 0.0, c_im: 1.0 };

    pub fn new(c_re: f64, c_im: f64) -> Result<Self> {
        if ((c_re * c_re + c_im * c_im) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("coupling ({c_re}, {c_im}) is not unit modulus")));
        }
        Ok(Self { c_re, c_im })
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.c_re, self.c_im)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ghosts {
    pub r0: f64,
    pub phi0: f64,
    pub r_right: f64,
    pub phi_right: f64,
}

pub fn ghost_values(state: &PolarState, bc: BoundaryKind) -> Result<Ghosts> {
    state.validate()?;
    let n = state.nodes();
    let (r0, phi0) = match bc {
        BoundaryKind::OnSite => (state.r[1], -state.phi[0]),
        BoundaryKind::OffSite => (state.r[0], 0.0),
    };
    Ok(Ghosts { r0, phi0, r_right: state.r[n - 1], phi_right: 0.0 })
}

/// A neighbour contribution `r[amp] * exp(i * sign * phi[idx])` (phase absent means angle 0).
#[derive(Clone, Copy)]
struct Term {
    amp: usize,
    phase: Option<(usize, f64)>,
}

fn neighbour_terms(n: usize, nodes: usize, bc: BoundaryKind) -> [Term; 2] {
    let right =
        if n + 1 < nodes { Term { amp: n + 1, phase: Some((n, 1.0)) } } else { Term { amp: nodes - 1, phase: None } };
    let left = if n > 0 {
        Term { amp: n - 1, phase: Some((n - 1, -1.0)) }
    } else {
        match bc {
            BoundaryKind::OffSite => Term { amp: 0, phase: None },
            // r_0 exp(-i phi_0) = r_2 exp(i phi_1)
            BoundaryKind::OnSite => Term { amp: 1, phase: Some((0, 1.0)) },
        }
    };
    [right, left]
}

fn term_angle(t: &Term, phi: &[f64]) -> f64 {
    t.phase.map_or(0.0, |(i, s)| s * phi[i])
}

/// A lattice problem: nonlinearity, coupling, coupling strength and boundary condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSystem {
    pub spec: NonlinearitySpec,
    pub coupling: Coupling,
    pub eps: f64,
    pub bc: BoundaryKind,
}

impl LatticeSystem {
    pub fn new(spec: NonlinearitySpec, coupling: Coupling, eps: f64, bc: BoundaryKind) -> Self {
        Self { spec, coupling, eps, bc }
    }

    fn check(&self, state: &PolarState) -> Result<()> {
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("eps = {} must be non-negative", self.eps)));
        }
        state.validate()
    }

    /// Complex node residuals `e^{-i theta_n} G_n`.
    pub fn node_residuals(&self, state: &PolarState) -> Result<Vec<Complex64>> {
        self.check(state)?;
        let n = state.nodes();
        let ec = self.eps * self.coupling.as_complex();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let rn = state.r[i];
            let mut bracket = Complex64::new(-2.0 * rn, 0.0);
            for t in neighbour_terms(i, n, self.bc) {
                bracket += Complex64::from_polar(state.r[t.amp], term_angle(&t, &state.phi));
            }
            let local = self.spec.f(rn, state.mu, self.eps) * rn - Complex64::new(0.0, state.rho * rn);
            out.push(local + ec * bracket);
        }
        Ok(out)
    }

    /// Residual of length `2N`, interleaving amplitude and phase equations.
    pub fn residual(&self, state: &PolarState) -> Result<Vec<f64>> {
        Ok(self.node_residuals(state)?.into_iter().flat_map(|z| [z.re, z.im]).collect())
    }

    /// `2N x (2N+1)` Jacobian in `(r_1..r_N, phi_1..phi_{N-1}, rho, mu)`.
    pub fn jacobian(&self, state: &PolarState) -> Result<DMatrix<f64>> {
        self.check(state)?;
        let n = state.nodes();
        let ec = self.eps * self.coupling.as_complex();
        let mut j = DMatrix::<f64>::zeros(2 * n, 2 * n + 1);
        let col_phi = |k: usize| n + k;
        let col_rho = 2 * n - 1;
        let col_mu = 2 * n;
        let put = |j: &mut DMatrix<f64>, row: usize, col: usize, v: Complex64| {
            j[(2 * row, col)] += v.re;
            j[(2 * row + 1, col)] += v.im;
        };
        for i in 0..n {
            let rn = state.r[i];
            let mu = state.mu;
            let f = self.spec.f(rn, mu, self.eps);
            let fr = self.spec.f_r(rn, mu, self.eps);
            let diag = f + fr * rn - Complex64::new(0.0, state.rho) - 2.0 * ec;
            put(&mut j, i, i, diag);
            put(&mut j, i, col_rho, Complex64::new(0.0, -rn));
            let fmu = Complex64::new(self.spec.lambda_dmu(rn, mu), self.spec.omega_dmu(rn, mu, self.eps));
            put(&mut j, i, col_mu, fmu * rn);
            for t in neighbour_terms(i, n, self.bc) {
                let e = Complex64::from_polar(1.0, term_angle(&t, &state.phi));
                put(&mut j, i, t.amp, ec * e);
                if let Some((k, s)) = t.phase {
                    let d = Complex64::new(0.0, s * state.r[t.amp]) * e;
                    put(&mut j, i, col_phi(k), ec * d);
                }
            }
        }
        Ok(j)
    }
}

pub fn residual(
    spec: &NonlinearitySpec,
    c: Coupling,
    state: &PolarState,
    eps: f64,
    bc: BoundaryKind,
) -> Result<Vec<f64>> {
    LatticeSystem::new(spec.clone(), c, eps, bc).residual(state)
}

pub fn jacobian(
    spec: &NonlinearitySpec,
    c: Coupling,
    state: &PolarState,
    eps: f64,
    bc: BoundaryKind,
) -> Result<DMatrix<f64>> {
    LatticeSystem::new(spec.clone(), c, eps, bc).jacobian(state)
}

/// Residual of the algebraic system for complex amplitudes,
/// `f(|z_n|) z_n - i rho z_n + eps c (z_{n+1} - 2 z_n + z_{n-1})`, with the same ghost rules.
pub fn complex_residual(
    spec: &NonlinearitySpec,
    c: Coupling,
    z: &[Complex64],
    rho: f64,
    mu: f64,
    eps: f64,
    bc: BoundaryKind,
) -> Result<Vec<Complex64>> {
    let n = z.len();
    if n < 2 {
        return Err(Error::Dimension(format!("need at least 2 nodes, got {n}")));
    }
    let ec = eps * c.as_complex();
    let left_ghost = match bc {
        BoundaryKind::OnSite => z[1],
        BoundaryKind::OffSite => z[0],
    };
    Ok((0..n)
        .map(|i| {
            let left = if i > 0 { z[i - 1] } else { left_ghost };
            let right = if i + 1 < n { z[i + 1] } else { z[n - 1] };
            spec.f(z[i].norm(), mu, eps) * z[i] - Complex64::new(0.0, rho) * z[i] + ec * (right - 2.0 * z[i] + left)
        })
        .collect())
}
