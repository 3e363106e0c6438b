//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. The process exits with
//! status 0 after reporting; set `LOCSYNC_ACCEPTANCE_STRICT=1` to exit non-zero on any FAIL.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use locsync::asymptotics::{
    build_seed, conservative_recruitment, fold_prediction_mu1, isola_curve, mu0_fold_constant, mu0_model_scale,
    snaking_curve, IsolaHalf, Level, PhaseTemplate, SeedAnsatz,
};
use locsync::continuation::{
    continue_both, max_residual, newton_correct, Branch, Closure, ContinuationConfig, NewtonMode,
};
use locsync::dynamics::{integrate, period, unfold, verify_relative_equilibrium};
use locsync::lattice::complex_residual;
use locsync::run::{mismatch_sweep, ModelConfig, RunConfig};
use locsync::{bistable_roots, builtin_spec, BoundaryKind, Coupling, LatticeSystem, PolarState};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 10;

type Criterion = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &str, o: &Outcome) {
    println!("criterion {id} {}: {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn system(spec: &str, c: Coupling, eps: f64, bc: BoundaryKind) -> LatticeSystem {
    LatticeSystem::new(builtin_spec(spec).unwrap(), c, eps, bc)
}

fn corrected(sys: &LatticeSystem, ansatz: &SeedAnsatz, mu: f64) -> locsync::Result<PolarState> {
    let seed = build_seed(&sys.spec, mu, sys.eps, ansatz, sys.coupling)?;
    Ok(newton_correct(sys, &seed, NewtonMode::FixedMu, &ContinuationConfig::default())?.state)
}

fn snaking(spec: &str, eps: f64, bc: BoundaryKind) -> locsync::Result<(Branch, f64)> {
    let sys = system(spec, Coupling::DISSIPATIVE, eps, bc);
    let ansatz = SeedAnsatz { k: 1, pattern: vec![Level::Minus], phase_template: PhaseTemplate::InPhase, bc, n: N };
    let start = Instant::now();
    let seed = corrected(&sys, &ansatz, 0.5)?;
    let b = continue_both(&sys, &seed, &ContinuationConfig::for_eps(eps))?;
    Ok((b, start.elapsed().as_secs_f64()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let spec = builtin_spec("quintic").unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for bc in [BoundaryKind::OffSite, BoundaryKind::OnSite] {
        let (b, secs) = match snaking("quintic", 0.01, bc) {
            Ok(v) => v,
            Err(e) => return Outcome { pass: false, detail: format!("{bc:?}: {e}") },
        };
        let connected = matches!(b.closure, Closure::WindowExit | Closure::Open);
        let folds = b.folds.len();
        let ends = [&b.points[0].state, &b.points[b.points.len() - 1].state];
        let low = ends.iter().any(|s| s.max_amplitude() < 0.2 && s.mu < 0.15);
        let all_on = ends.iter().any(|s| {
            let rp = bistable_roots(&spec, s.mu.min(1.0)).map(|p| p.r_plus).unwrap_or(f64::NAN);
            s.mu > 0.9 && max_abs_diff(&s.r, &[rp; N]) < 0.05
        });
        let ok = connected && folds == 2 * (N - 1) && secs < 30.0 && (bc == BoundaryKind::OnSite || (low && all_on));
        pass &= ok;
        parts.push(format!(
            "{bc:?} closure {} folds {folds} endpoints mu {:.4}/{:.4} max_r {:.3}/{:.3} small_end {low} all_on_end {all_on} time {secs:.2}s",
            b.closure,
            ends[0].mu,
            ends[1].mu,
            ends[0].max_amplitude(),
            ends[1].max_amplitude()
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn criterion_2() -> Outcome {
    let sys = system("quintic", Coupling::CONSERVATIVE, 0.01, BoundaryKind::OnSite);
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 1..=N - 2 {
        let b = match corrected(&sys, &SeedAnsatz::isola(k, N), 0.5)
            .and_then(|s| continue_both(&sys, &s, &ContinuationConfig::default()))
        {
            Ok(b) => b,
            Err(e) => {
                pass = false;
                parts.push(format!("k={k} error {e}"));
                continue;
            }
        };
        let (lo, hi) = b.mu_range();
        let mut interior: f64 = 0.0;
        let mut interface: f64 = 0.0;
        for p in b.points.iter().filter(|p| (0.2..=0.8).contains(&p.state.mu)) {
            for i in 0..k {
                interior = interior.max(wrap(p.state.phi[i] + FRAC_PI_2).abs());
            }
            interface = interface.max(wrap(p.state.phi[k] - FRAC_PI_2).abs());
        }
        let ok = b.closure == Closure::ClosedIsola && interior <= 0.1 && interface <= 0.1 && lo <= 0.2 && hi >= 0.8;
        pass &= ok;
        // Resolution check, reported only: the same run with a five times smaller step bound.
        let fine = ContinuationConfig { ds_max: 0.01, ..ContinuationConfig::default() };
        let refined = corrected(&sys, &SeedAnsatz::isola(k, N), 0.5)
            .and_then(|s| continue_both(&sys, &s, &fine))
            .map_or_else(|e| e.to_string(), |b| b.closure.to_string());
        parts.push(format!(
            "k={k} {} mu [{lo:.3}, {hi:.3}] interior_dev {interior:.3} interface_dev {interface:.3} refined_step {refined}{}",
            b.closure,
            if ok { "" } else { " (fails)" }
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn wrap(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

fn criterion_3() -> Outcome {
    let mut worst = Vec::new();
    for eps in [1e-2, 1e-3] {
        let (b, _) = match snaking("quintic", eps, BoundaryKind::OffSite) {
            Ok(v) => v,
            Err(e) => return Outcome { pass: false, detail: format!("eps {eps}: {e}") },
        };
        let devs: Vec<f64> = b.folds.iter().filter(|f| f.mu > 0.9).map(|f| ((1.0 - f.mu) / eps - 1.0).abs()).collect();
        if devs.is_empty() {
            return Outcome { pass: false, detail: format!("eps {eps}: no folds above mu = 0.9") };
        }
        // The leading-order prediction itself: mu = 1 - eps.
        debug_assert!((fold_prediction_mu1(eps).mu - (1.0 - eps)).abs() < 1e-15);
        worst.push((eps, devs.len(), devs.iter().copied().fold(0.0, f64::max)));
    }
    let pass = worst[0].2 <= 0.5 && worst[1].2 < worst[0].2;
    let detail = worst
        .iter()
        .map(|(eps, n, w)| format!("eps {eps:.0e}: {n} folds, max |(1-mu)/eps - 1| = {w:.4}"))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { pass, detail }
}

fn criterion_4() -> Outcome {
    let spec = builtin_spec("quintic").unwrap();
    let scale = mu0_model_scale(&spec).unwrap();
    let target = mu0_fold_constant();
    let mut errs = Vec::new();
    let mut parts = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        let (b, _) = match snaking("quintic", eps, BoundaryKind::OffSite) {
            Ok(v) => v,
            Err(e) => return Outcome { pass: false, detail: format!("eps {eps}: {e}") },
        };
        let Some(mu) = b.fold_mus().into_iter().reduce(f64::min) else {
            return Outcome { pass: false, detail: format!("eps {eps}: no folds") };
        };
        let raw = mu / eps.powf(2.0 / 3.0);
        let normalized = raw / scale;
        let err = (normalized / target - 1.0).abs();
        errs.push(err);
        parts.push(format!("eps {eps:.0e}: raw {raw:.4} normalized {normalized:.4} rel_err {err:.4}"));
    }
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let pass = errs[2] <= 0.10 && monotone;
    Outcome { pass, detail: format!("target {target:.4}, model scale {scale:.4}; {}", parts.join("; ")) }
}

fn criterion_5() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (slope, expect_converge) in [(5.0, false), (1.0, true)] {
        let cfg = RunConfig {
            model: ModelConfig { omega1: Some(vec![0.0, slope]), ..ModelConfig::named("quintic") },
            ..RunConfig::default()
        };
        let out = match mismatch_sweep(&cfg) {
            Ok(o) => o,
            Err(e) => return Outcome { pass: false, detail: e.to_string() },
        };
        let converged: Vec<bool> = out.attempts.iter().map(|a| a.converged).collect();
        let ok = converged.iter().all(|&c| c == expect_converge);
        let mut phase_dev: f64 = 0.0;
        if expect_converge {
            for a in &out.attempts {
                if let Some(s) = a.sin_phi_k {
                    phase_dev = phase_dev.max((s - out.report.sin_phi_limit).abs());
                }
            }
        }
        let ok = ok && phase_dev <= 0.1;
        pass &= ok;
        parts.push(format!(
            "omega_1 = {slope} r: Delta {:.4} vs r+/r- {:.4}, converged {converged:?}{}",
            out.report.delta,
            out.report.threshold,
            if expect_converge {
                format!(", max |sin phi_k - sin phi_inf| {phase_dev:.4} (k = {})", out.k)
            } else {
                String::new()
            }
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> PolarState {
    let r = (0..n).map(|_| rng.random_range(0.05..1.6)).collect();
    let phi = (0..n - 1).map(|_| rng.random_range(-PI..PI)).collect();
    PolarState::new(r, phi, rng.random_range(-1.0..1.0), rng.random_range(0.05..0.95)).unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = builtin_spec("quintic_rotating").unwrap();
    let couplings = [Coupling::DISSIPATIVE, Coupling::CONSERVATIVE];
    let bcs = [BoundaryKind::OnSite, BoundaryKind::OffSite];
    let (mut jac_err, mut polar_err, mut gauge_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for c in couplings {
        for bc in bcs {
            for _ in 0..100 {
                let n = rng.random_range(2..=8);
                let eps = rng.random_range(0.0..0.5);
                let s = random_state(&mut rng, n);
                let sys = LatticeSystem::new(spec.clone(), c, eps, bc);
                let jac = sys.jacobian(&s).unwrap();
                let x = s.to_vector();
                let h = 1e-5;
                for col in 0..x.len() {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[col] += h;
                    xm[col] -= h;
                    let fp = sys.residual(&PolarState::from_vector(n, &xp).unwrap()).unwrap();
                    let fm = sys.residual(&PolarState::from_vector(n, &xm).unwrap()).unwrap();
                    for row in 0..fp.len() {
                        jac_err = jac_err.max(((fp[row] - fm[row]) / (2.0 * h) - jac[(row, col)]).abs());
                    }
                }
                let z = s.to_complex();
                let polar = sys.node_residuals(&s).unwrap();
                let cplx = complex_residual(&spec, c, &z, s.rho, s.mu, eps, bc).unwrap();
                for i in 0..n {
                    polar_err = polar_err.max((polar[i] - cplx[i] * Complex64::from_polar(1.0, -z[i].arg())).norm());
                }
                let g = Complex64::from_polar(1.0, rng.random_range(-PI..PI));
                let zg: Vec<Complex64> = z.iter().map(|v| v * g).collect();
                let rot = complex_residual(&spec, c, &zg, s.rho, s.mu, eps, bc).unwrap();
                for i in 0..n {
                    gauge_err = gauge_err.max((rot[i] - cplx[i] * g).norm());
                }
            }
        }
    }

    let quintic = builtin_spec("quintic").unwrap();
    let mut curve_res: f64 = 0.0;
    for bc in bcs {
        for c in couplings {
            let sys = LatticeSystem::new(quintic.clone(), c, 0.0, bc);
            for i in 1..20 {
                let s = i as f64 * 0.1;
                for seg in 0..N {
                    curve_res =
                        curve_res.max(max_residual(&sys, &snaking_curve(&quintic, N, seg, s).unwrap()).unwrap());
                }
                for k in 1..=N - 2 {
                    for half in [IsolaHalf::Lower, IsolaHalf::Upper] {
                        let st = isola_curve(&quintic, N, k, s, half).unwrap();
                        curve_res = curve_res.max(max_residual(&sys, &st).unwrap());
                    }
                }
            }
        }
    }

    let (branch, _) = snaking("quintic_rotating", 0.01, BoundaryKind::OffSite).unwrap();
    let mut re_dev: f64 = 0.0;
    for j in 0..5 {
        let p = &branch.points[j * (branch.points.len() - 1) / 4].state;
        let z0 = unfold(p, BoundaryKind::OffSite);
        let traj = integrate(&spec, Coupling::DISSIPATIVE, &z0, 0.01, p.mu, period(p.rho).unwrap(), 1e-3).unwrap();
        re_dev = re_dev.max(verify_relative_equilibrium(&traj, &z0, p.rho).unwrap());
    }

    let z0 = [Complex64::new(0.9, 0.2)];
    let end = |dt: f64| integrate(&spec, Coupling::DISSIPATIVE, &z0, 0.0, 0.5, 1.0, dt).unwrap().last().unwrap()[0];
    let (a, b, c) = (end(0.1), end(0.05), end(0.025));
    let order = ((a - b).norm() / (b - c).norm()).log2();

    let mut ratios = Vec::new();
    let seeds = [
        (SeedAnsatz::all_plus(3, N, PhaseTemplate::InPhase, BoundaryKind::OffSite), Coupling::DISSIPATIVE),
        (SeedAnsatz::plus_then_minus(2, N, PhaseTemplate::InPhase, BoundaryKind::OnSite), Coupling::DISSIPATIVE),
        (SeedAnsatz::isola(2, N), Coupling::CONSERVATIVE),
    ];
    for (ansatz, c) in &seeds {
        let dist = |eps: f64| -> f64 {
            let sys = LatticeSystem::new(quintic.clone(), *c, eps, ansatz.bc);
            let seed = build_seed(&quintic, 0.5, eps, ansatz, *c).unwrap();
            let cor = newton_correct(&sys, &seed, NewtonMode::FixedMu, &ContinuationConfig::default()).unwrap().state;
            max_abs_diff(&seed.r, &cor.r)
        };
        ratios.push(dist(0.01) / dist(0.005));
    }

    let checks = [
        jac_err <= 1e-6,
        polar_err <= 1e-12,
        gauge_err <= 1e-12,
        curve_res <= 1e-12,
        re_dev <= 1e-6,
        (3.8..=4.2).contains(&order),
        ratios.iter().all(|r| (3.0..=5.0).contains(r)),
    ];
    Outcome {
        pass: checks.iter().all(|&c| c),
        detail: format!(
            "jacobian fd {jac_err:.2e}, polar/complex {polar_err:.2e}, gauge {gauge_err:.2e}, eps=0 curves {curve_res:.2e}, \
             relative equilibria {re_dev:.2e}, rk4 order {order:.3}, seed distance ratios {:?}",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    }
}

fn criterion_7() -> Outcome {
    let sys = system("quintic", Coupling::CONSERVATIVE, 0.01, BoundaryKind::OnSite);
    let b = match corrected(&sys, &SeedAnsatz::isola(2, N), 0.5)
        .and_then(|s| continue_both(&sys, &s, &ContinuationConfig::default()))
    {
        Ok(b) => b,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let mut pass = b.closure == Closure::ClosedIsola;
    let mut kappas = Vec::new();
    let mut parts = Vec::new();
    for f in b.folds.iter().filter(|f| f.mu > 0.9) {
        let s = &f.state;
        let active = s.r.iter().take_while(|&&r| r > 0.5).count();
        if active < 2 {
            pass = false;
            parts.push(format!("fold mu {:.5}: only {active} active nodes", f.mu));
            continue;
        }
        let kappa = if s.phi[active - 2].sin() > 0.0 { 1 } else { -1 };
        let predicted = conservative_recruitment(kappa, active).unwrap();
        let observed = 1 + (0..active).min_by(|&a, &c| (s.r[a] - 1.0).abs().total_cmp(&(s.r[c] - 1.0).abs())).unwrap();
        pass &= predicted == observed;
        kappas.push(kappa);
        parts.push(format!(
            "fold mu {:.5}: active {active}, kappa {kappa:+}, predicted node {predicted}, observed node {observed}",
            f.mu
        ));
    }
    pass &= kappas.contains(&1) && kappas.contains(&-1);
    Outcome { pass, detail: format!("{}; {}", b.closure, parts.join("; ")) }
}

fn main() {
    let criteria: [(&str, Criterion); 7] = [
        ("snaking branch", criterion_1),
        ("isola stack", criterion_2),
        ("folds near mu = 1", criterion_3),
        ("folds near mu = 0", criterion_4),
        ("frequency mismatch", criterion_5),
        ("property suite", criterion_6),
        ("conservative recruitment", criterion_7),
    ];
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        report(i + 1, title, &o);
    }
    println!("acceptance: {} of 7 criteria pass", 7 - failed);
    if failed > 0 && std::env::var("LOCSYNC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
