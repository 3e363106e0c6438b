//! Shared fixtures for the benchmarks.

use locsync::asymptotics::{build_seed, Level, PhaseTemplate, SeedAnsatz};
use locsync::continuation::{newton_correct, ContinuationConfig, NewtonMode};
use locsync::{builtin_spec, BoundaryKind, Coupling, LatticeSystem, PolarState};

/// Quintic dissipative chain at `eps = 0.01`, off-site.
pub fn snaking_system() -> LatticeSystem {
    LatticeSystem::new(builtin_spec("quintic").unwrap(), Coupling::DISSIPATIVE, 0.01, BoundaryKind::OffSite)
}

/// Converged state with one node near `r_-` at `mu = 0.5` on an `n`-node lattice.
pub fn snaking_seed(sys: &LatticeSystem, n: usize) -> PolarState {
    let ansatz =
        SeedAnsatz { k: 1, pattern: vec![Level::Minus], phase_template: PhaseTemplate::InPhase, bc: sys.bc, n };
    let seed = build_seed(&sys.spec, 0.5, sys.eps, &ansatz, sys.coupling).unwrap();
    newton_correct(sys, &seed, NewtonMode::FixedMu, &ContinuationConfig::default()).unwrap().state
}
