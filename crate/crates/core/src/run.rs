//! Declarative run configuration and the file-producing commands behind the CLI.
//!
//! Every command writes into `<output_dir>/<run_id>/`. Outputs are deterministic functions of
//! the config; wall-clock time goes to a separate `timing.json`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::asymptotics::{
    build_seed, fold_prediction_mu0, fold_prediction_mu0_model, fold_prediction_mu1, mismatch_bound,
    mismatch_interface_phase, Level, MismatchReport, PhaseTemplate, SeedAnsatz,
};
use crate::continuation::{
    continue_both, continue_branch, max_residual, newton_correct, Branch, BranchPoint, Closure, ContinuationConfig,
    NewtonMode,
};
use crate::dynamics::{integrate, period, relative_deviation, unfold, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::lattice::{wrap_angle, BoundaryKind, Coupling, LatticeSystem, PolarState};
use crate::model::{builtin_spec, NonlinearitySpec, BUILTIN_NAMES};

/// Nonlinearity selector: a built-in name or polynomial coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// `lambda = lambda_mu * mu + c0 + c1 r^2 + c2 r^4 + ...`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial_lambda: Option<Vec<f64>>,
    /// Coefficient of `mu` in `lambda` for polynomial models (default -1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_mu: Option<f64>,
    /// Constant `omega_0` for polynomial models (default 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0_const: Option<f64>,
    /// Coefficients of `r^0, r^1, ...` of `omega_1`; replaces the model's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega1: Option<Vec<f64>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::named("quintic")
    }
}

impl ModelConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: Some(name.to_string()),
            polynomial_lambda: None,
            lambda_mu: None,
            omega0_const: None,
            omega1: None,
        }
    }

    pub fn spec(&self) -> Result<NonlinearitySpec> {
        let mut spec = match (&self.name, &self.polynomial_lambda) {
            (Some(name), None) => {
                if self.lambda_mu.is_some() || self.omega0_const.is_some() {
                    return Err(Error::Config("lambda_mu and omega0_const apply to polynomial models only".into()));
                }
                builtin_spec(name).map_err(|_| {
                    Error::Config(format!("unknown model `{name}`, expected one of {}", BUILTIN_NAMES.join(", ")))
                })?
            }
            (None, Some(coeffs)) => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config("polynomial_lambda needs finite coefficients".into()));
                }
                let lm = self.lambda_mu.unwrap_or(-1.0);
                let mut s = NonlinearitySpec::even_polynomial("polynomial", coeffs.clone(), lm);
                if let Some(w) = self.omega0_const {
                    s = s.with_omega0(vec![w]);
                }
                s
            }
            _ => return Err(Error::Config("model needs exactly one of `name` and `polynomial_lambda`".into())),
        };
        if let Some(w1) = &self.omega1 {
            if w1.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config("omega1 coefficients must be finite".into()));
            }
            spec = spec.with_omega1(w1.clone());
        }
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    Dissipative,
    Conservative,
    General { c_re: f64, c_im: f64 },
}

impl CouplingConfig {
    pub fn coupling(&self) -> Result<Coupling> {
        match *self {
            CouplingConfig::Dissipative => Ok(Coupling::DISSIPATIVE),
            CouplingConfig::Conservative => Ok(Coupling::CONSERVATIVE),
            CouplingConfig::General { c_re, c_im } => {
                Coupling::new(c_re, c_im).map_err(|e| Error::Config(e.to_string()))
            }
        }
    }
}

/// Seed descriptor: core pattern of `+` (`r_+`) and `-` (`r_-`) nodes, planted at `mu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub pattern: String,
    pub mu: f64,
    pub template: PhaseTemplate,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { pattern: "-".into(), mu: 0.5, template: PhaseTemplate::InPhase }
    }
}

impl SeedConfig {
    /// Lower half of the conservative isola with `k` nodes at `r_+`.
    pub fn isola(k: usize) -> Self {
        Self { pattern: format!("{}-", "+".repeat(k)), mu: 0.5, template: PhaseTemplate::Conservative }
    }

    pub fn levels(&self) -> Result<Vec<Level>> {
        self.pattern
            .chars()
            .map(|ch| match ch {
                '+' => Ok(Level::Plus),
                '-' => Ok(Level::Minus),
                _ => Err(Error::Config(format!("seed pattern `{}` may only contain + and -", self.pattern))),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Both,
    Forward,
    Backward,
}

/// Parameters of the frequency-mismatch experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchConfig {
    /// Nodes at `r_+` ahead of the single `r_-` node.
    pub k: usize,
    pub mu: f64,
    pub eps_values: Vec<f64>,
    pub newton_max_iter: usize,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        Self { k: 20, mu: 0.75, eps_values: vec![1e-2, 1e-3, 1e-4], newton_max_iter: 50 }
    }
}

/// Grid for the `sweep` command; each entry produces one independent continuation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepConfig {
    Eps(Vec<f64>),
    IsolaK(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub coupling: CouplingConfig,
    pub n: usize,
    pub eps: f64,
    pub boundary: BoundaryKind,
    pub seed: SeedConfig,
    pub direction: Direction,
    pub continuation: ContinuationConfig,
    pub output_dir: PathBuf,
    /// Defaults to a prefix of the config hash.
    pub run_id: Option<String>,
    pub mismatch: MismatchConfig,
    pub sweep: Option<SweepConfig>,
    /// Worker threads for `sweep`.
    pub threads: usize,
    /// Simulation horizon; `None` means one rotation period (or 10 when `rho` is near zero).
    pub t_end: Option<f64>,
    pub dt: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            coupling: CouplingConfig::Dissipative,
            n: 10,
            eps: 0.01,
            boundary: BoundaryKind::OffSite,
            seed: SeedConfig::default(),
            direction: Direction::Both,
            continuation: ContinuationConfig::default(),
            output_dir: PathBuf::from("runs"),
            run_id: None,
            mismatch: MismatchConfig::default(),
            sweep: None,
            threads: 4,
            t_end: None,
            dt: DEFAULT_DT,
        }
    }
}

/// Largest supported lattice.
pub const MAX_NODES: usize = 64;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.spec()?;
        self.coupling.coupling()?;
        if self.n < 2 || self.n > MAX_NODES {
            return Err(Error::Config(format!("n = {} outside 2..={MAX_NODES}", self.n)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps = {} must be finite and non-negative", self.eps)));
        }
        let levels = self.seed.levels()?;
        if levels.is_empty() || levels.len() > self.n - 1 {
            return Err(Error::Config(format!("seed pattern length {} outside 1..={}", levels.len(), self.n - 1)));
        }
        if !(self.seed.mu > 0.0 && self.seed.mu < 1.0) {
            return Err(Error::Config(format!("seed mu = {} outside (0, 1)", self.seed.mu)));
        }
        self.continuation.validate().map_err(|e| Error::Config(e.to_string()))?;
        let m = &self.mismatch;
        if m.k == 0 || !(m.mu > 0.0 && m.mu < 1.0) || m.newton_max_iter == 0 {
            return Err(Error::Config("mismatch needs k >= 1, mu in (0, 1) and newton_max_iter >= 1".into()));
        }
        if m.eps_values.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Config("mismatch eps values must be positive".into()));
        }
        match &self.sweep {
            Some(SweepConfig::Eps(v)) if v.is_empty() || v.iter().any(|e| !(*e >= 0.0 && e.is_finite())) => {
                return Err(Error::Config("sweep eps values must be non-negative and non-empty".into()))
            }
            Some(SweepConfig::IsolaK(v)) if v.is_empty() || v.iter().any(|&k| k == 0 || k + 2 > self.n) => {
                return Err(Error::Config(format!("sweep isola k values must lie in 1..={}", self.n - 2)))
            }
            _ => {}
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if !(self.dt > 0.0) || self.t_end.is_some_and(|t| !(t >= self.dt)) {
            return Err(Error::Config("need dt > 0 and t_end >= dt".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<NonlinearitySpec> {
        self.model.spec()
    }

    pub fn system(&self) -> Result<LatticeSystem> {
        Ok(LatticeSystem::new(self.spec()?, self.coupling.coupling()?, self.eps, self.boundary))
    }

    pub fn ansatz(&self) -> Result<SeedAnsatz> {
        let pattern = self.seed.levels()?;
        Ok(SeedAnsatz { k: pattern.len(), pattern, phase_template: self.seed.template, bc: self.boundary, n: self.n })
    }

    /// Hex SHA-256 of the canonical JSON form of this config.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(serde_json::to_vec(self).unwrap_or_default()))
    }

    pub fn resolved_run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("run-{}", &self.hash()[..12]))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.resolved_run_id())
    }
}

/// Formats with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn branch_csv_header(n: usize) -> String {
    let mut h = String::from("step,arclength,mu,rho,r_l2");
    for i in 1..=n {
        write!(h, ",r_{i}").unwrap();
    }
    for i in 1..n {
        write!(h, ",phi_{i}").unwrap();
    }
    h.push_str(",is_fold,newton_iters");
    h
}

pub fn branch_csv(branch: &Branch) -> String {
    let n = branch.points.first().map_or(0, |p| p.state.nodes());
    let mut out = branch_csv_header(n);
    out.push('\n');
    for (i, p) in branch.points.iter().enumerate() {
        let s = &p.state;
        let mut cols = vec![i.to_string(), fmt_f64(p.arclength), fmt_f64(s.mu), fmt_f64(s.rho), fmt_f64(s.r_l2())];
        cols.extend(s.r.iter().map(|&x| fmt_f64(x)));
        cols.extend(s.phi.iter().map(|&x| fmt_f64(wrap_angle(x))));
        cols.push(u8::from(p.is_fold).to_string());
        cols.push(p.newton_iters.to_string());
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

/// One parsed row of `branch.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvPoint {
    pub step: usize,
    pub arclength: f64,
    pub state: PolarState,
    pub is_fold: bool,
    pub newton_iters: usize,
}

pub fn parse_branch_csv(text: &str) -> Result<Vec<CsvPoint>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty branch file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with("r_") && *c != &"r_l2").count();
    if n < 2 || header != branch_csv_header(n) {
        return Err(Error::Parse("unexpected branch.csv header".into()));
    }
    let width = 5 + n + (n - 1) + 2;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| Error::Parse(format!("row {}: {what}", lineno + 1));
        if f.len() != width {
            return Err(bad(&format!("expected {width} columns, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("not a number: `{s}`")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("not an integer: `{s}`")));
        let r = f[5..5 + n].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let phi = f[5 + n..5 + 2 * n - 1].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let state = PolarState { r, phi, rho: num(f[3])?, mu: num(f[2])? };
        if state.validate().is_err() {
            return Err(bad("non-finite state"));
        }
        out.push(CsvPoint {
            step: int(f[0])?,
            arclength: num(f[1])?,
            state,
            is_fold: match f[width - 2] {
                "0" => false,
                "1" => true,
                other => return Err(bad(&format!("is_fold must be 0 or 1, got `{other}`"))),
            },
            newton_iters: int(f[width - 1])?,
        });
    }
    if out.is_empty() {
        return Err(Error::Parse("branch file has no rows".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldEntry {
    pub mu: f64,
    pub arclength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub config: RunConfig,
    pub seed: String,
    pub config_hash: String,
    pub closure: Closure,
    pub points: usize,
    pub arclength: f64,
    pub mu_range: (f64, f64),
    pub folds: Vec<FoldEntry>,
    pub endpoints: (PolarState, PolarState),
    pub terminations: Vec<crate::continuation::Termination>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub run_id: String,
    pub wall_time_s: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Asymptotic seed for the config, before correction.
pub fn seed_state(cfg: &RunConfig) -> Result<PolarState> {
    build_seed(&cfg.spec()?, cfg.seed.mu, cfg.eps, &cfg.ansatz()?, cfg.coupling.coupling()?)
}

/// Seed corrected at fixed `mu`; a failure is reported as [`Error::SeedNotConverged`].
pub fn corrected_seed(cfg: &RunConfig) -> Result<(PolarState, PolarState, usize)> {
    let sys = cfg.system()?;
    let raw = seed_state(cfg)?;
    match newton_correct(&sys, &raw, NewtonMode::FixedMu, &cfg.continuation) {
        Ok(c) => Ok((raw, c.state, c.iters)),
        Err(Error::NoConvergence { residual, .. }) => Err(Error::SeedNotConverged(residual)),
        Err(Error::SingularJacobian) => Err(Error::SeedNotConverged(f64::NAN)),
        Err(e) => Err(e),
    }
}

/// Runs the continuation described by `cfg` without touching the file system.
pub fn run_branch(cfg: &RunConfig) -> Result<Branch> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let (_, seed, _) = corrected_seed(cfg)?;
    let branch = match cfg.direction {
        Direction::Both => continue_both(&sys, &seed, &cfg.continuation)?,
        Direction::Forward => continue_branch(&sys, &seed, 1, &cfg.continuation)?,
        Direction::Backward => continue_branch(&sys, &seed, -1, &cfg.continuation)?,
    };
    Ok(branch.with_seed_descriptor(format!("{} mu={}", cfg.ansatz()?.describe(), cfg.seed.mu)))
}

pub fn summarize(cfg: &RunConfig, branch: &Branch) -> Summary {
    let first = branch.points.first().map(|p| p.state.clone());
    let last = branch.points.last().map(|p| p.state.clone());
    Summary {
        run_id: cfg.resolved_run_id(),
        config: cfg.clone(),
        seed: branch.provenance.seed.clone(),
        config_hash: branch.provenance.config_hash.clone(),
        closure: branch.closure,
        points: branch.points.len(),
        arclength: branch.arclength(),
        mu_range: branch.mu_range(),
        folds: branch.folds.iter().map(|f| FoldEntry { mu: f.mu, arclength: f.arclength }).collect(),
        endpoints: (
            first.unwrap_or_else(|| PolarState::zeros(cfg.n, 0.0, 0.0)),
            last.unwrap_or_else(|| PolarState::zeros(cfg.n, 0.0, 0.0)),
        ),
        terminations: branch.terminations.clone(),
    }
}

/// `continue`: writes `branch.csv`, `summary.json` and `timing.json` into the run directory.
pub fn cmd_continue(cfg: &RunConfig) -> Result<Summary> {
    let start = Instant::now();
    let branch = run_branch(cfg)?;
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("branch.csv"), branch_csv(&branch))?;
    let summary = summarize(cfg, &branch);
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(
        &dir.join("timing.json"),
        &Timing { run_id: summary.run_id.clone(), wall_time_s: start.elapsed().as_secs_f64() },
    )?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub ansatz: String,
    pub seed: PolarState,
    pub seed_residual: f64,
    pub corrected: Option<PolarState>,
    pub newton_iters: Option<usize>,
    /// Max-norm distance between seed and corrected amplitudes.
    pub amplitude_correction: Option<f64>,
}

/// `seed`: writes `seed.json`. A seed that does not converge is still written before the error.
pub fn cmd_seed(cfg: &RunConfig) -> Result<SeedReport> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let raw = seed_state(cfg)?;
    let res = max_residual(&sys, &raw)?;
    let corrected = corrected_seed(cfg);
    let (c, iters) = match &corrected {
        Ok((_, c, it)) => (Some(c.clone()), Some(*it)),
        Err(_) => (None, None),
    };
    let report = SeedReport {
        ansatz: cfg.ansatz()?.describe(),
        amplitude_correction: c
            .as_ref()
            .map(|c| c.r.iter().zip(&raw.r).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()))),
        seed: raw,
        seed_residual: res,
        corrected: c,
        newton_iters: iters,
    };
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("seed.json"), &report)?;
    corrected?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualCheck {
    pub points: usize,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCheck {
    pub step: usize,
    pub mu: f64,
    pub rho: f64,
    pub horizon: f64,
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldCheck {
    pub mu: f64,
    pub predicted: f64,
    /// Near `mu = 1`: `|1 - (1 - mu)/eps|`; near `mu = 0`: relative error against the prediction.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub branch: String,
    pub residuals: ResidualCheck,
    pub relative_equilibria: Vec<EquilibriumCheck>,
    pub folds_near_one: Vec<FoldCheck>,
    pub folds_near_zero: Vec<FoldCheck>,
    pub pass: bool,
}

/// Relative-equilibrium tolerance for `verify`.
pub const EQUILIBRIUM_TOL: f64 = 1e-6;
/// Horizon used when `|rho|` is too small for a period.
pub const FIXED_HORIZON: f64 = 10.0;

/// Integrates the unfolded state and measures the departure from rigid rotation at `rho`.
pub fn equilibrium_check(cfg: &RunConfig, state: &PolarState, step: usize) -> Result<EquilibriumCheck> {
    let spec = cfg.spec()?;
    let z0: Vec<Complex64> = unfold(state, cfg.boundary);
    let horizon = match cfg.t_end {
        Some(t) => t,
        None => period(state.rho).unwrap_or(FIXED_HORIZON),
    };
    let traj = integrate(&spec, cfg.coupling.coupling()?, &z0, cfg.eps, state.mu, horizon, cfg.dt)?;
    let deviation = if traj.aborted { f64::INFINITY } else { relative_deviation(&traj, &z0, state.rho)? };
    Ok(EquilibriumCheck { step, mu: state.mu, rho: state.rho, horizon, deviation, pass: deviation <= EQUILIBRIUM_TOL })
}

/// `verify`: re-checks a branch file against the config and writes `verify.json`.
pub fn cmd_verify(cfg: &RunConfig, branch_path: &Path) -> Result<VerifyReport> {
    cfg.validate()?;
    let text = std::fs::read_to_string(branch_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", branch_path.display())))?;
    let rows = parse_branch_csv(&text)?;
    if rows[0].state.nodes() != cfg.n {
        return Err(Error::Config(format!("branch has {} nodes, config says {}", rows[0].state.nodes(), cfg.n)));
    }
    let sys = cfg.system()?;
    let mut worst: f64 = 0.0;
    for row in &rows {
        worst = worst.max(max_residual(&sys, &row.state)?);
    }
    // The CSV carries 17 significant digits, so allow for the rounding of the stored state.
    let tol = cfg.continuation.newton_tol * 10.0;
    let residuals = ResidualCheck { points: rows.len(), max_residual: worst, tol, pass: worst <= tol };

    let picks: Vec<usize> =
        if rows.len() <= 5 { (0..rows.len()).collect() } else { (0..5).map(|i| i * (rows.len() - 1) / 4).collect() };
    let relative_equilibria =
        picks.iter().map(|&i| equilibrium_check(cfg, &rows[i].state, rows[i].step)).collect::<Result<Vec<_>>>()?;

    let spec = cfg.spec()?;
    let mu0_pred = fold_prediction_mu0_model(&spec, cfg.eps).unwrap_or_else(|_| fold_prediction_mu0(cfg.eps)).mu;
    let mu1_pred = fold_prediction_mu1(cfg.eps).mu;
    let mut folds_near_one = Vec::new();
    let mut folds_near_zero = Vec::new();
    for row in rows.iter().filter(|r| r.is_fold) {
        let mu = row.state.mu;
        if mu > 0.5 {
            let error = if cfg.eps > 0.0 { (1.0 - (1.0 - mu) / cfg.eps).abs() } else { f64::NAN };
            folds_near_one.push(FoldCheck { mu, predicted: mu1_pred, error });
        } else {
            folds_near_zero.push(FoldCheck { mu, predicted: mu0_pred, error: (mu / mu0_pred - 1.0).abs() });
        }
    }
    let pass = residuals.pass && relative_equilibria.iter().all(|c| c.pass);
    let report = VerifyReport {
        branch: branch_path.display().to_string(),
        residuals,
        relative_equilibria,
        folds_near_one,
        folds_near_zero,
        pass,
    };
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("verify.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchAttempt {
    pub eps: f64,
    pub converged: bool,
    pub newton_iters: Option<usize>,
    pub residual: f64,
    /// `sin(phi_k)` across the `r_+ / r_-` interface of the converged state.
    pub sin_phi_k: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchOutput {
    pub report: MismatchReport,
    pub k: usize,
    pub n: usize,
    /// Finite-core leading-order `sin(phi_k)`, when the limit has a real solution.
    pub sin_phi_k_leading: Option<f64>,
    pub attempts: Vec<MismatchAttempt>,
}

/// Newton attempts on the pattern `k x r_+, r_-` with in-phase start at each mismatch eps.
pub fn mismatch_sweep(cfg: &RunConfig) -> Result<MismatchOutput> {
    let spec = cfg.spec()?;
    let m = &cfg.mismatch;
    let report = mismatch_bound(&spec, m.mu)?;
    let n = cfg.n.max(m.k + 4);
    let mut ansatz = SeedAnsatz::plus_then_minus(m.k, n, PhaseTemplate::InPhase, cfg.boundary);
    ansatz.n = n;
    let coupling = cfg.coupling.coupling()?;
    let newton = ContinuationConfig { newton_max_iter: m.newton_max_iter, ..cfg.continuation.clone() };
    let mut attempts = Vec::new();
    for &eps in &m.eps_values {
        let sys = LatticeSystem::new(spec.clone(), coupling, eps, cfg.boundary);
        let seed = build_seed(&spec, m.mu, eps, &ansatz, coupling)?;
        attempts.push(match newton_correct(&sys, &seed, NewtonMode::FixedMu, &newton) {
            Ok(c) => MismatchAttempt {
                eps,
                converged: true,
                newton_iters: Some(c.iters),
                residual: c.residual,
                sin_phi_k: Some(c.state.phi[m.k - 1].sin()),
                error: None,
            },
            Err(e) => MismatchAttempt {
                eps,
                converged: false,
                newton_iters: None,
                residual: match e {
                    Error::NoConvergence { residual, .. } => residual,
                    _ => f64::NAN,
                },
                sin_phi_k: None,
                error: Some(e.to_string()),
            },
        });
    }
    let sin_phi_k_leading =
        if report.has_real_solution { Some(mismatch_interface_phase(&spec, m.mu, m.k)?) } else { None };
    Ok(MismatchOutput { report, k: m.k, n, sin_phi_k_leading, attempts })
}

/// `mismatch`: writes `mismatch.json`.
pub fn cmd_mismatch(cfg: &RunConfig) -> Result<MismatchOutput> {
    cfg.validate()?;
    let out = mismatch_sweep(cfg)?;
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("mismatch.json"), &out)?;
    Ok(out)
}

/// `simulate`: integrates the corrected seed on the unfolded chain and writes
/// `trajectory.csv` (time, then `|Z_n|` and `arg Z_n` per node, every `stride` steps) and
/// `simulate.json` with the relative-equilibrium deviation.
pub fn cmd_simulate(cfg: &RunConfig, stride: usize) -> Result<EquilibriumCheck> {
    cfg.validate()?;
    let (_, state, _) = corrected_seed(cfg)?;
    let spec = cfg.spec()?;
    let z0 = unfold(&state, cfg.boundary);
    let horizon = match cfg.t_end {
        Some(t) => t,
        None => period(state.rho).unwrap_or(FIXED_HORIZON),
    };
    let traj = integrate(&spec, cfg.coupling.coupling()?, &z0, cfg.eps, state.mu, horizon, cfg.dt)?;
    let mut csv = String::from("t");
    for i in 1..=z0.len() {
        write!(csv, ",abs_{i}").unwrap();
    }
    for i in 1..=z0.len() {
        write!(csv, ",arg_{i}").unwrap();
    }
    csv.push('\n');
    let stride = stride.max(1);
    for (j, (t, z)) in traj.times.iter().zip(&traj.z_samples).enumerate() {
        if j % stride != 0 && j + 1 != traj.times.len() {
            continue;
        }
        let mut cols = vec![fmt_f64(*t)];
        cols.extend(z.iter().map(|v| fmt_f64(v.norm())));
        cols.extend(z.iter().map(|v| fmt_f64(v.arg())));
        csv.push_str(&cols.join(","));
        csv.push('\n');
    }
    let deviation = if traj.aborted { f64::INFINITY } else { relative_deviation(&traj, &z0, state.rho)? };
    let check = EquilibriumCheck {
        step: 0,
        mu: state.mu,
        rho: state.rho,
        horizon,
        deviation,
        pass: deviation <= EQUILIBRIUM_TOL,
    };
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("trajectory.csv"), csv)?;
    write_json(&dir.join("simulate.json"), &check)?;
    Ok(check)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub run_id: String,
    pub closure: Option<Closure>,
    pub folds: Option<usize>,
    pub mu_range: Option<(f64, f64)>,
    pub error: Option<String>,
}

/// Configs of the individual sweep runs, each with its own run id under the sweep directory.
pub fn sweep_configs(cfg: &RunConfig) -> Result<Vec<RunConfig>> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| Error::Config("sweep needs a `sweep` grid".into()))?;
    let base_dir = cfg.run_dir();
    let mut base = cfg.clone();
    base.sweep = None;
    base.output_dir = base_dir;
    Ok(match sweep {
        SweepConfig::Eps(values) => values
            .iter()
            .enumerate()
            .map(|(i, &eps)| RunConfig { eps, run_id: Some(format!("eps-{i:02}")), ..base.clone() })
            .collect(),
        SweepConfig::IsolaK(values) => values
            .iter()
            .map(|&k| RunConfig {
                seed: SeedConfig { mu: base.seed.mu, ..SeedConfig::isola(k) },
                boundary: BoundaryKind::OnSite,
                run_id: Some(format!("k-{k:02}")),
                ..base.clone()
            })
            .collect(),
    })
}

/// `sweep`: runs every grid entry (on `threads` workers) and writes `sweep.json`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepEntry>> {
    cfg.validate()?;
    let runs = sweep_configs(cfg)?;
    for r in &runs {
        r.validate()?;
    }
    let mut results: Vec<Option<SweepEntry>> = vec![None; runs.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..cfg.threads.min(runs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(run) = runs.get(i) else { break };
                let entry = match cmd_continue(run) {
                    Ok(s) => SweepEntry {
                        run_id: s.run_id,
                        closure: Some(s.closure),
                        folds: Some(s.folds.len()),
                        mu_range: Some(s.mu_range),
                        error: None,
                    },
                    Err(e) => SweepEntry {
                        run_id: run.resolved_run_id(),
                        closure: None,
                        folds: None,
                        mu_range: None,
                        error: Some(e.to_string()),
                    },
                };
                slots.lock().unwrap()[i] = Some(entry);
            });
        }
    });
    let entries: Vec<SweepEntry> = results.into_iter().map(|e| e.expect("every sweep slot is filled")).collect();
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("sweep.json"), &entries)?;
    Ok(entries)
}

/// Process exit code for a command error: 2 for configuration and input problems, 3 when the
/// seed does not converge, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Parse(_)
        | Error::Json(_)
        | Error::UnknownSpec(_)
        | Error::MuOutOfRange(_)
        | Error::InvalidArgument(_)
        | Error::Dimension(_) => 2,
        Error::SeedNotConverged(_) => 3,
        _ => 1,
    }
}

/// Points of a branch that sit on refined folds, for consumers of [`Branch`] values.
pub fn fold_points(branch: &Branch) -> Vec<&BranchPoint> {
    branch.points.iter().filter(|p| p.is_fold).collect()
}
