use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use locsync::asymptotics::PhaseTemplate;
use locsync::run::{self, CouplingConfig, Direction, ModelConfig, RunConfig, SeedConfig, SweepConfig};
use locsync::{BoundaryKind, Error};

#[derive(Parser)]
#[command(name = "locsync", version, about = "Localized synchrony patterns in bistable oscillator chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Continue a branch from the configured seed and write branch.csv and summary.json.
    Continue(Common),
    /// Write the asymptotic seed and its Newton-corrected state.
    Seed(Common),
    /// Re-check a branch file: residuals, relative equilibria and fold locations.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Branch file to check; defaults to branch.csv in the run directory.
        #[arg(long)]
        branch: Option<PathBuf>,
    },
    /// Frequency-mismatch bound and Newton attempts on the mixed r+/r- core.
    Mismatch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mismatch_k: Option<usize>,
        #[arg(long)]
        mismatch_mu: Option<f64>,
    },
    /// Integrate the corrected seed in time.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Keep every STRIDE-th time step in trajectory.csv.
        #[arg(long, default_value_t = 10)]
        stride: usize,
    },
    /// Independent continuations over a grid of eps values or isola indices.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', conflicts_with = "sweep_k")]
        sweep_eps: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        sweep_k: Option<Vec<usize>>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingArg {
    Dissipative,
    Conservative,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    OnSite,
    OffSite,
}

#[derive(Clone, Copy, ValueEnum)]
enum TemplateArg {
    InPhase,
    Conservative,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Both,
    Forward,
    Backward,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long)]
    model: Option<String>,
    /// Replace omega_1 by the polynomial with these coefficients (r^0, r^1, ...).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    omega1: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    coupling: Option<CouplingArg>,
    /// General coupling c = c_re + i c_im (unit modulus).
    #[arg(long, num_args = 2, value_names = ["C_RE", "C_IM"], allow_hyphen_values = true, conflicts_with = "coupling")]
    coupling_general: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    /// Seed core pattern of + and - nodes.
    #[arg(long, allow_hyphen_values = true)]
    pattern: Option<String>,
    /// Seed for the k-th conservative isola (k nodes at r+ then one at r-).
    #[arg(long, conflicts_with = "pattern")]
    isola_k: Option<usize>,
    #[arg(long)]
    seed_mu: Option<f64>,
    #[arg(long, value_enum)]
    template: Option<TemplateArg>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    ds_init: Option<f64>,
    #[arg(long)]
    ds_max: Option<f64>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(name) = &self.model {
            cfg.model = ModelConfig { omega1: cfg.model.omega1.take(), ..ModelConfig::named(name) };
        }
        if let Some(w) = &self.omega1 {
            cfg.model.omega1 = Some(w.clone());
        }
        if let Some(c) = self.coupling {
            cfg.coupling = match c {
                CouplingArg::Dissipative => CouplingConfig::Dissipative,
                CouplingArg::Conservative => CouplingConfig::Conservative,
            };
        }
        if let Some(c) = &self.coupling_general {
            cfg.coupling = CouplingConfig::General { c_re: c[0], c_im: c[1] };
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(eps) = self.eps {
            cfg.eps = eps;
        }
        if let Some(b) = self.boundary {
            cfg.boundary = match b {
                BoundaryArg::OnSite => BoundaryKind::OnSite,
                BoundaryArg::OffSite => BoundaryKind::OffSite,
            };
        }
        if let Some(k) = self.isola_k {
            cfg.seed = SeedConfig { mu: cfg.seed.mu, ..SeedConfig::isola(k) };
            if self.boundary.is_none() {
                cfg.boundary = BoundaryKind::OnSite;
            }
        }
        if let Some(p) = &self.pattern {
            cfg.seed.pattern = p.clone();
        }
        if let Some(mu) = self.seed_mu {
            cfg.seed.mu = mu;
        }
        if let Some(t) = self.template {
            cfg.seed.template = match t {
                TemplateArg::InPhase => PhaseTemplate::InPhase,
                TemplateArg::Conservative => PhaseTemplate::Conservative,
            };
        }
        if let Some(d) = self.direction {
            cfg.direction = match d {
                DirectionArg::Both => Direction::Both,
                DirectionArg::Forward => Direction::Forward,
                DirectionArg::Backward => Direction::Backward,
            };
        }
        let c = &mut cfg.continuation;
        if let Some(v) = self.max_steps {
            c.max_steps = v;
        }
        if let Some(v) = self.ds_init {
            c.ds_init = v;
        }
        if let Some(v) = self.ds_max {
            c.ds_max = v;
        }
        if let Some(v) = self.newton_tol {
            c.newton_tol = v;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(id) = &self.run_id {
            cfg.run_id = Some(id.clone());
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Continue(common) => {
            let cfg = common.config()?;
            let s = run::cmd_continue(&cfg)?;
            println!(
                "{}: {} points, {} folds, closure {}, mu in [{:.6}, {:.6}] -> {}",
                s.run_id,
                s.points,
                s.folds.len(),
                s.closure,
                s.mu_range.0,
                s.mu_range.1,
                cfg.run_dir().display()
            );
        }
        Command::Seed(common) => {
            let cfg = common.config()?;
            let r = run::cmd_seed(&cfg)?;
            println!(
                "{}: seed residual {:.3e}, corrected in {} iterations, amplitude correction {:.3e}",
                r.ansatz,
                r.seed_residual,
                r.newton_iters.unwrap_or(0),
                r.amplitude_correction.unwrap_or(f64::NAN)
            );
        }
        Command::Verify { common, branch } => {
            let cfg = common.config()?;
            let path = branch.unwrap_or_else(|| cfg.run_dir().join("branch.csv"));
            let r = run::cmd_verify(&cfg, &path)?;
            println!(
                "residuals: max {:.3e} over {} points ({}); relative equilibria: {}/{} pass; overall {}",
                r.residuals.max_residual,
                r.residuals.points,
                if r.residuals.pass { "pass" } else { "fail" },
                r.relative_equilibria.iter().filter(|c| c.pass).count(),
                r.relative_equilibria.len(),
                if r.pass { "pass" } else { "fail" }
            );
            for f in &r.folds_near_one {
                println!("fold mu = {:.8}: |1 - (1 - mu)/eps| = {:.4}", f.mu, f.error);
            }
        }
        Command::Mismatch { common, mismatch_k, mismatch_mu } => {
            let mut cfg = common.config()?;
            if let Some(k) = mismatch_k {
                cfg.mismatch.k = k;
            }
            if let Some(mu) = mismatch_mu {
                cfg.mismatch.mu = mu;
            }
            let out = run::cmd_mismatch(&cfg)?;
            println!(
                "Delta = {:.6}, r+/r- = {:.6}, real solution possible: {}",
                out.report.delta, out.report.threshold, out.report.has_real_solution
            );
            for a in &out.attempts {
                println!("eps = {:.0e}: converged {}", a.eps, a.converged);
            }
        }
        Command::Simulate { common, t_end, dt, stride } => {
            let mut cfg = common.config()?;
            if t_end.is_some() {
                cfg.t_end = t_end;
            }
            if let Some(dt) = dt {
                cfg.dt = dt;
            }
            let c = run::cmd_simulate(&cfg, stride)?;
            println!("rho = {:.10}, horizon {:.6}, deviation {:.3e}", c.rho, c.horizon, c.deviation);
        }
        Command::Sweep { common, sweep_eps, sweep_k, threads } => {
            let mut cfg = common.config()?;
            if let Some(v) = sweep_eps {
                cfg.sweep = Some(SweepConfig::Eps(v));
            }
            if let Some(v) = sweep_k {
                cfg.sweep = Some(SweepConfig::IsolaK(v));
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            for e in run::cmd_sweep(&cfg)? {
                match (&e.closure, &e.error) {
                    (Some(c), _) => println!("{}: {}, {} folds", e.run_id, c, e.folds.unwrap_or(0)),
                    (None, Some(err)) => println!("{}: error: {err}", e.run_id),
                    _ => {}
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(run::exit_code(&e) as u8)
        }
    }
}
