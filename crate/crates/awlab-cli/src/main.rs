//! `awlab` — experiment driver for the acoustic wave laboratory.
//!
//! Subcommands: `simulate`, `adjoint`, `observability`, `hum`, `mixing`,
//! `lyapunov`, `checks`. All outputs are deterministic for a fixed config
//! and seed; reports embed the fully resolved configuration.

mod checks;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use awlab_core::adjoint::{solve_backward, AdjointState};
use awlab_core::forward::simulate;
use awlab_core::hum::{
    estimate_observability, make_cutoff, null_control_report_text, validate_control_sign,
    verify_null_control, CgOptions, HumSetup, ObservabilityOptions, NULL_CONTROL_SIGN,
};
use awlab_core::model::{project_constraints, PhysicalParams, StateVector};
use awlab_core::stochastic::{
    mixing_experiment, stationary_covariance_oracle, ObservableSet,
};
use awlab_core::{AnnulusGrid, CoreError};

use config::{ConfigError, ExperimentConfig, SignOverride};

#[derive(Parser)]
#[command(name = "awlab", about = "Acoustic wave laboratory: boundary control and mixing experiments", version)]
struct Cli {
    /// Path to a `key = value` configuration file (defaults are built in).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides outputs.directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Noise seed (overrides noise.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Free or forced forward run with the energy ledger.
    Simulate,
    /// Backward adjoint run with the boundary observation.
    Adjoint,
    /// Observability-constant estimate on the reduced grid.
    Observability,
    /// Null-control synthesis, verification and export.
    Hum,
    /// Two-ensemble mixing experiment on the reduced grid.
    Mixing,
    /// Stationary covariance oracle on the reduced grid.
    Lyapunov,
    /// Run the invariant suite; nonzero exit on any failure.
    Checks,
}

enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.message)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Dimension(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.directory = out.display().to_string();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.directory)?;

    match cli.command {
        Command::Simulate => run_simulate(&cfg, cli.quiet),
        Command::Adjoint => run_adjoint(&cfg, cli.quiet),
        Command::Observability => run_observability(&cfg, cli.quiet),
        Command::Hum => run_hum(&cfg, cli.quiet),
        Command::Mixing => run_mixing(&cfg, cli.quiet),
        Command::Lyapunov => run_lyapunov(&cfg, cli.quiet),
        Command::Checks => checks::run_checks(&cfg, cli.quiet),
    }
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    Path::new(&cfg.directory).join(name)
}

fn write_out(cfg: &ExperimentConfig, name: &str, body: &str, quiet: bool) -> Result<(), CliError> {
    let path = out_path(cfg, name);
    std::fs::write(&path, body)?;
    if !quiet {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn report_header(cfg: &ExperimentConfig) -> String {
    let mut s = String::from("# resolved configuration\n");
    for line in cfg.render().lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s.push_str("# end configuration\n");
    s
}

/// Smooth low-mode demonstration state used by the deterministic runs.
pub fn demo_state(g: &AnnulusGrid, p: &PhysicalParams) -> StateVector {
    let mut s = StateVector::zero(g);
    for i in 0..g.nr {
        for j in 0..g.ntheta {
            let r = g.node_radii[i];
            let th = g.theta(j);
            s.u[[i, j]] = (2.0 * r).sin() * th.cos() + 0.3 * r * r * (2.0 * th).sin();
            s.ut[[i, j]] = 0.5 * (1.5 * r).cos() * th.sin();
        }
    }
    for j in 0..g.ntheta {
        let th = g.theta(j);
        s.v[j] = 0.4 * th.cos() + 0.2 * (3.0 * th).sin();
        s.vt[j] = 0.3 * (2.0 * th).cos();
    }
    project_constraints(&s, p, g)
}

/// Second demonstration state for the mixing experiment: same interior
/// content, different membrane data (the difference is strongly damped).
pub fn demo_state_shifted(g: &AnnulusGrid, p: &PhysicalParams) -> StateVector {
    let mut s = demo_state(g, p);
    for j in 0..g.ntheta {
        let th = g.theta(j);
        s.v[j] += -0.4 * (2.0 * th).cos() + 0.2 * (3.0 * th).sin();
        s.vt[j] += 0.3 * th.cos() - 0.15 * (4.0 * th).sin();
    }
    project_constraints(&s, p, g)
}

fn run_simulate(cfg: &ExperimentConfig, quiet: bool) -> Result<(), CliError> {
    let p = cfg.physics()?;
    let g = cfg.grid()?;
    let s0 = demo_state(&g, &p);
    let (_, ledger) = simulate(&s0, None, cfg.t_final, cfg.dt, &p, &g, cfg.decimation)?;
    write_out(cfg, "ledger.csv", &ledger.to_csv(), quiet)?;

    let mut report = report_header(cfg);
    report.push_str(&format!("initial_energy = {:.12e}\n", ledger.energy[0]));
    report.push_str(&format!("final_energy = {:.12e}\n", ledger.energy.last().unwrap()));
    report.push_str(&format!("max_ledger_residual = {:.6e}\n", ledger.max_abs_residual()));
    report.push_str(&format!("max_hooke_drift = {:.6e}\n", ledger.max_hooke_drift()));
    report.push_str(&format!("seminorm_warning = {}\n", p.seminorm_warning()));
    write_out(cfg, "simulate.report.txt", &report, quiet)
}

fn run_adjoint(cfg: &ExperimentConfig, quiet: bool) -> Result<(), CliError> {
    let p = cfg.physics()?;
    let g = cfg.grid()?;
    let terminal = AdjointState::from(demo_state(&g, &p));
    let (traj, record) = solve_backward(&terminal, cfg.t_final, cfg.dt, &p, &g, cfg.decimation)?;
    write_out(cfg, "observation.csv", &record.to_csv(&g), quiet)?;

    let mut report = report_header(cfg);
    report.push_str(&format!("terminal_energy = {:.12e}\n", traj.energies[traj.n_steps]));
    report.push_str(&format!("initial_energy = {:.12e}\n", traj.energies[0]));
    report.push_str(&format!(
        "energy_identity_residual = {:.6e}\n",
        traj.energy_identity_residual(&record, &p, &g)
    ));
    report.push_str(&format!("obs_norm_sq_plain = {:.12e}\n", record.obs_norm_sq));
    report.push_str(&format!("seminorm_warning = {}\n", p.seminorm_warning()));
    write_out(cfg, "adjoint.report.txt", &report, quiet)
}

fn run_observability(cfg: &ExperimentConfig, quiet: bool) -> Result<(), CliError> {
    let p = cfg.physics()?;
    let g = cfg.reduced_grid()?;
    let opts = ObservabilityOptions {
        n_samples: cfg.obs_samples,
        mode: cfg.obs_norm,
        eps0: cfg.eps0.min(0.4 * cfg.t_final),
        seed: cfg.seed,
        power_iterations: cfg.power_iterations,
    };
    let rep = estimate_observability(cfg.t_final, cfg.reduced_dt, &p, &g, &opts)?;
    let mut report = report_header(cfg);
    for (k, v) in rep.to_key_values() {
        report.push_str(&format!("{k} = {v}\n"));
    }
    write_out(cfg, "observability.report.txt", &report, quiet)
}

fn run_hum(cfg: &ExperimentConfig, quiet: bool) -> Result<(), CliError> {
    let p = cfg.physics()?;
    let g = cfg.grid()?;
    let cutoff = make_cutoff(cfg.t_final, cfg.dt, cfg.eps0)?;
    let hum = HumSetup::new(&p, &g, cfg.t_final, cfg.dt, &cutoff)?;
    let s0 = demo_state(&g, &p);
    let opts = CgOptions { tol: cfg.cg_tol, max_iter: cfg.max_iter, tikhonov: cfg.tikhonov };

    // settle the control sign, cheaply, on the reduced grid
    let (sign, ratios) = match cfg.sign_override {
        SignOverride::Plus => (1.0, None),
        SignOverride::Minus => (-1.0, None),
        SignOverride::Auto => {
            let g_small = cfg.reduced_grid()?;
            let cutoff_small = make_cutoff(cfg.t_final, cfg.reduced_dt, cfg.eps0)?;
            let hum_small = HumSetup::new(&p, &g_small, cfg.t_final, cfg.reduced_dt, &cutoff_small)?;
            let s0_small = demo_state(&g_small, &p);
            let small_opts = CgOptions { tol: 1e-2, max_iter: 40, tikhonov: 0.0 };
            let (sign, rm, rp) = validate_control_sign(&s0_small, &hum_small, &small_opts)?;
            (sign, Some((rm, rp)))
        }
    };

    if !quiet {
        println!("minimizing J (up to {} CG iterations)...", cfg.max_iter);
    }
    let (z_hat, cg) = hum.minimize_j(&s0, &opts)?;
    let control = hum.control_for(&z_hat, sign)?;
    let verify = verify_null_control(&s0, &control, cfg.t_final, cfg.dt, &p, &g)?;
    write_out(cfg, "control.csv", &control.to_csv(), quiet)?;

    let mut report = report_header(cfg);
    report.push_str(&null_control_report_text(&cg, &verify, sign, ratios));
    report.push_str(&format!("default_sign_constant = {NULL_CONTROL_SIGN}\n"));
    report.push_str(&format!("seminorm_warning = {}\n", p.seminorm_warning()));
    write_out(cfg, "hum.report.txt", &report, quiet)?;
    if !cg.converged {
        return Err(CliError::Numerical(format!(
            "conjugate gradient did not reach tol {} within {} iterations (residual {:.3e})",
            cfg.cg_tol, cfg.max_iter, cg.relative_residual
        )));
    }
    Ok(())
}

fn run_mixing(cfg: &ExperimentConfig, quiet: bool) -> Result<(), CliError> {
    let p = cfg.physics()?;
    let g = cfg.reduced_grid()?;
    let nm = cfg.noise()?;
    let a = demo_state(&g, &p);
    let b = demo_state_shifted(&g, &p);
    if !quiet {
        println!(
            "evolving 2 × {} paths to t = {} (dt = {})...",
            cfg.n_paths, cfg.reduced_t_final, cfg.reduced_dt
        );
    }
    let report = mixing_experiment(
        &a,
        &b,
        cfg.reduced_t_final,
        cfg.reduced_dt,
        &cfg.checkpoints,
        cfg.n_paths,
        &nm,
        &p,
        &g,
        cfg.permutations,
    )?;
    write_out(cfg, "mixing_distances.csv", &report.distances_csv(), quiet)?;
    write_out(cfg, "mixing_covariance.csv", &report.covariance_csv(), quiet)?;

    let mut text = report_header(cfg);
    text.push_str(&format!("max_abs_z = {:.6}\n", report.max_abs_z()));
    let last = report.times.len() - 1;
    text.push_str(&format!("final_distance = {:.6e}\n", report.dist_series[last]));
    text.push_str(&format!("final_critical_value = {:.6e}\n", report.critical_values[last]));
    text.push_str(&format!(
        "laws_merged = {}\n",
        report.dist_series[last] <= report.critical_values[last]
    ));
    text.push_str(&format!("seminorm_warning = {}\n", report.seminorm_warning));
    write_out(cfg, "mixing.report.txt", &text, quiet)
}

fn run_lyapunov(cfg: &ExperimentConfig, quiet: bool) -> Result<(), CliError> {
    let p = cfg.physics()?;
    let g = cfg.reduced_grid()?;
    let nm = cfg.noise()?;
    let obs = ObservableSet::probes_at_quarters(&g);
    let oracle = stationary_covariance_oracle(&p, &g, &nm, cfg.reduced_dt, &obs)?;
    let mu = oracle.zero_mean();
    write_out(cfg, "lyapunov_covariance.csv", &oracle.to_csv(&g, &mu), quiet)?;

    let mut report = report_header(cfg);
    report.push_str(&format!("trace_h = {:.12e}\n", oracle.trace_h));
    report.push_str(&format!("fixed_point_residual = {:.6e}\n", oracle.residual));
    report.push_str(&format!("trace_q = {:.12e}\n", nm.trace()));
    report.push_str(&format!("seminorm_warning = {}\n", p.seminorm_warning()));
    write_out(cfg, "lyapunov.report.txt", &report, quiet)
}
