use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chns::cli::{
    parse_config, read_ledger_csv, read_snapshot, read_snapshot_dir, run_checks, snapshot_name, write_ledger_csv,
    write_snapshot,
};
use chns::coupled::{run_with, SimState};
use chns::elliptic::Elliptic;
use chns::grid::{mean, MacVelocity, ScalarField};
use chns::stationary::{deficit, rate_fit, solve_stationary, Equilibrium, StationaryConfig};
use chns::ChnsError;

#[derive(Parser)]
#[command(name = "chns", version, about = "Navier-Stokes-Cahn-Hilliard-Oono simulations on a staggered grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the energy ledger and snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `section.key=value`, applied after the file.
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve for the stationary state reached from a snapshot.
    Stationary {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "seed-snapshot")]
        seed_snapshot: PathBuf,
        #[arg(long, default_value = "equilibrium.chns")]
        out: PathBuf,
    },
    /// Fit the algebraic decay rate of a run towards an equilibrium.
    Ratefit {
        /// Ledger of the run; its `snapshots/` directory supplies the fields.
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        equilibrium: PathBuf,
        /// Fraction of the samples used for the fit.
        #[arg(long, default_value_t = 0.5)]
        tail: f64,
    },
    /// Run the fast invariant suite.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_INVARIANT: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

fn exit_code(e: &ChnsError) -> u8 {
    if e.is_solver_failure() {
        EXIT_SOLVER
    } else if matches!(e, ChnsError::FitRefused(_)) {
        EXIT_INVARIANT
    } else {
        EXIT_USAGE
    }
}

fn configure_threads() {
    let Ok(raw) = std::env::var("CHNS_THREADS") else {
        return;
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) => n,
        Err(_) => {
            log::warn!("ignoring CHNS_THREADS={raw}: not a number");
            return;
        }
    };
    #[cfg(feature = "parallel")]
    if n > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    configure_threads();
    match cli.command {
        Command::Run { config, overrides, out, seed } => cmd_run(&config, &overrides, &out, seed),
        Command::Stationary { config, seed_snapshot, out } => cmd_stationary(&config, &seed_snapshot, &out),
        Command::Ratefit { ledger, equilibrium, tail } => cmd_ratefit(&ledger, &equilibrium, tail),
        Command::Check { config } => cmd_check(&config),
    }
}

fn fail(e: &ChnsError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

fn cmd_run(config: &Path, overrides: &[String], out: &Path, seed: Option<u64>) -> ExitCode {
    let mut cfg = match parse_config(config, overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    let run = cfg.run;
    let snaps = out.join("snapshots");
    let every = run.output.snapshot_every;
    let result = run_with(&run, |state, _row| {
        if every > 0 && state.step % every == 0 {
            write_snapshot(state, &snaps.join(snapshot_name(state.step)))?;
        }
        Ok(())
    });
    let ledger_path = out.join("ledger.csv");
    match result {
        Ok(output) => {
            if let Err(e) = write_ledger_csv(&output.ledger, &ledger_path)
                .and_then(|_| write_snapshot(&output.state, &out.join("final.chns")))
            {
                return fail(&e);
            }
            let last = output.ledger.last().expect("ledger has the initial row");
            println!(
                "{} steps to t = {}; E = {:.6e}, 1 - max|phi| = {:.3e}, safeguard activations = {}",
                output.state.step, output.state.t, last.total_energy, last.sep_delta, output.clipped_steps
            );
            ExitCode::SUCCESS
        }
        Err(failure) => {
            let _ = write_ledger_csv(&failure.ledger, &ledger_path);
            if let Some(state) = &failure.state {
                let _ = write_snapshot(state, &out.join("failed.chns"));
            }
            fail(&failure.error)
        }
    }
}

fn equilibrium_state(eq: &Equilibrium, t: f64) -> SimState {
    let g = eq.phi_inf.grid;
    SimState {
        vel: MacVelocity::zeros(g),
        phi: eq.phi_inf.clone(),
        mu: eq.mu_inf.clone(),
        sigma: eq.sigma_inf.clone(),
        pressure: ScalarField::zeros(g),
        t,
        step: 0,
    }
}

fn cmd_stationary(config: &Path, seed_snapshot: &Path, out: &Path) -> ExitCode {
    let result = (|| {
        let cfg = parse_config(config, &[])?;
        let seed = read_snapshot(seed_snapshot)?;
        let g = seed.grid();
        let ell = Elliptic::new(g, cfg.run.solver)?;
        let eq = solve_stationary(&seed.phi, mean(&seed.sigma), &cfg.run.params, &ell, &StationaryConfig::default())?;
        write_snapshot(&equilibrium_state(&eq, seed.t), out)?;
        let dist = eq.phi_inf.axpy(-1.0, &seed.phi).max_abs();
        println!(
            "residual {:.3e} after {} steps; mean phi {:.12}, mean sigma {:.12}; F = {:.10e}; |phi_seed - phi_inf|_inf = {:.3e}",
            eq.residual, eq.iterations, eq.mass_phi, eq.mass_sigma, eq.free_energy_at, dist
        );
        Ok::<_, ChnsError>(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn cmd_ratefit(ledger: &Path, equilibrium: &Path, tail: f64) -> ExitCode {
    let result = (|| {
        let rows = read_ledger_csv(ledger)?;
        let eq_state = read_snapshot(equilibrium)?;
        let dir = ledger.parent().unwrap_or(Path::new(".")).join("snapshots");
        let snaps = read_snapshot_dir(&dir)?;
        let eq = Equilibrium {
            phi_inf: eq_state.phi.clone(),
            sigma_inf: eq_state.sigma.clone(),
            mu_inf: eq_state.mu.clone(),
            residual: f64::NAN,
            mass_phi: mean(&eq_state.phi),
            mass_sigma: mean(&eq_state.sigma),
            free_energy_at: f64::NAN,
            iterations: 0,
            energy_history: Vec::new(),
        };
        let t_end = rows.last().map(|r| r.t).unwrap_or(f64::INFINITY);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (_, s) in snaps.iter().filter(|(_, s)| s.t <= t_end) {
            times.push(s.t);
            values.push(deficit(&s.phi, &s.sigma, &eq)?);
        }
        let fit = rate_fit(&times, &values, tail)?;
        println!(
            "kappa_hat = {:.6}, slope = {:.6}, r2 = {:.6}, window = [{}, {}], flags = {:?}",
            fit.kappa_hat, fit.slope, fit.r2, fit.window.0, fit.window.1, fit.flags
        );
        Ok::<_, ChnsError>(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn cmd_check(config: &Path) -> ExitCode {
    let cfg = match parse_config(config, &[]) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let outcomes = match run_checks(&cfg) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "ok  " } else { "FAIL" }, o.name, o.detail);
    }
    match outcomes.iter().find(|o| !o.passed) {
        Some(first) => {
            eprintln!("invariant failed: {}", first.name);
            ExitCode::from(EXIT_INVARIANT)
        }
        None => ExitCode::SUCCESS,
    }
}
