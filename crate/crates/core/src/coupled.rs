//! Full system: phase/nutrient step with the lagged velocity, then the
//! momentum step with the updated fields.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chd::{chd_step, ChdStepReport, ModelParams, StepContext};
use crate::diagnostics::{bel_residual, bel_residual_prescribed, chemical_potential, transport_work, EnergyLedger};
use crate::elliptic::SolverConfig;
use crate::error::{ChnsError, Result};
use crate::grid::{GridSpec, MacVelocity, ScalarField};
use crate::hydro::{ns_step, ProjectionReport, VELOCITY_FLOOR};

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub vel: MacVelocity,
    pub phi: ScalarField,
    pub mu: ScalarField,
    pub sigma: ScalarField,
    pub pressure: ScalarField,
    pub t: f64,
    pub step: usize,
}

impl SimState {
    /// Fluid at rest with uniform `φ` and `σ`; `μ` is filled in consistently.
    pub fn uniform(grid: GridSpec, phi: f64, sigma: f64, p: &ModelParams) -> Result<Self> {
        let mu = p.potential.psi_prime(phi)? - p.chi * sigma;
        Ok(Self {
            vel: MacVelocity::zeros(grid),
            phi: ScalarField::constant(grid, phi),
            mu: ScalarField::constant(grid, mu),
            sigma: ScalarField::constant(grid, sigma),
            pressure: ScalarField::zeros(grid),
            t: 0.0,
            step: 0,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.phi.grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Noisy near-uniform mixture.
    Spinodal,
    /// Disk of one phase in the other.
    Droplet,
    /// Phase/nutrient dynamics under a fixed cellular flow.
    Drift,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Spinodal => "spinodal",
            ScenarioKind::Droplet => "droplet",
            ScenarioKind::Drift => "drift",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spinodal" => Some(ScenarioKind::Spinodal),
            "droplet" => Some(ScenarioKind::Droplet),
            "drift" => Some(ScenarioKind::Drift),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Mean of the initial `φ`; `None` uses `c₀`.
    pub phi_mean: Option<f64>,
    pub sigma_mean: f64,
    pub noise: f64,
    /// Droplet radius as a fraction of `min(lx, ly)`.
    pub radius: f64,
    /// Peak of the stream function of the drift flow.
    pub drift_amplitude: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Spinodal,
            phi_mean: None,
            sigma_mean: 0.0,
            noise: 0.05,
            radius: 0.25,
            drift_amplitude: 1.0,
        }
    }
}

/// Largest `|φ|` any initializer may produce.
pub const INITIAL_PHASE_BOUND: f64 = 1.0 - 1e-3;

impl Scenario {
    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        let m = self.phi_mean.unwrap_or(p.c0);
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(ChnsError::Config(format!("scenario noise must be >= 0, got {}", self.noise)));
        }
        if self.kind != ScenarioKind::Droplet && m.abs() + self.noise > INITIAL_PHASE_BOUND {
            return Err(ChnsError::Config(format!(
                "initial phase mean {m} with noise {} leaves [-{INITIAL_PHASE_BOUND}, {INITIAL_PHASE_BOUND}]",
                self.noise
            )));
        }
        if !(self.radius > 0.0 && self.radius < 0.5) {
            return Err(ChnsError::Config(format!("droplet radius must lie in (0, 0.5), got {}", self.radius)));
        }
        if !self.sigma_mean.is_finite() || !self.drift_amplitude.is_finite() {
            return Err(ChnsError::Config("scenario values must be finite".into()));
        }
        Ok(())
    }

    /// Stream function `A sin(πx/lx) sin(πy/ly)` of the drift flow.
    pub fn drift_velocity(&self, grid: GridSpec) -> MacVelocity {
        let a = self.drift_amplitude;
        MacVelocity::from_stream_function(grid, move |x, y| {
            a * (PI * x / grid.lx).sin() * (PI * y / grid.ly).sin()
        })
    }

    pub fn initial_state(&self, grid: GridSpec, p: &ModelParams, seed: u64, ell: &crate::elliptic::Elliptic) -> Result<SimState> {
        self.validate(p)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.phi_mean.unwrap_or(p.c0);
        let phi = match self.kind {
            ScenarioKind::Spinodal => noisy(grid, m, self.noise, &mut rng),
            ScenarioKind::Droplet | ScenarioKind::Drift => {
                let r0 = self.radius * grid.lx.min(grid.ly);
                let (cx, cy) = match self.kind {
                    ScenarioKind::Drift => (grid.lx / 3.0, grid.ly / 2.0),
                    _ => (grid.lx / 2.0, grid.ly / 2.0),
                };
                let amp = 0.95;
                ScalarField::from_fn(grid, |x, y| {
                    let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                    amp * ((r0 - r) / 2f64.sqrt()).tanh()
                })
            }
        };
        let sigma = noisy(grid, self.sigma_mean, self.noise, &mut rng);
        let vel = match self.kind {
            ScenarioKind::Drift => self.drift_velocity(grid),
            _ => MacVelocity::zeros(grid),
        };
        let mu = chemical_potential(&phi, &sigma, p, ell)?;
        Ok(SimState {
            vel,
            phi,
            mu,
            sigma,
            pressure: ScalarField::zeros(grid),
            t: 0.0,
            step: 0,
        })
    }
}

fn noisy(grid: GridSpec, m: f64, amp: f64, rng: &mut ChaCha8Rng) -> ScalarField {
    let values = (0..grid.n_cells()).map(|_| m + amp * rng.gen_range(-1.0..1.0)).collect();
    ScalarField { grid, values }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputConfig {
    /// Ledger row every this many steps (the last step is always recorded).
    pub ledger_every: usize,
    /// Snapshot cadence in steps; 0 disables intermediate snapshots.
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            ledger_every: 1,
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub params: ModelParams,
    pub dt: f64,
    pub t_end: f64,
    pub cfl_safety: f64,
    pub scenario: Scenario,
    pub seed: u64,
    pub output: OutputConfig,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn new(grid: GridSpec, params: ModelParams) -> Self {
        Self {
            grid,
            params,
            dt: 1e-3,
            t_end: 1.0,
            cfl_safety: 0.5,
            scenario: Scenario::default(),
            seed: 0,
            output: OutputConfig::default(),
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.solver.validate()?;
        self.scenario.validate(&self.params)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ChnsError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(ChnsError::Config(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(ChnsError::Config(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if self.output.ledger_every == 0 {
            return Err(ChnsError::Config("ledger_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub chd: ChdStepReport,
    pub projection: ProjectionReport,
}

/// `chd_step` with `s.vel`, then `ns_step` with the new phase fields.
pub fn coupled_step(ctx: &StepContext, s: &SimState, p: &ModelParams, dt: f64) -> Result<(SimState, StepReport)> {
    let (mut next, chd) = chd_step(ctx, s, &s.vel, p, dt, None)?;
    let ns = ns_step(ctx, &s.vel, &next.phi, &next.mu, &next.sigma, p, dt)?;
    next.vel = ns.vel;
    next.pressure = ns.pressure;
    Ok((
        next,
        StepReport {
            chd,
            projection: ns.report,
        },
    ))
}

/// `min(base_dt, safety · h_min / max|v|)`.
pub fn cfl_dt(s: &SimState, base_dt: f64, safety: f64) -> f64 {
    let h = s.grid().h_min();
    base_dt.min(safety * h / s.vel.max_abs().max(VELOCITY_FLOOR))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: SimState,
    pub ledger: Vec<EnergyLedger>,
    /// Barrier-safeguard activations over the run.
    pub clipped_steps: usize,
}

/// A run aborted by a failing step, with the last accepted state.
#[derive(Debug)]
pub struct RunFailure {
    pub error: ChnsError,
    pub state: Option<Box<SimState>>,
    pub ledger: Vec<EnergyLedger>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<ChnsError> for RunFailure {
    fn from(error: ChnsError) -> Self {
        Self {
            error,
            state: None,
            ledger: Vec::new(),
        }
    }
}

pub fn run(cfg: &RunConfig) -> std::result::Result<RunOutput, RunFailure> {
    run_with(cfg, |_, _| Ok(()))
}

/// Runs to `t_end`, calling `observe` on the initial state and after every
/// step with the step's ledger row (bel residual of that step filled in).
pub fn run_with(
    cfg: &RunConfig,
    mut observe: impl FnMut(&SimState, &EnergyLedger) -> Result<()>,
) -> std::result::Result<RunOutput, RunFailure> {
    cfg.validate()?;
    let p = cfg.params;
    let ctx = StepContext::new(cfg.grid, cfg.solver)?;
    let mut state = cfg.scenario.initial_state(cfg.grid, &p, cfg.seed, &ctx.elliptic)?;
    let prescribed = cfg.scenario.kind == ScenarioKind::Drift;

    let mut prev_row = EnergyLedger::from_state(&state, &p, &ctx.elliptic, 0)?;
    observe(&state, &prev_row)?;
    let mut ledger = vec![prev_row];
    let mut pending_residual = 0.0;
    let mut clipped_steps = 0;

    let fail = |error: ChnsError, state: &SimState, ledger: Vec<EnergyLedger>| RunFailure {
        error: ChnsError::StepFailed {
            step: state.step + 1,
            source: Box::new(error),
        },
        state: Some(Box::new(state.clone())),
        ledger,
    };

    loop {
        let remaining = cfg.t_end - state.t;
        if remaining <= 1e-10 * cfg.dt {
            break;
        }
        let dt_cfl = cfl_dt(&state, cfg.dt, cfg.cfl_safety);
        let (dt, last) = if dt_cfl >= remaining * (1.0 - 1e-9) {
            // keep the nominal step if it only differs from the remainder by
            // accumulated rounding
            let dt = if (remaining - dt_cfl).abs() <= 1e-9 * dt_cfl { dt_cfl } else { remaining };
            (dt, true)
        } else {
            (dt_cfl, false)
        };

        let stepped = if prescribed {
            chd_step(&ctx, &state, &state.vel, &p, dt, None).map(|(s, chd)| {
                (
                    s,
                    StepReport {
                        chd,
                        ..Default::default()
                    },
                )
            })
        } else {
            coupled_step(&ctx, &state, &p, dt)
        };
        let (mut next, report) = match stepped {
            Ok(v) => v,
            Err(e) => return Err(fail(e, &state, ledger)),
        };
        if last {
            next.t = cfg.t_end;
        }
        clipped_steps += report.chd.clipped_steps;

        let mut row = match EnergyLedger::from_state(&next, &p, &ctx.elliptic, report.chd.newton_iters) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, &state, ledger)),
        };
        let residual = if prescribed {
            bel_residual_prescribed(&prev_row, &row, dt, transport_work(&next, &p))
        } else {
            bel_residual(&prev_row, &row, dt, &p)
        };
        pending_residual += residual;
        row.bel_residual = residual;
        if let Err(e) = observe(&next, &row) {
            return Err(fail(e, &next, ledger));
        }
        prev_row = row;
        state = next;
        let done = cfg.t_end - state.t <= 1e-10 * cfg.dt;
        if state.step % cfg.output.ledger_every == 0 || done {
            row.bel_residual = pending_residual;
            pending_residual = 0.0;
            ledger.push(row);
        }
        if done {
            break;
        }
    }
    Ok(RunOutput {
        state,
        ledger,
        clipped_steps,
    })
}
