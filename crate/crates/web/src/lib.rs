//! WebAssembly bindings for an interactive phase-separation demo.
//!
//! [`Session`] owns one simulation on a square box. The page steps it, paints
//! `φ` and can ask for the stationary state reached from the current phase.

use chns::chd::{chd_step, ModelParams, StepContext};
use chns::coupled::{coupled_step, Scenario, ScenarioKind, SimState};
use chns::diagnostics::{free_energy, kinetic_energy};
use chns::elliptic::SolverConfig;
use chns::grid::{mean, GridSpec, ScalarField};
use chns::potential::{PotentialKind, PotentialParams};
use chns::stationary::{deficit, solve_stationary, Equilibrium, StationaryConfig};
use chns::ChnsError;
use wasm_bindgen::prelude::*;

fn js(e: ChnsError) -> JsError {
    JsError::new(&e.to_string())
}

/// Diverging blue/white/red map of `φ ∈ [−1, 1]`, top row first.
pub fn phase_rgba(phi: &ScalarField) -> Vec<u8> {
    let g = phi.grid;
    let mut out = Vec::with_capacity(4 * g.n_cells());
    for j in (0..g.ny).rev() {
        for i in 0..g.nx {
            let x = phi.at(i, j).clamp(-1.0, 1.0);
            let (r, gr, b) = if x >= 0.0 {
                (1.0, 1.0 - x, 1.0 - x)
            } else {
                (1.0 + x, 1.0 + x, 1.0)
            };
            let to_u8 = |c: f64| (255.0 * c).round() as u8;
            out.extend_from_slice(&[to_u8(r), to_u8(gr), to_u8(b), 255]);
        }
    }
    out
}

/// Interleaved samples `r, Ψ(r), Ψ'(r)` on the open interval for the
/// logarithmic well or on `[−1.5, 1.5]` for the quartic one.
#[wasm_bindgen]
pub fn potential_curve(kind: &str, theta: f64, theta0: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    let pot = match PotentialKind::parse(kind) {
        Some(PotentialKind::Logarithmic) => PotentialParams::logarithmic(theta, theta0),
        Some(PotentialKind::Quartic) => PotentialParams::quartic(),
        None => return Err(JsError::new(&format!("unknown potential {kind:?}"))),
    };
    sample_potential(&pot, samples).map_err(js)
}

pub fn sample_potential(pot: &PotentialParams, samples: usize) -> chns::Result<Vec<f64>> {
    pot.validate()?;
    let samples = samples.max(2);
    let reach = if pot.is_singular() { 0.999 } else { 1.5 };
    let mut out = Vec::with_capacity(3 * samples);
    for k in 0..samples {
        let r = -reach + 2.0 * reach * k as f64 / (samples - 1) as f64;
        out.extend_from_slice(&[r, pot.psi(r)?, pot.psi_prime(r)?]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionParams {
    pub n: usize,
    pub length: f64,
    pub dt: f64,
    pub model: ModelParams,
    pub scenario: Scenario,
    pub seed: u64,
}

#[wasm_bindgen]
pub struct Session {
    ctx: StepContext,
    params: SessionParams,
    state: SimState,
    equilibrium: Option<Equilibrium>,
}

impl Session {
    pub fn create(params: SessionParams) -> chns::Result<Self> {
        params.model.validate()?;
        let grid = GridSpec::new(params.n, params.n, params.length, params.length)?;
        let ctx = StepContext::new(grid, SolverConfig::default())?;
        let state = params.scenario.initial_state(grid, &params.model, params.seed, &ctx.elliptic)?;
        Ok(Self {
            ctx,
            params,
            state,
            equilibrium: None,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn equilibrium(&self) -> Option<&Equilibrium> {
        self.equilibrium.as_ref()
    }

    pub fn try_advance(&mut self, steps: usize) -> chns::Result<f64> {
        let (p, dt) = (&self.params.model, self.params.dt);
        for _ in 0..steps {
            let next = if self.params.scenario.kind == ScenarioKind::Drift {
                chd_step(&self.ctx, &self.state, &self.state.vel, p, dt, None)?.0
            } else {
                coupled_step(&self.ctx, &self.state, p, dt)?.0
            };
            self.state = next;
        }
        Ok(self.state.t)
    }

    /// `[t, kinetic, free, total, mean φ, mean σ, max |v|]`.
    pub fn try_energies(&self) -> chns::Result<Vec<f64>> {
        let s = &self.state;
        let kinetic = kinetic_energy(&s.vel);
        let free = free_energy(&s.phi, &s.sigma, &self.params.model, &self.ctx.elliptic)?;
        Ok(vec![
            s.t,
            kinetic,
            free,
            kinetic + free,
            mean(&s.phi),
            mean(&s.sigma),
            s.vel.max_abs(),
        ])
    }

    /// `[free energy, residual, iterations, deficit]` of the stationary state
    /// reached from the current phase.
    pub fn try_equilibrate(&mut self) -> chns::Result<Vec<f64>> {
        let s = &self.state;
        let eq = solve_stationary(
            &s.phi,
            mean(&s.sigma),
            &self.params.model,
            &self.ctx.elliptic,
            &StationaryConfig::default(),
        )?;
        let d = deficit(&s.phi, &s.sigma, &eq)?;
        let out = vec![eq.free_energy_at, eq.residual, eq.iterations as f64, d];
        self.equilibrium = Some(eq);
        Ok(out)
    }
}

#[wasm_bindgen]
impl Session {
    /// `scenario` is `spinodal`, `droplet` or `drift`.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scenario: &str,
        n: usize,
        length: f64,
        chi: f64,
        alpha: f64,
        beta: f64,
        c0: f64,
        dt: f64,
        seed: u64,
    ) -> Result<Session, JsError> {
        let kind = ScenarioKind::parse(scenario).ok_or_else(|| JsError::new(&format!("unknown scenario {scenario:?}")))?;
        let params = SessionParams {
            n,
            length,
            dt,
            model: ModelParams { chi, alpha, beta, c0, ..Default::default() },
            scenario: Scenario {
                kind,
                sigma_mean: 0.5,
                drift_amplitude: 0.1 * length,
                ..Default::default()
            },
            seed,
        };
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(JsError::new(&format!("dt must be positive, got {dt}")));
        }
        Session::create(params).map_err(js)
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    /// Advances `steps` time steps and returns the new time.
    pub fn advance(&mut self, steps: usize) -> Result<f64, JsError> {
        self.try_advance(steps).map_err(js)
    }

    pub fn phi_rgba(&self) -> Vec<u8> {
        phase_rgba(&self.state.phi)
    }

    pub fn energies(&self) -> Result<Vec<f64>, JsError> {
        self.try_energies().map_err(js)
    }

    pub fn equilibrate(&mut self) -> Result<Vec<f64>, JsError> {
        self.try_equilibrate().map_err(js)
    }

    /// Image of the last stationary state, empty before `equilibrate`.
    pub fn equilibrium_rgba(&self) -> Vec<u8> {
        self.equilibrium.as_ref().map(|e| phase_rgba(&e.phi_inf)).unwrap_or_default()
    }
}
