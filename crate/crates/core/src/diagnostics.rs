//! Energies, dissipation rates, mass and separation observables, and the
//! per-step ledger row.

use crate::chd::ModelParams;
use crate::coupled::SimState;
use crate::elliptic::Elliptic;
use crate::error::Result;
use crate::grid::{self, div_faces, face_inner, grad_to_faces, integrate, laplacian_neumann, mean, MacVelocity, ScalarField};
use crate::hydro::{korteweg_force, viscosity_field, viscous_dissipation};

pub const LEDGER_HEADER: [&str; 16] = [
    "step",
    "t",
    "kinetic",
    "free_energy",
    "total_energy",
    "diss_visc",
    "diss_mu",
    "diss_cross",
    "oono_work",
    "bel_residual",
    "mean_phi",
    "mean_sigma",
    "sep_delta",
    "div_inf",
    "sigma_l4",
    "newton_iters",
];

/// One recorded step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLedger {
    pub step: usize,
    pub t: f64,
    pub kinetic: f64,
    pub free_energy: f64,
    pub total_energy: f64,
    pub diss_visc: f64,
    pub diss_mu: f64,
    pub diss_cross: f64,
    pub oono_work: f64,
    pub bel_residual: f64,
    pub mean_phi: f64,
    pub mean_sigma: f64,
    pub sep_delta: f64,
    pub div_inf: f64,
    pub sigma_l4: f64,
    pub newton_iters: usize,
}

impl EnergyLedger {
    /// Row for `s` with `bel_residual` left at zero.
    pub fn from_state(s: &SimState, p: &ModelParams, ell: &Elliptic, newton_iters: usize) -> Result<Self> {
        let kinetic = kinetic_energy(&s.vel);
        let free_energy = free_energy(&s.phi, &s.sigma, p, ell)?;
        let d = dissipation(s, p);
        Ok(Self {
            step: s.step,
            t: s.t,
            kinetic,
            free_energy,
            total_energy: kinetic + free_energy,
            diss_visc: d.visc,
            diss_mu: d.mu,
            diss_cross: d.cross,
            oono_work: oono_work(&s.phi, &s.mu, p),
            bel_residual: 0.0,
            mean_phi: mean(&s.phi),
            mean_sigma: mean(&s.sigma),
            sep_delta: 1.0 - s.phi.max_abs(),
            div_inf: div_faces(&s.vel).max_abs(),
            sigma_l4: lp_norm(&s.sigma, 4),
            newton_iters,
        })
    }

    pub fn total_dissipation(&self) -> f64 {
        self.diss_visc + self.diss_mu + self.diss_cross
    }

    /// Values in header order; counts are converted exactly.
    pub fn values(&self) -> [f64; 16] {
        [
            self.step as f64,
            self.t,
            self.kinetic,
            self.free_energy,
            self.total_energy,
            self.diss_visc,
            self.diss_mu,
            self.diss_cross,
            self.oono_work,
            self.bel_residual,
            self.mean_phi,
            self.mean_sigma,
            self.sep_delta,
            self.div_inf,
            self.sigma_l4,
            self.newton_iters as f64,
        ]
    }
}

pub fn kinetic_energy(vel: &MacVelocity) -> f64 {
    0.5 * (grid::dot(&vel.u, &vel.u) + grid::dot(&vel.v, &vel.v)) * vel.grid.cell_area()
}

/// `∫ ½|∇φ|² + Ψ(φ) + ½σ² − χσφ + (β/2)|∇N(φ − mean φ)|²`.
pub fn free_energy(phi: &ScalarField, sigma: &ScalarField, p: &ModelParams, ell: &Elliptic) -> Result<f64> {
    let g = phi.grid;
    let grad = grad_to_faces(phi);
    let gradient = 0.5 * face_inner(&grad, &grad)?;
    let mut local = 0.0;
    for (&r, &s) in phi.values.iter().zip(&sigma.values) {
        local += p.potential.psi(r)? + 0.5 * s * s - p.chi * s * r;
    }
    let mut energy = gradient + local * g.cell_area();
    if p.beta != 0.0 {
        let u = phi.zero_mean();
        let (nu, _) = ell.neumann_inverse_projected(&u)?;
        energy += 0.5 * p.beta * grid::l2_inner(&u, &nu)?;
    }
    Ok(energy)
}

/// Variational derivative of [`free_energy`]:
/// `−Δφ + Ψ'(φ) − χσ + βN(φ − mean φ)`.
pub fn chemical_potential(phi: &ScalarField, sigma: &ScalarField, p: &ModelParams, ell: &Elliptic) -> Result<ScalarField> {
    let lap = laplacian_neumann(phi);
    let values = phi
        .values
        .iter()
        .zip(&lap.values)
        .zip(&sigma.values)
        .map(|((&r, &l), &s)| Ok(-l + p.potential.psi_prime(r)? - p.chi * s))
        .collect::<Result<Vec<f64>>>()?;
    let mut mu = ScalarField { grid: phi.grid, values };
    if p.beta != 0.0 {
        let (n, _) = ell.neumann_inverse_projected(phi)?;
        mu = mu.axpy(p.beta, &n);
    }
    Ok(mu)
}

pub fn total_energy(s: &SimState, p: &ModelParams, ell: &Elliptic) -> Result<f64> {
    Ok(kinetic_energy(&s.vel) + free_energy(&s.phi, &s.sigma, p, ell)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dissipation {
    pub visc: f64,
    pub mu: f64,
    pub cross: f64,
}

impl Dissipation {
    pub fn total(&self) -> f64 {
        self.visc + self.mu + self.cross
    }
}

/// `(∫2ν(φ)|Dv|², ∫|∇μ|², ∫|∇(σ − χφ)|²)`.
pub fn dissipation(s: &SimState, p: &ModelParams) -> Dissipation {
    let grad_sq = |f: &ScalarField| {
        let g = grad_to_faces(f);
        kinetic_energy(&g) * 2.0
    };
    Dissipation {
        visc: viscous_dissipation(&s.vel, &viscosity_field(&s.phi, p)),
        mu: grad_sq(&s.mu),
        cross: grad_sq(&s.sigma.axpy(-p.chi, &s.phi)),
    }
}

/// `α (mean φ − c₀) ∫ μ`.
pub fn oono_work(phi: &ScalarField, mu: &ScalarField, p: &ModelParams) -> f64 {
    if p.alpha == 0.0 {
        return 0.0;
    }
    p.alpha * (mean(phi) - p.c0) * integrate(mu)
}

/// Discrete `L^q` norm.
pub fn lp_norm(f: &ScalarField, q: i32) -> f64 {
    let sum: f64 = f.values.iter().map(|v| v.abs().powi(q)).sum();
    (sum * f.grid.cell_area()).powf(1.0 / q as f64)
}

/// Signed defect of the discrete energy law between consecutive rows:
/// `ΔE + dt·D(next) + dt·α(mean φ − c₀)∫μ (next)`.
pub fn bel_residual(prev: &EnergyLedger, next: &EnergyLedger, dt: f64, _p: &ModelParams) -> f64 {
    (next.total_energy - prev.total_energy) + dt * next.total_dissipation() + dt * next.oono_work
}

/// Work done by a prescribed velocity on the phase/nutrient subsystem,
/// `∫ (μ + χσ) v·∇φ`.
pub fn transport_work(s: &SimState, p: &ModelParams) -> f64 {
    let f = korteweg_force(&s.mu, &s.sigma, &s.phi, p);
    grid::dot(&f.u, &s.vel.u) * s.vel.grid.cell_area() + grid::dot(&f.v, &s.vel.v) * s.vel.grid.cell_area()
}

/// Energy-law defect for the phase/nutrient subsystem under a prescribed
/// velocity: the fluid energy is not evolved, and the transport work enters
/// instead of the viscous dissipation.
pub fn bel_residual_prescribed(prev: &EnergyLedger, next: &EnergyLedger, dt: f64, work: f64) -> f64 {
    (next.free_energy - prev.free_energy) + dt * (next.diss_mu + next.diss_cross) + dt * next.oono_work + dt * work
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassReport {
    /// Largest `|mean φ − law|`, absolute.
    pub phi_abs_dev: f64,
    /// The same divided by `|mean φ⁰ − c₀|` (absolute when that vanishes).
    pub phi_rel_dev: f64,
    pub sigma_abs_dev: f64,
}

/// Compares `mean φ` with `(mean φ⁰ − c₀)(1 + α dt)^{-n} + c₀`, taking the
/// step size between rows as uniform.
pub fn mass_check(series: &[EnergyLedger], p: &ModelParams) -> Option<MassReport> {
    let first = series.first()?;
    let d0 = first.mean_phi - p.c0;
    let mut factor = 1.0;
    let mut phi_abs_dev = 0.0_f64;
    let mut sigma_abs_dev = 0.0_f64;
    for w in series.windows(2) {
        let steps = w[1].step.saturating_sub(w[0].step).max(1);
        let dt = (w[1].t - w[0].t) / steps as f64;
        for _ in 0..steps {
            factor /= 1.0 + p.alpha * dt;
        }
        let expected = p.c0 + d0 * factor;
        phi_abs_dev = phi_abs_dev.max((w[1].mean_phi - expected).abs());
        sigma_abs_dev = sigma_abs_dev.max((w[1].mean_sigma - first.mean_sigma).abs());
    }
    let phi_rel_dev = if d0 != 0.0 { phi_abs_dev / d0.abs() } else { phi_abs_dev };
    Some(MassReport {
        phi_abs_dev,
        phi_rel_dev,
        sigma_abs_dev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationReport {
    /// Smallest margin over the whole series.
    pub overall_min: f64,
    /// Smallest margin in the final window.
    pub window_min: f64,
    pub window_start: f64,
    /// Largest drop of the running minimum inside the window below its value
    /// at the window start.
    pub running_min_drop: f64,
    pub final_margin: f64,
}

impl SeparationReport {
    pub fn separated(&self) -> bool {
        self.window_min > 0.0
    }
}

/// Separation margin `1 − max|φ|` over the last `window` fraction of the run.
pub fn separation(series: &[EnergyLedger], window: f64) -> Option<SeparationReport> {
    let last = series.last()?;
    let first = series.first()?;
    let t0 = last.t - window.clamp(0.0, 1.0) * (last.t - first.t);
    let tail: Vec<&EnergyLedger> = series.iter().filter(|r| r.t >= t0).collect();
    let start = tail.first()?.sep_delta;
    let mut running = start;
    let mut window_min = f64::INFINITY;
    for r in &tail {
        running = running.min(r.sep_delta);
        window_min = window_min.min(r.sep_delta);
    }
    Some(SeparationReport {
        overall_min: series.iter().map(|r| r.sep_delta).fold(f64::INFINITY, f64::min),
        window_min,
        window_start: tail[0].t,
        running_min_drop: start - running,
        final_margin: last.sep_delta,
    })
}
