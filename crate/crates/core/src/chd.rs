//! Convective Cahn–Hilliard–diffusion step for a prescribed solenoidal
//! velocity.
//!
//! The phase update treats the convex part `Ψ₀` implicitly and the concave
//! part, the chemotactic coupling and the nonlocal Oono term explicitly.
//! Because the mean of the phase equation decouples, the new mean is known
//! before the nonlinear solve; the remaining mean-free problem is written with
//! `N` eliminating `μ`, which makes the Newton Jacobian
//! `N/dt − Δ + Ψ₀''(φ) + γ/dt` symmetric positive definite on mean-free
//! fields. That system goes to preconditioned conjugate gradients with the
//! constant-coefficient cosine-basis preconditioner.

use crate::coupled::SimState;
use crate::elliptic::{solve_spd_preconditioned, Elliptic, Kernel, SolverConfig};
use crate::error::{ChnsError, Result};
use crate::grid::{self, advect_scalar, laplacian_neumann, mean, MacVelocity, ScalarField};
use crate::potential::PotentialParams;

/// Largest admissible `|φ|` after an accepted step with a singular potential.
pub const PHASE_BOUND: f64 = 1.0 - 1e-12;

/// Physical coefficients of the coupled system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub nu1: f64,
    pub nu2: f64,
    pub chi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c0: f64,
    pub gamma: f64,
    pub potential: PotentialParams,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            nu1: 1.0,
            nu2: 1.0,
            chi: 0.0,
            alpha: 0.0,
            beta: 0.0,
            c0: 0.0,
            gamma: 0.0,
            potential: PotentialParams::default(),
        }
    }
}

impl ModelParams {
    pub fn theta(&self) -> f64 {
        self.potential.theta
    }

    pub fn theta0(&self) -> f64 {
        self.potential.theta0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ChnsError::InvalidParams(msg));
        if !(self.nu1 > 0.0 && self.nu2 > 0.0 && self.nu1.is_finite() && self.nu2.is_finite()) {
            return bad(format!(
                "violates (H1): nu1 and nu2 must be positive, got {} and {}",
                self.nu1, self.nu2
            ));
        }
        self.potential.validate()?;
        if !self.chi.is_finite() {
            return bad("violates (H3): chi must be a finite real".into());
        }
        if !(self.c0 > -1.0 && self.c0 < 1.0) {
            return bad(format!("violates (H3): c0 must lie in (-1, 1), got {}", self.c0));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("violates (H3): alpha must be ≥ 0, got {}", self.alpha));
        }
        if !self.beta.is_finite() {
            return bad("violates (H3): beta must be a finite real".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be ≥ 0, got {}", self.gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub max_iter: usize,
    /// Stop once `|G|_inf <= tol * (1 + |explicit part|_inf)`.
    pub tol: f64,
    /// Fraction of the distance to `±1` a single update may cover.
    pub barrier_fraction: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-9,
            barrier_fraction: 0.9,
        }
    }
}

/// Solver state shared by every step on one grid.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub elliptic: Elliptic,
    pub newton: NewtonConfig,
}

impl StepContext {
    pub fn new(grid: grid::GridSpec, solver: SolverConfig) -> Result<Self> {
        Ok(Self {
            elliptic: Elliptic::new(grid, solver)?,
            newton: NewtonConfig::default(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChdStepReport {
    pub newton_iters: usize,
    pub newton_residual: f64,
    pub linear_iters: usize,
    pub phi_min: f64,
    pub phi_max: f64,
    /// Newton updates shortened by the barrier safeguard.
    pub clipped_steps: usize,
}

/// Optional source terms added to the right-hand sides, evaluated at the new
/// time level (manufactured solutions).
#[derive(Debug, Clone, Default)]
pub struct Forcing {
    pub phi: Option<ScalarField>,
    pub sigma: Option<ScalarField>,
}

#[derive(Debug, Clone)]
pub struct ChStep {
    pub phi: ScalarField,
    pub mu: ScalarField,
    pub report: ChdStepReport,
}

/// Mean of `φⁿ⁺¹` implied by the implicit Oono term.
pub fn next_phi_mean(mean_phi: f64, p: &ModelParams, dt: f64, source_mean: f64) -> f64 {
    (mean_phi + dt * (p.alpha * p.c0 + source_mean)) / (1.0 + p.alpha * dt)
}

/// The explicit part of `μ`: `θ₀φⁿ + χσⁿ − βN(φⁿ − mean φⁿ)`.
fn explicit_mu_part(
    ell: &Elliptic,
    phi_n: &ScalarField,
    sigma_n: &ScalarField,
    p: &ModelParams,
) -> Result<ScalarField> {
    let mut e = phi_n.scale(p.theta0()).axpy(p.chi, sigma_n);
    if p.beta != 0.0 {
        let (nphi, _) = ell.neumann_inverse_projected(phi_n)?;
        e = e.axpy(-p.beta, &nphi);
    }
    Ok(e)
}

fn check_phase(phi: &ScalarField, pot: &PotentialParams) -> Result<()> {
    if !phi.is_finite() {
        return Err(ChnsError::Domain(f64::NAN));
    }
    if pot.is_singular() {
        if let Some(&bad) = phi.values.iter().find(|v| v.abs() >= 1.0) {
            return Err(ChnsError::Domain(bad));
        }
    }
    Ok(())
}

/// One implicit phase step: returns `(φⁿ⁺¹, μⁿ⁺¹)`.
pub fn ch_step(
    ctx: &StepContext,
    phi_n: &ScalarField,
    sigma_n: &ScalarField,
    vel: &MacVelocity,
    p: &ModelParams,
    dt: f64,
    source: Option<&ScalarField>,
) -> Result<ChStep> {
    if !(dt > 0.0) {
        return Err(ChnsError::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    let ell = &ctx.elliptic;
    let pot = &p.potential;
    let g = phi_n.grid;
    check_phase(phi_n, pot)?;

    let src_mean = source.map(mean).unwrap_or(0.0);
    let m = next_phi_mean(mean(phi_n), p, dt, src_mean);
    let explicit = explicit_mu_part(ell, phi_n, sigma_n, p)?;

    // b(φ) = φ/dt + b0 is the mean-free residual of the phase equation
    // without the Δμ term.
    let mut b0 = advect_scalar(vel, phi_n).axpy(-1.0 / dt, phi_n);
    let shift = p.alpha * (m - p.c0);
    b0.values.iter_mut().for_each(|v| *v += shift);
    if let Some(f) = source {
        b0 = b0.axpy(-1.0, f);
    }

    let gamma_dt = p.gamma / dt;
    let residual = |phi: &ScalarField| -> Result<(Vec<f64>, f64)> {
        let b = b0.axpy(1.0 / dt, phi);
        let (nb, _) = ell.neumann_inverse_projected(&b)?;
        let lap = laplacian_neumann(phi);
        let mut r = Vec::with_capacity(g.n_cells());
        for k in 0..g.n_cells() {
            let x = phi.values[k];
            r.push(
                nb.values[k] - lap.values[k] + pot.psi0_prime(x)? + gamma_dt * (x - phi_n.values[k])
                    - explicit.values[k],
            );
        }
        remove_mean(&mut r);
        // convex merit whose gradient is r
        let mut merit = 0.5 * dt * grid::dot(&b.values, &nb.values);
        for k in 0..g.n_cells() {
            let x = phi.values[k];
            let d = x - phi_n.values[k];
            merit += -0.5 * x * lap.values[k] + pot.psi0(x)? + 0.5 * gamma_dt * d * d
                - explicit.values[k] * x;
        }
        Ok((r, merit))
    };

    let dev = phi_n.zero_mean();
    let mut lambda = 1.0;
    if pot.is_singular() && dev.values.iter().any(|v| (m + v).abs() >= 1.0) {
        // pull the guess towards the new mean to stay inside (−1, 1)
        lambda = ctx.newton.barrier_fraction * (1.0 - m.abs()) / dev.max_abs();
    }
    let mut phi = dev.map(|v| m + lambda * v);
    check_phase(&phi, pot)?;
    let scale = 1.0 + explicit.max_abs();
    let tol = ctx.newton.tol * scale;
    let mut report = ChdStepReport::default();
    let (mut r, mut merit) = residual(&phi)?;
    let mut res = inf_norm(&r);

    let basis = ell.cell_basis();
    let lin_cfg = SolverConfig {
        rel_tol: 1e-10,
        max_iter: Some(10 * g.n_cells()),
        ..*ell.config()
    };
    while res > tol {
        if report.newton_iters >= ctx.newton.max_iter {
            return Err(ChnsError::NoConvergence {
                solver: "phase Newton",
                iterations: report.newton_iters,
                residual: res,
            });
        }
        report.newton_iters += 1;

        let diag: Vec<f64> = phi
            .values
            .iter()
            .map(|&x| pot.psi0_second(x).map(|d| d + gamma_dt))
            .collect::<Result<_>>()?;
        let d_mean = diag.iter().sum::<f64>() / diag.len() as f64;
        let apply = |x: &[f64], y: &mut [f64]| {
            let xf = ScalarField { grid: g, values: x.to_vec() };
            let nx = basis.apply_symbol(x, |lam| (lam > 0.0).then(|| 1.0 / lam));
            let lap = laplacian_neumann(&xf);
            for k in 0..x.len() {
                y[k] = nx[k] / dt - lap.values[k] + diag[k] * x[k];
            }
        };
        let precond = |x: &[f64], y: &mut [f64]| {
            let z = basis.apply_symbol(x, |lam| {
                (lam > 0.0).then(|| 1.0 / (1.0 / (dt * lam) + lam + d_mean))
            });
            y.copy_from_slice(&z);
        };
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let sol = solve_spd_preconditioned(apply, Some(precond), &rhs, Kernel::Constants, &lin_cfg)?;
        report.linear_iters += sol.iterations;
        let mut delta = sol.x;
        remove_mean(&mut delta);

        let mut step = 1.0_f64;
        if pot.is_singular() {
            let frac = ctx.newton.barrier_fraction;
            for (x, d) in phi.values.iter().zip(&delta) {
                let room = if *d > 0.0 { 1.0 - x } else { 1.0 + x };
                if d.abs() > frac * room {
                    step = step.min(frac * room / d.abs());
                }
            }
            if step < 1.0 {
                report.clipped_steps += 1;
            }
        }

        // backtrack on the convex merit; accept any step that lowers either
        // the merit or the residual
        let mut accepted = None;
        for _ in 0..30 {
            let trial = ScalarField {
                grid: g,
                values: phi.values.iter().zip(&delta).map(|(x, d)| x + step * d).collect(),
            };
            let (tr, tm) = residual(&trial)?;
            let tres = inf_norm(&tr);
            if tm <= merit || tres < res {
                accepted = Some((trial, tr, tm, tres));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, tr, tm, tres)) => {
                phi = trial;
                r = tr;
                merit = tm;
                res = tres;
            }
            None => {
                return Err(ChnsError::NoConvergence {
                    solver: "phase Newton line search",
                    iterations: report.newton_iters,
                    residual: res,
                })
            }
        }
    }
    report.newton_residual = res;

    if pot.is_singular() && phi.max_abs() > PHASE_BOUND {
        return Err(ChnsError::Domain(phi.max_abs()));
    }
    report.phi_min = phi.min();
    report.phi_max = phi.max();

    let mu = chemical_potential_split(&phi, phi_n, &explicit, p, dt)?;
    Ok(ChStep { phi, mu, report })
}

/// `μⁿ⁺¹ = −Δφⁿ⁺¹ + Ψ₀'(φⁿ⁺¹) − [θ₀φⁿ + χσⁿ − βN(φⁿ − mean)] + γ(φⁿ⁺¹ − φⁿ)/dt`.
fn chemical_potential_split(
    phi: &ScalarField,
    phi_n: &ScalarField,
    explicit: &ScalarField,
    p: &ModelParams,
    dt: f64,
) -> Result<ScalarField> {
    let lap = laplacian_neumann(phi);
    let gamma_dt = p.gamma / dt;
    let values = (0..phi.values.len())
        .map(|k| {
            let x = phi.values[k];
            Ok(-lap.values[k] + p.potential.psi0_prime(x)? - explicit.values[k]
                + gamma_dt * (x - phi_n.values[k]))
        })
        .collect::<Result<_>>()?;
    Ok(ScalarField { grid: phi.grid, values })
}

/// Implicit diffusion of `σ` with explicit transport and cross-diffusion.
pub fn sigma_step(
    ctx: &StepContext,
    sigma_n: &ScalarField,
    phi_next: &ScalarField,
    vel: &MacVelocity,
    p: &ModelParams,
    dt: f64,
    source: Option<&ScalarField>,
) -> Result<ScalarField> {
    let mut rhs = sigma_n
        .scale(1.0 / dt)
        .axpy(-1.0, &advect_scalar(vel, sigma_n));
    if p.chi != 0.0 {
        rhs = rhs.axpy(-p.chi, &laplacian_neumann(phi_next));
    }
    if let Some(f) = source {
        rhs = rhs.axpy(1.0, f);
    }
    let (sigma, _) = ctx.elliptic.solve_neumann_helmholtz(1.0 / dt, 1.0, &rhs)?;
    Ok(sigma)
}

/// `ch_step` then `sigma_step`; advances `t` and the step counter, leaves the
/// velocity and pressure untouched.
pub fn chd_step(
    ctx: &StepContext,
    state: &SimState,
    vel: &MacVelocity,
    p: &ModelParams,
    dt: f64,
    forcing: Option<&Forcing>,
) -> Result<(SimState, ChdStepReport)> {
    let ch = ch_step(
        ctx,
        &state.phi,
        &state.sigma,
        vel,
        p,
        dt,
        forcing.and_then(|f| f.phi.as_ref()),
    )?;
    let sigma = sigma_step(
        ctx,
        &state.sigma,
        &ch.phi,
        vel,
        p,
        dt,
        forcing.and_then(|f| f.sigma.as_ref()),
    )?;
    let next = SimState {
        vel: state.vel.clone(),
        phi: ch.phi,
        mu: ch.mu,
        sigma,
        pressure: state.pressure.clone(),
        t: state.t + dt,
        step: state.step + 1,
    };
    Ok((next, ch.report))
}

fn remove_mean(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::free_energy;
    use crate::elliptic::SolverConfig;
    use crate::grid::GridSpec;
    use crate::potential::PotentialParams;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ctx(n: usize, l: f64) -> StepContext {
        StepContext::new(GridSpec::new(n, n, l, l).unwrap(), SolverConfig::default()).unwrap()
    }

    fn noisy(g: GridSpec, m: f64, amp: f64, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_values(g, (0..g.n_cells()).map(|_| m + amp * rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Ghost-cell Neumann Laplacian assembled entry by entry.
    fn dense_laplacian(g: GridSpec) -> DMatrix<f64> {
        let n = g.n_cells();
        let (ax, ay) = (1.0 / g.hx().powi(2), 1.0 / g.hy().powi(2));
        let mut a = DMatrix::zeros(n, n);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let r = g.cell(i, j);
                let mut link = |c: usize, w: f64| {
                    a[(r, c)] += w;
                    a[(r, r)] -= w;
                };
                if i > 0 {
                    link(g.cell(i - 1, j), ax);
                }
                if i + 1 < g.nx {
                    link(g.cell(i + 1, j), ax);
                }
                if j > 0 {
                    link(g.cell(i, j - 1), ay);
                }
                if j + 1 < g.ny {
                    link(g.cell(i, j + 1), ay);
                }
            }
        }
        a
    }

    fn swirl(g: GridSpec, amp: f64) -> MacVelocity {
        MacVelocity::from_stream_function(g, |x, y| amp * (PI * x / g.lx).sin() * (PI * y / g.ly).sin())
    }

    #[test]
    fn validation_names_hypotheses() {
        assert!(ModelParams::default().validate().is_ok());
        let msg = |p: ModelParams| p.validate().unwrap_err().to_string();
        assert!(msg(ModelParams { alpha: -1.0, ..Default::default() }).contains("violates (H3): alpha must be ≥ 0"));
        assert!(msg(ModelParams { nu1: 0.0, ..Default::default() }).contains("(H1)"));
        assert!(msg(ModelParams { c0: 1.0, ..Default::default() }).contains("(H3)"));
        let bad_split = ModelParams {
            potential: PotentialParams::logarithmic(2.0, 1.0),
            ..Default::default()
        };
        assert!(msg(bad_split).contains("(H2)"));
        assert!(ModelParams { chi: -3.0, beta: -2.0, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn uniform_state_is_a_fixed_point() {
        let c = ctx(8, 4.0);
        let g = c.elliptic.grid();
        let p = ModelParams { alpha: 1.0, chi: 0.4, beta: 1.0, c0: 0.3, gamma: 0.5, ..Default::default() };
        let phi = ScalarField::constant(g, 0.3);
        let sigma = ScalarField::constant(g, 0.5);
        let out = ch_step(&c, &phi, &sigma, &MacVelocity::zeros(g), &p, 0.1, None).unwrap();
        let mu = p.potential.psi_prime(0.3).unwrap() - 0.4 * 0.5;
        assert!(out.phi.values.iter().all(|v| (v - 0.3).abs() < 1e-14));
        assert!(out.mu.values.iter().all(|v| (v - mu).abs() < 1e-12));
        let s = sigma_step(&c, &sigma, &out.phi, &MacVelocity::zeros(g), &p, 0.1, None).unwrap();
        assert!(s.values.iter().all(|v| (v - 0.5).abs() < 1e-14));
    }

    #[test]
    fn mean_follows_implicit_relaxation_law() {
        let c = ctx(16, 8.0);
        let g = c.elliptic.grid();
        let p = ModelParams { alpha: 2.0, c0: -0.2, chi: 0.3, beta: 0.5, ..Default::default() };
        let phi = noisy(g, 0.1, 0.3, 1);
        let sigma = noisy(g, 0.0, 0.5, 2);
        let dt = 0.05;
        let out = ch_step(&c, &phi, &sigma, &swirl(g, 0.5), &p, dt, None).unwrap();
        let lhs = mean(&out.phi) - p.c0;
        let rhs = (mean(&phi) - p.c0) / (1.0 + p.alpha * dt);
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn step_solves_the_discrete_system() {
        let c = ctx(16, 8.0);
        let g = c.elliptic.grid();
        let p = ModelParams { alpha: 0.7, c0: 0.1, chi: 0.4, beta: 0.8, gamma: 0.3, ..Default::default() };
        let phi_n = noisy(g, 0.0, 0.6, 3);
        let sigma_n = noisy(g, 0.2, 0.5, 4);
        let vel = swirl(g, 0.8);
        let dt = 0.02;
        let out = ch_step(&c, &phi_n, &sigma_n, &vel, &p, dt, None).unwrap();
        let phi = &out.phi;
        // (φ − φⁿ)/dt + A(v, φⁿ) − Δμ + α(mean φ − c₀) = 0
        let r1 = phi
            .axpy(-1.0, &phi_n)
            .scale(1.0 / dt)
            .axpy(1.0, &advect_scalar(&vel, &phi_n))
            .axpy(-1.0, &laplacian_neumann(&out.mu))
            .map(|v| v + p.alpha * (mean(phi) - p.c0));
        assert!(r1.max_abs() < 1e-7, "{}", r1.max_abs());
        // μ from its definition, with N evaluated independently by CG
        let cg = Elliptic::new(g, SolverConfig::iterative()).unwrap();
        let n_phi = cg.inverse_neumann_laplacian(&phi_n.zero_mean()).unwrap();
        let lap = laplacian_neumann(phi);
        for k in 0..g.n_cells() {
            let x = phi.values[k];
            let mu = -lap.values[k] + p.potential.psi0_prime(x).unwrap() - p.theta0() * phi_n.values[k]
                - p.chi * sigma_n.values[k]
                + p.beta * n_phi.values[k]
                + p.gamma * (x - phi_n.values[k]) / dt;
            assert!((mu - out.mu.values[k]).abs() < 1e-8);
        }
    }

    /// Fully coupled Newton on the 2n unknowns (φ, μ), dense LU.
    fn dense_oracle(phi_n: &ScalarField, p: &ModelParams, dt: f64) -> (DVector<f64>, DVector<f64>) {
        let g = phi_n.grid;
        let n = g.n_cells();
        let l = dense_laplacian(g);
        let pn = DVector::from_vec(phi_n.values.clone());
        let mut phi = pn.clone();
        let mut mu = DVector::zeros(n);
        let t0 = p.theta0();
        for _ in 0..60 {
            let d0 = phi.map(|x| x * x * x + (t0 - 1.0) * x);
            let f1 = (&phi - &pn) / dt - &l * &mu;
            let f2 = &mu + &l * &phi - d0 + t0 * &pn;
            let mut jac = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                jac[(i, i)] = 1.0 / dt;
                jac[(n + i, n + i)] = 1.0;
                jac[(n + i, i)] -= 3.0 * phi[i] * phi[i] + t0 - 1.0;
                for k in 0..n {
                    jac[(i, n + k)] = -l[(i, k)];
                    jac[(n + i, k)] += l[(i, k)];
                }
            }
            let mut rhs = DVector::zeros(2 * n);
            rhs.rows_mut(0, n).copy_from(&(-f1));
            rhs.rows_mut(n, n).copy_from(&(-f2));
            let step = jac.lu().solve(&rhs).unwrap();
            phi += step.rows(0, n);
            mu += step.rows(n, n);
            if step.amax() < 1e-14 {
                break;
            }
        }
        (phi, mu)
    }

    #[test]
    fn quartic_step_matches_dense_coupled_newton() {
        let c = ctx(8, 4.0);
        let g = c.elliptic.grid();
        let p = ModelParams { potential: PotentialParams::quartic(), ..Default::default() };
        let phi_n = noisy(g, 0.1, 0.8, 5);
        let dt = 0.05;
        let out = ch_step(&c, &phi_n, &ScalarField::zeros(g), &MacVelocity::zeros(g), &p, dt, None).unwrap();
        let (phi, mu) = dense_oracle(&phi_n, &p, dt);
        let dphi = out.phi.values.iter().zip(phi.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dmu = out.mu.values.iter().zip(mu.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dphi <= 1e-9 && dmu <= 1e-9, "{dphi} {dmu}");
    }

    #[test]
    fn sigma_step_matches_dense_solve_and_conserves_mean() {
        let c = ctx(8, 2.0);
        let g = c.elliptic.grid();
        let p = ModelParams { chi: 1.0, ..Default::default() };
        let phi = ScalarField::from_fn(g, |x, _| (PI * x / g.lx).cos());
        let dt = 0.1;
        let s = sigma_step(&c, &ScalarField::zeros(g), &phi, &MacVelocity::zeros(g), &p, dt, None).unwrap();
        let l = dense_laplacian(g);
        let a = DMatrix::identity(g.n_cells(), g.n_cells()) / dt - &l;
        let rhs = -(&l * DVector::from_vec(phi.values.clone()));
        let x = a.lu().solve(&rhs).unwrap();
        let err = s.values.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10, "{err}");

        let sigma_n = noisy(g, 0.4, 0.3, 9);
        let s2 = sigma_step(&c, &sigma_n, &noisy(g, 0.0, 0.5, 10), &swirl(g, 1.0), &p, dt, None).unwrap();
        assert!((mean(&s2) - mean(&sigma_n)).abs() < 1e-12);
    }

    #[test]
    fn composition_matches_substeps() {
        let c = ctx(8, 4.0);
        let g = c.elliptic.grid();
        let p = ModelParams { chi: 0.5, alpha: 0.2, ..Default::default() };
        let state = SimState {
            vel: swirl(g, 0.3),
            phi: noisy(g, 0.0, 0.4, 11),
            mu: ScalarField::zeros(g),
            sigma: noisy(g, 0.1, 0.2, 12),
            pressure: ScalarField::zeros(g),
            t: 1.0,
            step: 3,
        };
        let (next, report) = chd_step(&c, &state, &state.vel, &p, 0.01, None).unwrap();
        let ch = ch_step(&c, &state.phi, &state.sigma, &state.vel, &p, 0.01, None).unwrap();
        let s = sigma_step(&c, &state.sigma, &ch.phi, &state.vel, &p, 0.01, None).unwrap();
        assert_eq!(next.phi, ch.phi);
        assert_eq!(next.mu, ch.mu);
        assert_eq!(next.sigma, s);
        assert_eq!(report, ch.report);
        assert_eq!((next.t, next.step), (1.01, 4));
        assert_eq!(next.vel, state.vel);
    }

    #[test]
    fn pure_convex_split_decays_free_energy() {
        let c = ctx(16, 16.0);
        let g = c.elliptic.grid();
        let p = ModelParams::default();
        let mut phi = noisy(g, 0.0, 0.3, 13);
        let sigma = ScalarField::zeros(g);
        let mut f = free_energy(&phi, &sigma, &p, &c.elliptic).unwrap();
        for _ in 0..100 {
            phi = ch_step(&c, &phi, &sigma, &MacVelocity::zeros(g), &p, 0.5, None).unwrap().phi;
            let next = free_energy(&phi, &sigma, &p, &c.elliptic).unwrap();
            assert!(next <= f + 1e-10, "{next} > {f}");
            f = next;
        }
    }

    #[test]
    fn safeguard_keeps_phase_strictly_inside() {
        let c = ctx(16, 8.0);
        let g = c.elliptic.grid();
        let p = ModelParams { potential: PotentialParams::logarithmic(0.3, 2.0), ..Default::default() };
        // sharp pure-phase bands pushed hard towards ±1
        let phi = ScalarField::from_fn(g, |x, _| 0.999 * (PI * x / 2.0).cos().signum());
        let out = ch_step(&c, &phi, &ScalarField::zeros(g), &MacVelocity::zeros(g), &p, 5.0, None).unwrap();
        assert!(out.phi.max_abs() <= PHASE_BOUND);
        assert!(out.report.phi_max < 1.0 && out.report.phi_min > -1.0);
        assert!(out.report.clipped_steps > 0);
    }

    #[test]
    fn newton_cap_is_reported() {
        let mut c = ctx(8, 4.0);
        c.newton.max_iter = 1;
        let g = c.elliptic.grid();
        let phi = noisy(g, 0.0, 0.9, 14);
        let err = ch_step(&c, &phi, &ScalarField::zeros(g), &MacVelocity::zeros(g), &ModelParams::default(), 1.0, None)
            .unwrap_err();
        assert!(matches!(err, ChnsError::NoConvergence { iterations: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_out_of_range_input() {
        let c = ctx(8, 4.0);
        let g = c.elliptic.grid();
        let phi = ScalarField::constant(g, 1.0);
        let err = ch_step(&c, &phi, &ScalarField::zeros(g), &MacVelocity::zeros(g), &ModelParams::default(), 0.1, None);
        assert!(matches!(err, Err(ChnsError::Domain(_))));
    }

    #[test]
    fn solver_modes_give_the_same_step() {
        let g = GridSpec::new(8, 8, 4.0, 4.0).unwrap();
        let p = ModelParams { beta: 1.0, chi: 0.3, alpha: 0.5, ..Default::default() };
        let phi = noisy(g, 0.0, 0.5, 15);
        let sigma = noisy(g, 0.0, 0.5, 16);
        let vel = swirl(g, 0.5);
        let runs: Vec<_> = [SolverConfig::default(), SolverConfig::iterative(), SolverConfig::dense()]
            .into_iter()
            .map(|cfg| {
                let c = StepContext::new(g, cfg).unwrap();
                ch_step(&c, &phi, &sigma, &vel, &p, 0.05, None).unwrap().phi
            })
            .collect();
        for r in &runs[1..] {
            assert!(r.axpy(-1.0, &runs[0]).max_abs() < 1e-8);
        }
    }
}
