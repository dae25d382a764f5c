//! Stationary states under the mass constraints, and algebraic decay-rate
//! fits towards them.
//!
//! With `σ∞ − χφ∞` constant the stationary system reduces to a
//! mass-constrained critical point of
//! `F_red(φ) = ∫ ½|∇φ|² + Ψ(φ) − (χ²/2)φ² + (β/2)|∇N(φ − m)|²`.
//! That is found by implicit (proximal) gradient steps whose pseudo-time step
//! grows while the steps keep succeeding.

use crate::chd::{ModelParams, PHASE_BOUND};
use crate::diagnostics::free_energy;
use crate::elliptic::{solve_spd_preconditioned, Elliptic, Kernel, SolverConfig};
use crate::error::{ChnsError, Result};
use crate::grid::{self, laplacian_neumann, mean, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryConfig {
    /// Converged once the zero-mean residual has max norm `<= rel_tol · θ₀`.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Initial pseudo-time step.
    pub tau0: f64,
    pub tau_max: f64,
    pub max_newton: usize,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            max_iter: 400,
            tau0: 1.0,
            tau_max: 1e8,
            max_newton: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub phi_inf: ScalarField,
    pub sigma_inf: ScalarField,
    /// `μ∞ = −Δφ∞ + Ψ'(φ∞) − χσ∞ + βN(φ∞ − m)`; constant up to the residual.
    pub mu_inf: ScalarField,
    pub residual: f64,
    pub mass_phi: f64,
    pub mass_sigma: f64,
    pub free_energy_at: f64,
    pub iterations: usize,
    /// Reduced energy after each accepted pseudo-time step.
    pub energy_history: Vec<f64>,
}

/// Mean that a trajectory started at `mean_phi0` settles to.
pub fn target_phi_mean(mean_phi0: f64, p: &ModelParams) -> f64 {
    if p.alpha > 0.0 {
        p.c0
    } else {
        mean_phi0
    }
}

struct Reduced<'a> {
    ell: &'a Elliptic,
    p: &'a ModelParams,
}

impl Reduced<'_> {
    fn energy(&self, phi: &ScalarField) -> Result<f64> {
        let g = phi.grid;
        let lap = laplacian_neumann(phi);
        let mut e = 0.0;
        for (&r, &l) in phi.values.iter().zip(&lap.values) {
            e += -0.5 * r * l + self.p.potential.psi(r)? - 0.5 * self.p.chi * self.p.chi * r * r;
        }
        e *= g.cell_area();
        if self.p.beta != 0.0 {
            let u = phi.zero_mean();
            let (nu, _) = self.ell.neumann_inverse_projected(&u)?;
            e += 0.5 * self.p.beta * grid::l2_inner(&u, &nu)?;
        }
        Ok(e)
    }

    /// `−Δφ + Ψ'(φ) − χ²φ + βN(φ − m)`.
    fn gradient(&self, phi: &ScalarField) -> Result<ScalarField> {
        let lap = laplacian_neumann(phi);
        let chi2 = self.p.chi * self.p.chi;
        let values = phi
            .values
            .iter()
            .zip(&lap.values)
            .map(|(&r, &l)| Ok(-l + self.p.potential.psi_prime(r)? - chi2 * r))
            .collect::<Result<Vec<f64>>>()?;
        let mut out = ScalarField { grid: phi.grid, values };
        if self.p.beta != 0.0 {
            let (n, _) = self.ell.neumann_inverse_projected(phi)?;
            out = out.axpy(self.p.beta, &n);
        }
        Ok(out)
    }
}

fn projected_inf(f: &ScalarField) -> f64 {
    let m = mean(f);
    f.values.iter().fold(0.0_f64, |a, v| a.max((v - m).abs()))
}

/// Solves the reduced stationary problem from `seed_phi`; `sigma_mean` is the
/// conserved nutrient mean.
pub fn solve_stationary(
    seed_phi: &ScalarField,
    sigma_mean: f64,
    p: &ModelParams,
    ell: &Elliptic,
    cfg: &StationaryConfig,
) -> Result<Equilibrium> {
    p.validate()?;
    if p.potential.is_singular() && seed_phi.max_abs() >= 1.0 {
        return Err(ChnsError::Domain(seed_phi.max_abs()));
    }
    let m = target_phi_mean(mean(seed_phi), p);
    if !(m > -1.0 && m < 1.0) {
        return Err(ChnsError::InvalidParams(format!("target mean {m} outside (-1, 1)")));
    }
    let red = Reduced { ell, p };
    let shift = m - mean(seed_phi);
    let mut phi = seed_phi.map(|v| v + shift);
    if p.potential.is_singular() && phi.max_abs() >= 1.0 {
        return Err(ChnsError::Domain(phi.max_abs()));
    }

    let tol = cfg.rel_tol * p.theta0();
    let mut energy = red.energy(&phi)?;
    let mut history = vec![energy];
    let mut res = projected_inf(&red.gradient(&phi)?);
    let mut tau = cfg.tau0;
    let mut iterations = 0;
    let mut failures = 0;
    while res > tol {
        if iterations >= cfg.max_iter {
            return Err(ChnsError::NoConvergence {
                solver: "stationary pseudo-time",
                iterations,
                residual: res,
            });
        }
        iterations += 1;
        match proximal_step(&red, &phi, tau, 1e-2 * tol, cfg) {
            Ok(next) => {
                let e = red.energy(&next)?;
                if e <= energy + 1e-12 * energy.abs().max(1.0) {
                    phi = next;
                    energy = e;
                    history.push(e);
                    res = projected_inf(&red.gradient(&phi)?);
                    tau = (2.0 * tau).min(cfg.tau_max);
                    failures = 0;
                    continue;
                }
                log::debug!("pseudo-time step raised the energy at tau = {tau:.3e}");
            }
            Err(e) if e.is_solver_failure() => {
                log::debug!("pseudo-time step failed at tau = {tau:.3e}: {e}");
            }
            Err(e) => return Err(e),
        }
        tau *= 0.25;
        failures += 1;
        if failures > 40 {
            return Err(ChnsError::NoConvergence {
                solver: "stationary pseudo-time",
                iterations,
                residual: res,
            });
        }
    }

    let s0 = sigma_mean - p.chi * m;
    let sigma_inf = phi.map(|r| p.chi * r + s0);
    let mu_inf = crate::diagnostics::chemical_potential(&phi, &sigma_inf, p, ell)?;
    Ok(Equilibrium {
        residual: res,
        mass_phi: mean(&phi),
        mass_sigma: mean(&sigma_inf),
        free_energy_at: free_energy(&phi, &sigma_inf, p, ell)?,
        sigma_inf,
        mu_inf,
        phi_inf: phi,
        iterations,
        energy_history: history,
    })
}

/// Minimizes `F_red(φ) + |φ − φ_k|²/(2τ)` over fields with the mean of
/// `φ_k` by Newton with conjugate-gradient inner solves.
fn proximal_step(red: &Reduced, phi_k: &ScalarField, tau: f64, tol: f64, cfg: &StationaryConfig) -> Result<ScalarField> {
    let p = red.p;
    let g = phi_k.grid;
    let basis = red.ell.cell_basis();
    let chi2 = p.chi * p.chi;
    let lin = SolverConfig {
        rel_tol: 1e-10,
        max_iter: Some(10 * g.n_cells()),
        ..*red.ell.config()
    };
    let residual = |phi: &ScalarField| -> Result<Vec<f64>> {
        let grad = red.gradient(phi)?;
        let mut r: Vec<f64> = grad
            .values
            .iter()
            .zip(phi.values.iter().zip(&phi_k.values))
            .map(|(gv, (x, xk))| gv + (x - xk) / tau)
            .collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        r.iter_mut().for_each(|v| *v -= m);
        Ok(r)
    };
    let mut phi = phi_k.clone();
    let scale = 1.0 + red.gradient(phi_k)?.max_abs();
    for _ in 0..cfg.max_newton {
        let r = residual(&phi)?;
        let rn = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if rn <= tol.max(1e-13 * scale) {
            return Ok(phi);
        }
        let diag: Vec<f64> = phi
            .values
            .iter()
            .map(|&x| p.potential.psi_second(x).map(|d| d - chi2 + 1.0 / tau))
            .collect::<Result<_>>()?;
        let d_mean = (diag.iter().sum::<f64>() / diag.len() as f64).max(1.0 / tau);
        let beta = p.beta;
        let apply = |x: &[f64], y: &mut [f64]| {
            let xf = ScalarField { grid: g, values: x.to_vec() };
            let lap = laplacian_neumann(&xf);
            let nx = if beta != 0.0 {
                basis.apply_symbol(x, |lam| (lam > 0.0).then(|| 1.0 / lam))
            } else {
                vec![0.0; x.len()]
            };
            for k in 0..x.len() {
                y[k] = -lap.values[k] + diag[k] * x[k] + beta * nx[k];
            }
        };
        let precond = |x: &[f64], y: &mut [f64]| {
            let z = basis.apply_symbol(x, |lam| {
                (lam > 0.0).then(|| 1.0 / (lam + d_mean + beta.max(0.0) / lam))
            });
            y.copy_from_slice(&z);
        };
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let sol = solve_spd_preconditioned(apply, Some(precond), &rhs, Kernel::Constants, &lin)?;
        let mut delta = sol.x;
        let dm = delta.iter().sum::<f64>() / delta.len() as f64;
        delta.iter_mut().for_each(|v| *v -= dm);
        let mut step = 1.0_f64;
        if p.potential.is_singular() {
            for (x, d) in phi.values.iter().zip(&delta) {
                let room = if *d > 0.0 { 1.0 - x } else { 1.0 + x };
                if d.abs() > 0.9 * room {
                    step = step.min(0.9 * room / d.abs());
                }
            }
        }
        for (x, d) in phi.values.iter_mut().zip(&delta) {
            *x += step * d;
        }
        if p.potential.is_singular() && phi.max_abs() > PHASE_BOUND {
            return Err(ChnsError::Domain(phi.max_abs()));
        }
    }
    let r = residual(&phi)?;
    Err(ChnsError::NoConvergence {
        solver: "proximal Newton",
        iterations: cfg.max_newton,
        residual: r.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
    })
}

/// Zero-mean stationarity residual of `(φ, σ)`: max norm of the mean-free
/// part of `−Δφ + Ψ'(φ) − χσ + βN(φ − mean φ)`.
pub fn stationarity_residual(phi: &ScalarField, sigma: &ScalarField, p: &ModelParams, ell: &Elliptic) -> Result<f64> {
    let mu = crate::diagnostics::chemical_potential(phi, sigma, p, ell)?;
    Ok(projected_inf(&mu))
}

/// `‖∇(φ − φ∞)‖ + ‖φ − φ∞‖ + ‖σ − σ∞‖`, discrete L² norms.
pub fn deficit(phi: &ScalarField, sigma: &ScalarField, eq: &Equilibrium) -> Result<f64> {
    let e = phi.axpy(-1.0, &eq.phi_inf);
    let es = sigma.axpy(-1.0, &eq.sigma_inf);
    let ge = grid::grad_to_faces(&e);
    Ok(grid::face_inner(&ge, &ge)?.sqrt() + grid::l2_inner(&e, &e)?.sqrt() + grid::l2_inner(&es, &es)?.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateFlag {
    /// A semilog fit explains the tail better than any power law.
    ExponentialLike,
    /// `κ̂` outside `(0, 1/2)`.
    OutOfRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub kappa_hat: f64,
    /// Log-log slope `m`.
    pub slope: f64,
    pub r2: f64,
    pub window: (f64, f64),
    pub flags: Vec<RateFlag>,
}

/// `κ` with `m = −κ/(1 − 2κ)`.
pub fn kappa_from_slope(m: f64) -> f64 {
    -m / (1.0 - 2.0 * m)
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2)
}

/// Fits `deficit ~ C (1 + t)^m` on the last `tail` fraction (by count) of the
/// samples and maps the slope to `κ̂`.
pub fn rate_fit(times: &[f64], deficits: &[f64], tail: f64) -> Result<RateFit> {
    if times.len() != deficits.len() {
        return Err(ChnsError::Shape {
            expected: times.len(),
            got: deficits.len(),
        });
    }
    let n = times.len();
    let k = ((n as f64) * tail.clamp(0.0, 1.0)).round() as usize;
    if k < 3 {
        return Err(ChnsError::FitRefused(format!("need at least 3 samples in the tail, have {k}")));
    }
    let (t, d) = (&times[n - k..], &deficits[n - k..]);
    if let Some(bad) = d.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(ChnsError::FitRefused(format!("deficit {bad} is not positive")));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) || t[0] <= -1.0 {
        return Err(ChnsError::FitRefused("sample times must increase and exceed -1".into()));
    }
    if let Some(i) = d.windows(2).position(|w| w[1] > w[0]) {
        return Err(ChnsError::FitRefused(format!(
            "tail is not monotone: deficit rises from {:e} to {:e} at t = {}",
            d[i],
            d[i + 1],
            t[i + 1]
        )));
    }
    let lx: Vec<f64> = t.iter().map(|v| (1.0 + v).ln()).collect();
    let ly: Vec<f64> = d.iter().map(|v| v.ln()).collect();
    let (slope, _, r2) = linear_fit(&lx, &ly);
    let (_, _, r2_semilog) = linear_fit(t, &ly);
    let kappa_hat = kappa_from_slope(slope);
    let mut flags = Vec::new();
    if r2_semilog > r2 {
        flags.push(RateFlag::ExponentialLike);
    }
    if !(kappa_hat > 0.0 && kappa_hat < 0.5) {
        flags.push(RateFlag::OutOfRange);
    }
    Ok(RateFit {
        kappa_hat,
        slope,
        r2,
        window: (t[0], t[k - 1]),
        flags,
    })
}
