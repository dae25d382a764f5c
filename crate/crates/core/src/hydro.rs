//! Navier–Stokes step on the staggered grid: skew-symmetric momentum
//! transport, concentration-dependent viscous stress, Korteweg forcing and a
//! Chorin projection.

use crate::chd::{ModelParams, StepContext};
use crate::error::{ChnsError, Result};
use crate::grid::{
    cell_to_faces, div_faces, grad_to_faces, laplacian_faces, GridSpec, MacVelocity, ScalarField,
};

/// Guards the CFL ratio against a velocity at rest.
pub const VELOCITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectionReport {
    pub pressure_iters: usize,
    pub div_inf_norm: f64,
    /// `|div v*|_inf` before projection.
    pub div_predictor: f64,
    pub helmholtz_iters: usize,
}

/// `ν(φ)` interpolated linearly between the pure phases, with `φ` clamped to
/// `[-1, 1]`.
pub fn viscosity_field(phi: &ScalarField, p: &ModelParams) -> ScalarField {
    phi.map(|r| {
        let r = r.clamp(-1.0, 1.0);
        0.5 * p.nu1 * (1.0 + r) + 0.5 * p.nu2 * (1.0 - r)
    })
}

/// `(μ + χσ)` averaged to faces times the face gradient of `φ`.
pub fn korteweg_force(mu: &ScalarField, sigma: &ScalarField, phi: &ScalarField, p: &ModelParams) -> MacVelocity {
    let pot = cell_to_faces(&mu.axpy(p.chi, sigma));
    let grad = grad_to_faces(phi);
    MacVelocity {
        grid: phi.grid,
        u: pot.u.iter().zip(&grad.u).map(|(a, b)| a * b).collect(),
        v: pot.v.iter().zip(&grad.v).map(|(a, b)| a * b).collect(),
    }
}

/// Cell strain rates `u_x`, `v_y` and node shear `u_y + v_x` of a no-slip
/// field. Nodes are indexed `j*(nx+1) + i` for `i <= nx`, `j <= ny`.
struct Strain {
    ux: Vec<f64>,
    vy: Vec<f64>,
    shear: Vec<f64>,
}

fn strain(w: &MacVelocity) -> Strain {
    let g = w.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let mut ux = vec![0.0; g.n_cells()];
    let mut vy = vec![0.0; g.n_cells()];
    for j in 0..ny {
        for i in 0..nx {
            let c = g.cell(i, j);
            ux[c] = (w.u[g.u_index(i + 1, j)] - w.u[g.u_index(i, j)]) / hx;
            vy[c] = (w.v[g.v_index(i, j + 1)] - w.v[g.v_index(i, j)]) / hy;
        }
    }
    let mut shear = vec![0.0; (nx + 1) * (ny + 1)];
    for j in 0..=ny {
        for i in 0..=nx {
            // antisymmetric ghosts beyond the walls
            let uy = if i == 0 || i == nx {
                0.0
            } else {
                let below = if j > 0 { w.u[g.u_index(i, j - 1)] } else { -w.u[g.u_index(i, 0)] };
                let above = if j < ny { w.u[g.u_index(i, j)] } else { -w.u[g.u_index(i, ny - 1)] };
                (above - below) / hy
            };
            let vx = if j == 0 || j == ny {
                0.0
            } else {
                let left = if i > 0 { w.v[g.v_index(i - 1, j)] } else { -w.v[g.v_index(0, j)] };
                let right = if i < nx { w.v[g.v_index(i, j)] } else { -w.v[g.v_index(nx - 1, j)] };
                (right - left) / hx
            };
            shear[j * (nx + 1) + i] = uy + vx;
        }
    }
    Strain { ux, vy, shear }
}

/// Node viscosities: mean of the adjacent cells.
fn node_viscosity(nu: &ScalarField) -> Vec<f64> {
    let g = nu.grid;
    let (nx, ny) = (g.nx, g.ny);
    let mut out = vec![0.0; (nx + 1) * (ny + 1)];
    for j in 0..=ny {
        for i in 0..=nx {
            let mut sum = 0.0;
            let mut count = 0.0;
            for (ci, cj) in [(i.wrapping_sub(1), j.wrapping_sub(1)), (i, j.wrapping_sub(1)), (i.wrapping_sub(1), j), (i, j)] {
                if ci < nx && cj < ny {
                    sum += nu.at(ci, cj);
                    count += 1.0;
                }
            }
            out[j * (nx + 1) + i] = sum / count;
        }
    }
    out
}

/// `∫ 2ν |D w|²` with cell-centered normal strains and node shear; wall nodes
/// carry half weight.
pub fn viscous_dissipation(w: &MacVelocity, nu: &ScalarField) -> f64 {
    let g = w.grid;
    let s = strain(w);
    let nu_n = node_viscosity(nu);
    let cells: f64 = (0..g.n_cells())
        .map(|c| 2.0 * nu.values[c] * (s.ux[c] * s.ux[c] + s.vy[c] * s.vy[c]))
        .sum();
    let mut nodes = 0.0;
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let k = j * (g.nx + 1) + i;
            let wx = if i == 0 || i == g.nx { 0.5 } else { 1.0 };
            let wy = if j == 0 || j == g.ny { 0.5 } else { 1.0 };
            nodes += wx * wy * nu_n[k] * s.shear[k] * s.shear[k];
        }
    }
    (cells + nodes) * g.cell_area()
}

/// `div(2ν D w)` on interior faces; minus half the gradient of
/// [`viscous_dissipation`] per unit face volume, so
/// `(w, viscous_force(w)) = -viscous_dissipation(w)`.
pub fn viscous_force(w: &MacVelocity, nu: &ScalarField) -> MacVelocity {
    let g = w.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let s = strain(w);
    let nu_n = node_viscosity(nu);
    let txx: Vec<f64> = (0..g.n_cells()).map(|c| 2.0 * nu.values[c] * s.ux[c]).collect();
    let tyy: Vec<f64> = (0..g.n_cells()).map(|c| 2.0 * nu.values[c] * s.vy[c]).collect();
    let txy: Vec<f64> = nu_n.iter().zip(&s.shear).map(|(a, b)| a * b).collect();
    let node = |i: usize, j: usize| txy[j * (nx + 1) + i];
    let mut out = MacVelocity::zeros(g);
    for j in 0..ny {
        for i in 1..nx {
            out.u[g.u_index(i, j)] = (txx[g.cell(i, j)] - txx[g.cell(i - 1, j)]) / hx
                + (node(i, j + 1) - node(i, j)) / hy;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            out.v[g.v_index(i, j)] = (tyy[g.cell(i, j)] - tyy[g.cell(i, j - 1)]) / hy
                + (node(i + 1, j) - node(i, j)) / hx;
        }
    }
    out
}

/// Conservative momentum transport with centered interpolation on the face
/// control volumes. Skew for discretely divergence-free `w`, so
/// `(w, advect_momentum(w)) = 0`.
pub fn advect_momentum(w: &MacVelocity) -> MacVelocity {
    let g = w.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let u = |i: usize, j: usize| w.u[g.u_index(i, j)];
    let v = |i: usize, j: usize| w.v[g.v_index(i, j)];
    let mut out = MacVelocity::zeros(g);
    for j in 0..ny {
        for i in 1..nx {
            let fe = 0.25 * (u(i, j) + u(i + 1, j)) * (u(i, j) + u(i + 1, j));
            let fw = 0.25 * (u(i - 1, j) + u(i, j)) * (u(i - 1, j) + u(i, j));
            let gn = if j + 1 < ny {
                0.25 * (v(i - 1, j + 1) + v(i, j + 1)) * (u(i, j) + u(i, j + 1))
            } else {
                0.0
            };
            let gs = if j > 0 {
                0.25 * (v(i - 1, j) + v(i, j)) * (u(i, j - 1) + u(i, j))
            } else {
                0.0
            };
            out.u[g.u_index(i, j)] = (fe - fw) / hx + (gn - gs) / hy;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let gn = 0.25 * (v(i, j) + v(i, j + 1)) * (v(i, j) + v(i, j + 1));
            let gs = 0.25 * (v(i, j - 1) + v(i, j)) * (v(i, j - 1) + v(i, j));
            let fe = if i + 1 < nx {
                0.25 * (u(i + 1, j - 1) + u(i + 1, j)) * (v(i, j) + v(i + 1, j))
            } else {
                0.0
            };
            let fw = if i > 0 {
                0.25 * (u(i, j - 1) + u(i, j)) * (v(i - 1, j) + v(i, j))
            } else {
                0.0
            };
            out.v[g.v_index(i, j)] = (fe - fw) / hx + (gn - gs) / hy;
        }
    }
    out
}

/// Largest stable advective step `h_min / max|w|`.
pub fn cfl_limit(w: &MacVelocity) -> f64 {
    w.grid.h_min() / w.max_abs().max(VELOCITY_FLOOR)
}

/// Discrete Leray projection: returns `(w - grad q, q)` with `Δq = div w`.
pub fn project(ctx: &StepContext, w: &MacVelocity) -> Result<(MacVelocity, ScalarField, usize)> {
    let div = div_faces(w);
    let (neg_q, iters) = ctx.elliptic.neumann_inverse_projected(&div)?;
    let q = neg_q.scale(-1.0);
    let mut out = w.axpy(-1.0, &grad_to_faces(&q));
    out.enforce_no_penetration();
    Ok((out, q, iters))
}

#[derive(Debug, Clone)]
pub struct NsStep {
    pub vel: MacVelocity,
    pub pressure: ScalarField,
    pub report: ProjectionReport,
}

/// Predictor with explicit transport, forcing and variable-viscosity
/// remainder, implicit `ν_min Δ`; then projection. The pressure returned is
/// the zero-mean projection potential divided by `dt`.
pub fn ns_step(
    ctx: &StepContext,
    vel_n: &MacVelocity,
    phi: &ScalarField,
    mu: &ScalarField,
    sigma: &ScalarField,
    p: &ModelParams,
    dt: f64,
) -> Result<NsStep> {
    if !(dt > 0.0) {
        return Err(ChnsError::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    let g: GridSpec = vel_n.grid;
    let limit = cfl_limit(vel_n);
    if dt > limit {
        return Err(ChnsError::Cfl { dt, limit });
    }
    let nu = viscosity_field(phi, p);
    let nu_min = p.nu1.min(p.nu2);
    let explicit_visc = viscous_force(vel_n, &nu).axpy(-nu_min, &laplacian_faces(vel_n));
    let rhs = vel_n
        .axpy(-dt, &advect_momentum(vel_n))
        .axpy(dt, &explicit_visc)
        .axpy(dt, &korteweg_force(mu, sigma, phi, p));
    let (predictor, helmholtz_iters) = ctx.elliptic.solve_velocity_helmholtz(dt * nu_min, &rhs)?;
    let div_predictor = div_faces(&predictor).max_abs();
    let (vel, q, pressure_iters) = project(ctx, &predictor)?;
    if !vel.is_finite() {
        return Err(ChnsError::NoConvergence {
            solver: "projection",
            iterations: pressure_iters,
            residual: f64::NAN,
        });
    }
    debug_assert_eq!(vel.grid, g);
    let div_inf_norm = div_faces(&vel).max_abs();
    Ok(NsStep {
        vel,
        pressure: q.scale(1.0 / dt),
        report: ProjectionReport {
            pressure_iters,
            div_inf_norm,
            div_predictor,
            helmholtz_iters,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::SolverConfig;
    use crate::grid::{face_inner, mean};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, 2.0, 2.0).unwrap()
    }

    fn ctx(g: GridSpec) -> StepContext {
        StepContext::new(g, SolverConfig::default()).unwrap()
    }

    fn random_field(g: GridSpec, amp: f64, rng: &mut ChaCha8Rng) -> ScalarField {
        ScalarField::from_values(g, (0..g.n_cells()).map(|_| amp * rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_faces(g: GridSpec, rng: &mut ChaCha8Rng) -> MacVelocity {
        let mut w = MacVelocity::zeros(g);
        w.u.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        w.v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        w.enforce_no_penetration();
        w
    }

    /// Divergence-free field from a random stream function vanishing on the walls.
    fn random_solenoidal(g: GridSpec, rng: &mut ChaCha8Rng) -> MacVelocity {
        let c: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        MacVelocity::from_stream_function(g, |x, y| {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += c[3 * a + b] * ((a + 1) as f64 * PI * x / g.lx).sin() * ((b + 1) as f64 * PI * y / g.ly).sin();
                }
            }
            s
        })
    }

    fn params(nu1: f64, nu2: f64) -> ModelParams {
        ModelParams { nu1, nu2, ..Default::default() }
    }

    #[test]
    fn viscosity_interpolates_and_clamps() {
        let g = grid(4);
        let p = params(3.0, 1.0);
        assert!(viscosity_field(&ScalarField::constant(g, 1.0), &p).values.iter().all(|&v| v == 3.0));
        assert!(viscosity_field(&ScalarField::constant(g, -1.0), &p).values.iter().all(|&v| v == 1.0));
        assert!(viscosity_field(&ScalarField::constant(g, 0.0), &p).values.iter().all(|&v| v == 2.0));
        assert!(viscosity_field(&ScalarField::constant(g, 1.5), &p).values.iter().all(|&v| v == 3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nu = viscosity_field(&random_field(g, 3.0, &mut rng), &p);
        assert!(nu.values.iter().all(|&v| (1.0..=3.0).contains(&v)));
    }

    #[test]
    fn korteweg_force_factorizes() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams { chi: 0.7, ..Default::default() };
        let mu = random_field(g, 1.0, &mut rng);
        let sigma = random_field(g, 1.0, &mut rng);
        let f = korteweg_force(&mu, &sigma, &ScalarField::constant(g, 0.3), &p);
        assert_eq!(f.max_abs(), 0.0);
        let phi = random_field(g, 1.0, &mut rng);
        let c = 1.7;
        let f = korteweg_force(&ScalarField::constant(g, c - 0.7 * 0.5), &ScalarField::constant(g, 0.5), &phi, &p);
        let expect = grad_to_faces(&phi).scale(c);
        assert!(f.axpy(-1.0, &expect).max_abs() < 1e-14);
    }

    #[test]
    fn korteweg_force_matches_dense_assembly() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams { chi: -0.4, ..Default::default() };
        let (mu, sigma, phi) = (random_field(g, 0.1, &mut rng), random_field(g, 0.1, &mut rng), random_field(g, 0.1, &mut rng));
        // face-by-cell averaging and difference matrices, one row per face
        let n = g.n_cells();
        let faces = g.n_u() + g.n_v();
        let mut avg = nalgebra::DMatrix::<f64>::zeros(faces, n);
        let mut diff = nalgebra::DMatrix::<f64>::zeros(faces, n);
        for j in 0..g.ny {
            for i in 1..g.nx {
                let r = g.u_index(i, j);
                avg[(r, g.cell(i - 1, j))] = 0.5;
                avg[(r, g.cell(i, j))] = 0.5;
                diff[(r, g.cell(i - 1, j))] = -1.0 / g.hx();
                diff[(r, g.cell(i, j))] = 1.0 / g.hx();
            }
        }
        for j in 1..g.ny {
            for i in 0..g.nx {
                let r = g.n_u() + g.v_index(i, j);
                avg[(r, g.cell(i, j - 1))] = 0.5;
                avg[(r, g.cell(i, j))] = 0.5;
                diff[(r, g.cell(i, j - 1))] = -1.0 / g.hy();
                diff[(r, g.cell(i, j))] = 1.0 / g.hy();
            }
        }
        let pot: Vec<f64> = mu.values.iter().zip(&sigma.values).map(|(m, s)| m + p.chi * s).collect();
        let a = &avg * nalgebra::DVector::from_vec(pot);
        let d = &diff * nalgebra::DVector::from_vec(phi.values.clone());
        let f = korteweg_force(&mu, &sigma, &phi, &p);
        let got: Vec<f64> = f.u.iter().chain(&f.v).copied().collect();
        for k in 0..faces {
            assert!((got[k] - a[k] * d[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn viscous_force_is_minus_half_gradient_of_dissipation() {
        let g = GridSpec::new(6, 5, 1.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nu = random_field(g, 1.0, &mut rng).map(|v| 1.5 + v);
        let w = random_faces(g, &mut rng);
        let pairing = face_inner(&w, &viscous_force(&w, &nu)).unwrap();
        let q = viscous_dissipation(&w, &nu);
        assert!(q > 0.0);
        assert!((pairing + q).abs() <= 1e-12 * q, "{pairing} vs {q}");
        // the form is quadratic, so the force is also its exact derivative
        let dw = random_faces(g, &mut rng);
        let h = 1e-4;
        let fd = (viscous_dissipation(&w.axpy(h, &dw), &nu) - viscous_dissipation(&w.axpy(-h, &dw), &nu)) / (2.0 * h);
        let exact = -2.0 * face_inner(&viscous_force(&w, &nu), &dw).unwrap();
        assert!((fd - exact).abs() <= 1e-8 * exact.abs().max(1.0));
    }

    #[test]
    fn constant_viscosity_reduces_to_vector_laplacian_on_solenoidal_fields() {
        let g = GridSpec::new(12, 10, 2.0, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_solenoidal(g, &mut rng);
        let nu = ScalarField::constant(g, 0.8);
        let diff = viscous_force(&w, &nu).axpy(-0.8, &laplacian_faces(&w));
        assert!(diff.max_abs() <= 1e-10 * laplacian_faces(&w).max_abs());
    }

    #[test]
    fn momentum_transport_is_energy_neutral() {
        let g = GridSpec::new(16, 12, 2.0, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_solenoidal(g, &mut rng);
        let a = advect_momentum(&w);
        let e = face_inner(&w, &a).unwrap();
        assert!(e.abs() <= 1e-12 * face_inner(&a, &a).unwrap().sqrt() * face_inner(&w, &w).unwrap().sqrt());
        assert!(advect_momentum(&MacVelocity::zeros(g)).max_abs() == 0.0);
    }

    #[test]
    fn rest_state_stays_at_rest() {
        let g = grid(8);
        let c = ctx(g);
        let p = ModelParams { chi: 0.3, ..Default::default() };
        let out = ns_step(
            &c,
            &MacVelocity::zeros(g),
            &ScalarField::constant(g, 0.2),
            &ScalarField::constant(g, -0.4),
            &ScalarField::constant(g, 0.1),
            &p,
            0.1,
        )
        .unwrap();
        assert_eq!(out.vel.max_abs(), 0.0);
        assert!(out.pressure.max_abs() < 1e-14);
    }

    #[test]
    fn projection_leaves_discretely_solenoidal_velocity() {
        let g = GridSpec::new(16, 12, 2.0, 1.5).unwrap();
        let c = ctx(g);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = ModelParams { nu1: 2.0, nu2: 0.5, chi: 0.5, ..Default::default() };
        let vel = random_solenoidal(g, &mut rng).scale(0.1);
        let phi = random_field(g, 0.9, &mut rng);
        let mu = random_field(g, 1.0, &mut rng);
        let sigma = random_field(g, 1.0, &mut rng);
        let out = ns_step(&c, &vel, &phi, &mu, &sigma, &p, 0.01).unwrap();
        assert!(out.report.div_inf_norm <= 1e-9 * out.vel.max_abs(), "{:?}", out.report);
        assert!(out.vel.normal_faces_vanish());
        assert!(mean(&out.pressure).abs() < 1e-12);

        let w = random_faces(g, &mut rng);
        let (pw, _, _) = project(&c, &w).unwrap();
        let (ppw, _, _) = project(&c, &pw).unwrap();
        assert!(ppw.axpy(-1.0, &pw).max_abs() <= 1e-10 * pw.max_abs());
    }

    #[test]
    fn shear_flow_decays_monotonically() {
        let g = GridSpec::new(16, 16, 1.0, 1.0).unwrap();
        let c = ctx(g);
        let p = params(0.05, 0.05);
        let mut vel = MacVelocity::from_stream_function(g, |x, y| (PI * x).sin().powi(2) * (PI * y).sin().powi(2));
        let zero = ScalarField::zeros(g);
        let mut k = crate::diagnostics::kinetic_energy(&vel);
        for _ in 0..50 {
            vel = ns_step(&c, &vel, &zero, &zero, &zero, &p, 0.01).unwrap().vel;
            let next = crate::diagnostics::kinetic_energy(&vel);
            assert!(next < k);
            k = next;
        }
    }

    #[test]
    fn cfl_violation_is_rejected_before_stepping() {
        let g = grid(8);
        let c = ctx(g);
        let mut vel = MacVelocity::zeros(g);
        vel.u[g.u_index(3, 3)] = 10.0;
        let zero = ScalarField::zeros(g);
        let err = ns_step(&c, &vel, &zero, &zero, &zero, &ModelParams::default(), 1.0).unwrap_err();
        assert!(matches!(err, ChnsError::Cfl { .. }));
        assert_eq!(cfl_limit(&MacVelocity::zeros(g)), g.h_min() / VELOCITY_FLOOR);
    }
}
