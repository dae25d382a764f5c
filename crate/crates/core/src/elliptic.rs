//! Neumann Poisson solves: the inverse Neumann Laplacian `N`, the pressure
//! solve of the projection, implicit diffusion, and the shared conjugate
//! gradient solver.
//!
//! Constant-coefficient operators on the uniform grid are separable; their
//! exact eigenbases (cosine for Neumann cells, sine for no-slip faces) give a
//! direct solver, used by default. The conjugate gradient path and a dense
//! factorization remain available through [`SolverMode`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{ChnsError, Result};
use crate::grid::{self, dot, GridSpec, MacVelocity, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Conjugate gradients.
    Iterative,
    /// Dense factorization; test oracle for small grids.
    Dense,
    /// Exact separable eigen-decomposition.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rel_tol: f64,
    /// `None` means `10 * n` for an `n`-unknown system.
    pub max_iter: Option<usize>,
    pub mode: SolverMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: None,
            mode: SolverMode::Spectral,
        }
    }
}

impl SolverConfig {
    pub fn iterative() -> Self {
        Self {
            mode: SolverMode::Iterative,
            ..Self::default()
        }
    }

    pub fn dense() -> Self {
        Self {
            mode: SolverMode::Dense,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-4) {
            return Err(ChnsError::InvalidParams(format!(
                "solver rel_tol must lie in (0, 1e-4], got {}",
                self.rel_tol
            )));
        }
        if self.max_iter == Some(0) {
            return Err(ChnsError::InvalidParams("solver max_iter must be >= 1".into()));
        }
        Ok(())
    }

    fn cap(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(10 * n)
    }
}

/// Nullspace of an operator handed to [`solve_spd`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Trivial,
    /// Constant vectors; right-hand sides and iterates are kept mean-free.
    Constants,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `|A x - b| / |b|`.
    pub residual: f64,
}

fn remove_mean(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Conjugate gradients for a symmetric positive (semi)definite operator.
pub fn solve_spd(
    apply: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    kernel: Kernel,
    cfg: &SolverConfig,
) -> Result<SpdSolution> {
    solve_spd_preconditioned(apply, None::<fn(&[f64], &mut [f64])>, rhs, kernel, cfg)
}

/// Preconditioned conjugate gradients. The preconditioner must be symmetric
/// positive definite on the complement of `kernel`.
pub fn solve_spd_preconditioned(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: Option<impl Fn(&[f64], &mut [f64])>,
    rhs: &[f64],
    kernel: Kernel,
    cfg: &SolverConfig,
) -> Result<SpdSolution> {
    let n = rhs.len();
    let mut r = rhs.to_vec();
    if kernel == Kernel::Constants {
        remove_mean(&mut r);
    }
    let b_norm = norm(&r);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(SpdSolution {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut z = vec![0.0; n];
    let precondition = |r: &[f64], z: &mut [f64]| {
        match &precond {
            Some(m) => m(r, z),
            None => z.copy_from_slice(r),
        }
        if kernel == Kernel::Constants {
            remove_mean(z);
        }
    };
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let cap = cfg.cap(n);
    for it in 1..=cap {
        apply(&p, &mut ap);
        if kernel == Kernel::Constants {
            remove_mean(&mut ap);
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(ChnsError::Indefinite {
                solver: "conjugate gradient",
                curvature: pap,
            });
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let res = norm(&r) / b_norm;
        if res <= cfg.rel_tol {
            if kernel == Kernel::Constants {
                remove_mean(&mut x);
            }
            return Ok(SpdSolution {
                x,
                iterations: it,
                residual: res,
            });
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(ChnsError::NoConvergence {
        solver: "conjugate gradient",
        iterations: cap,
        residual: norm(&r) / b_norm,
    })
}

/// Dense solve by probing `apply` column by column. For a constant kernel the
/// rank-one term `11ᵀ/n` is added, which pins the solution to zero mean.
pub fn solve_dense(
    apply: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    kernel: Kernel,
) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for c in 0..n {
        e[c] = 1.0;
        apply(&e, &mut col);
        e[c] = 0.0;
        for r in 0..n {
            a[(r, c)] = col[r];
        }
    }
    let mut b = rhs.to_vec();
    if kernel == Kernel::Constants {
        remove_mean(&mut b);
        let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        a.add_scalar_mut(scale / n as f64);
    }
    let lu = a.lu();
    let x = lu
        .solve(&DVector::from_vec(b))
        .ok_or(ChnsError::NoConvergence {
            solver: "dense LU",
            iterations: 1,
            residual: f64::INFINITY,
        })?;
    let mut x: Vec<f64> = x.iter().copied().collect();
    if kernel == Kernel::Constants {
        remove_mean(&mut x);
    }
    Ok(x)
}

/// Orthonormal eigenbasis of a 1D second-difference operator.
#[derive(Debug, Clone)]
pub struct AxisBasis {
    m: usize,
    /// Eigenvalues of `-d²/dx²`, ascending.
    eigenvalues: Vec<f64>,
    /// `q[i * m + k]`: component `i` of eigenvector `k`.
    q: Vec<f64>,
}

impl AxisBasis {
    /// `n` cells with mirrored ghosts (cosine basis).
    pub fn neumann(n: usize, h: f64) -> Self {
        let nf = n as f64;
        Self::build(n, n, h, |k| k as f64, |i, k| {
            let c = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            c * (PI * k as f64 * (i as f64 + 0.5) / nf).cos()
        })
    }

    /// `n - 1` interior nodes with zero values at both ends (sine basis).
    pub fn dirichlet_nodes(n: usize, h: f64) -> Self {
        let nf = n as f64;
        Self::build(n - 1, n, h, |k| (k + 1) as f64, |i, k| {
            (2.0 / nf).sqrt() * (PI * (k + 1) as f64 * (i + 1) as f64 / nf).sin()
        })
    }

    /// `n` cells with antisymmetric ghosts (half-shifted sine basis).
    pub fn dirichlet_cells(n: usize, h: f64) -> Self {
        let nf = n as f64;
        Self::build(n, n, h, |k| (k + 1) as f64, |i, k| {
            let c = if k + 1 == n { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            c * (PI * (k + 1) as f64 * (i as f64 + 0.5) / nf).sin()
        })
    }

    /// All three families share the symbol `(2 − 2cos(πκ/n)) / h²`.
    fn build(
        m: usize,
        n: usize,
        h: f64,
        wavenumber: impl Fn(usize) -> f64,
        entry: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let mut q = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                q[i * m + k] = entry(i, k);
            }
        }
        let eigenvalues = (0..m)
            .map(|k| (2.0 - 2.0 * (PI * wavenumber(k) / n as f64).cos()) / (h * h))
            .collect();
        Self { m, eigenvalues, q }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Component `i` of eigenvector `k`.
    pub fn vector(&self, i: usize, k: usize) -> f64 {
        self.q[i * self.m + k]
    }
}

/// Tensor-product eigenbasis on an `mx × my` array stored row-major.
#[derive(Debug, Clone)]
pub struct Separable {
    pub bx: AxisBasis,
    pub by: AxisBasis,
}

impl Separable {
    fn dims(&self) -> (usize, usize) {
        (self.bx.m, self.by.m)
    }

    /// Coefficients `c[l*mx + k] = Σ_ij qx[i,k] qy[j,l] f[j*mx + i]`.
    pub fn forward(&self, f: &[f64]) -> Vec<f64> {
        let (mx, my) = self.dims();
        let mut g = vec![0.0; mx * my];
        rows_mut(&mut g, mx, |j, row| {
            let src = &f[j * mx..(j + 1) * mx];
            for (i, &fv) in src.iter().enumerate() {
                let qrow = &self.bx.q[i * mx..(i + 1) * mx];
                for (o, q) in row.iter_mut().zip(qrow) {
                    *o += q * fv;
                }
            }
        });
        let mut c = vec![0.0; mx * my];
        rows_mut(&mut c, mx, |l, row| {
            for j in 0..my {
                let q = self.by.q[j * my + l];
                for (o, gv) in row.iter_mut().zip(&g[j * mx..(j + 1) * mx]) {
                    *o += q * gv;
                }
            }
        });
        c
    }

    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let (mx, my) = self.dims();
        let mut g = vec![0.0; mx * my];
        rows_mut(&mut g, mx, |j, row| {
            let qrow = &self.by.q[j * my..(j + 1) * my];
            for (l, q) in qrow.iter().enumerate() {
                for (o, cv) in row.iter_mut().zip(&c[l * mx..(l + 1) * mx]) {
                    *o += q * cv;
                }
            }
        });
        let mut f = vec![0.0; mx * my];
        rows_mut(&mut f, mx, |j, row| {
            let src = &g[j * mx..(j + 1) * mx];
            for (i, o) in row.iter_mut().enumerate() {
                let qrow = &self.bx.q[i * mx..(i + 1) * mx];
                *o = dot(qrow, src);
            }
        });
        f
    }

    /// Applies the operator with symbol `multiplier(λx + λy)`; the symbol is
    /// evaluated per mode, `None` zeroes the mode.
    pub fn apply_symbol(&self, f: &[f64], multiplier: impl Fn(f64) -> Option<f64>) -> Vec<f64> {
        let (mx, _) = self.dims();
        let mut c = self.forward(f);
        for (idx, cv) in c.iter_mut().enumerate() {
            let lam = self.bx.eigenvalues[idx % mx] + self.by.eigenvalues[idx / mx];
            *cv *= multiplier(lam).unwrap_or(0.0);
        }
        self.inverse(&c)
    }
}

#[cfg(feature = "parallel")]
fn rows_mut(data: &mut [f64], width: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    use rayon::prelude::*;
    data.par_chunks_mut(width)
        .enumerate()
        .for_each(|(r, row)| f(r, row));
}

#[cfg(not(feature = "parallel"))]
fn rows_mut(data: &mut [f64], width: usize, f: impl Fn(usize, &mut [f64])) {
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(r, row)| f(r, row));
}

/// Reusable solver context for one grid.
#[derive(Debug, Clone)]
pub struct Elliptic {
    grid: GridSpec,
    cfg: SolverConfig,
    cells: Separable,
    u_faces: Separable,
    v_faces: Separable,
}

/// Relative mean tolerated by [`Elliptic::inverse_neumann_laplacian`].
pub const MEAN_TOLERANCE: f64 = 1e-10;

impl Elliptic {
    pub fn new(grid: GridSpec, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let (hx, hy) = (grid.hx(), grid.hy());
        Ok(Self {
            grid,
            cfg,
            cells: Separable {
                bx: AxisBasis::neumann(grid.nx, hx),
                by: AxisBasis::neumann(grid.ny, hy),
            },
            u_faces: Separable {
                bx: AxisBasis::dirichlet_nodes(grid.nx, hx),
                by: AxisBasis::dirichlet_cells(grid.ny, hy),
            },
            v_faces: Separable {
                bx: AxisBasis::dirichlet_cells(grid.nx, hx),
                by: AxisBasis::dirichlet_nodes(grid.ny, hy),
            },
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Cosine basis of the cell-centered Neumann Laplacian.
    pub fn cell_basis(&self) -> &Separable {
        &self.cells
    }

    /// Zero-mean `u` with `-Δu = f`; `f` must be mean-free.
    pub fn inverse_neumann_laplacian(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check_grid(f)?;
        let m = grid::mean(f);
        let scale = f.max_abs();
        if m.abs() > MEAN_TOLERANCE * scale {
            return Err(ChnsError::MeanIncompatible { mean: m, scale });
        }
        self.neumann_inverse_projected(f).map(|(u, _)| u)
    }

    /// `N` applied to the mean-free part of `f`, with the iteration count.
    pub(crate) fn neumann_inverse_projected(&self, f: &ScalarField) -> Result<(ScalarField, usize)> {
        let g = self.grid;
        let mut rhs = f.values.clone();
        remove_mean(&mut rhs);
        let (mut x, iters) = match self.cfg.mode {
            SolverMode::Spectral => (
                self.cells
                    .apply_symbol(&rhs, |lam| if lam > 0.0 { Some(1.0 / lam) } else { None }),
                0,
            ),
            SolverMode::Iterative => {
                let sol = solve_spd(neg_laplacian_op(g), &rhs, Kernel::Constants, &self.cfg)?;
                (sol.x, sol.iterations)
            }
            SolverMode::Dense => (solve_dense(neg_laplacian_op(g), &rhs, Kernel::Constants)?, 1),
        };
        remove_mean(&mut x);
        Ok((ScalarField { grid: g, values: x }, iters))
    }

    /// `‖∇N f‖² = (f, N f)` for mean-free `f`.
    pub fn v0_norm_sq(&self, f: &ScalarField) -> Result<f64> {
        let nf = self.inverse_neumann_laplacian(f)?;
        grid::l2_inner(f, &nf)
    }

    /// Solves `(a I − b Δ) x = rhs` with Neumann data, `a > 0`, `b >= 0`.
    pub fn solve_neumann_helmholtz(&self, a: f64, b: f64, rhs: &ScalarField) -> Result<(ScalarField, usize)> {
        self.check_grid(rhs)?;
        let g = self.grid;
        let (x, iters) = match self.cfg.mode {
            SolverMode::Spectral => (self.cells.apply_symbol(&rhs.values, |lam| Some(1.0 / (a + b * lam))), 0),
            SolverMode::Iterative => {
                let lap = neg_laplacian_op(g);
                let op = |x: &[f64], y: &mut [f64]| {
                    lap(x, y);
                    for (yv, xv) in y.iter_mut().zip(x) {
                        *yv = a * xv + b * *yv;
                    }
                };
                let sol = solve_spd(op, &rhs.values, Kernel::Trivial, &self.cfg)?;
                (sol.x, sol.iterations)
            }
            SolverMode::Dense => {
                let lap = neg_laplacian_op(g);
                let op = |x: &[f64], y: &mut [f64]| {
                    lap(x, y);
                    for (yv, xv) in y.iter_mut().zip(x) {
                        *yv = a * xv + b * *yv;
                    }
                };
                (solve_dense(op, &rhs.values, Kernel::Trivial)?, 1)
            }
        };
        Ok((ScalarField { grid: g, values: x }, iters))
    }

    /// Solves `(I − b Δ) w = rhs` componentwise on interior faces with no-slip
    /// walls; boundary-normal faces of the result are zero.
    pub fn solve_velocity_helmholtz(&self, b: f64, rhs: &MacVelocity) -> Result<(MacVelocity, usize)> {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let (ru, rv) = pack_interior(rhs);
        let op = |x: &[f64], y: &mut [f64]| {
            let w = unpack_interior(g, x);
            let lap = grid::laplacian_faces(&w);
            let (lu, lv) = pack_interior(&lap);
            for (k, (yv, xv)) in y.iter_mut().zip(x).enumerate() {
                let l = if k < lu.len() { lu[k] } else { lv[k - lu.len()] };
                *yv = xv - b * l;
            }
        };
        let mut packed = ru.clone();
        packed.extend_from_slice(&rv);
        let (x, iters) = match self.cfg.mode {
            SolverMode::Spectral => {
                let xu = self.u_faces.apply_symbol(&ru, |lam| Some(1.0 / (1.0 + b * lam)));
                let xv = self.v_faces.apply_symbol(&rv, |lam| Some(1.0 / (1.0 + b * lam)));
                let mut x = xu;
                x.extend(xv);
                (x, 0)
            }
            SolverMode::Iterative => {
                let sol = solve_spd(op, &packed, Kernel::Trivial, &self.cfg)?;
                (sol.x, sol.iterations)
            }
            SolverMode::Dense => (solve_dense(op, &packed, Kernel::Trivial)?, 1),
        };
        debug_assert_eq!(x.len(), (nx - 1) * ny + nx * (ny - 1));
        Ok((unpack_interior(g, &x), iters))
    }

    fn check_grid(&self, f: &ScalarField) -> Result<()> {
        if f.grid == self.grid {
            Ok(())
        } else {
            Err(ChnsError::GridMismatch)
        }
    }
}

/// Convenience wrapper building a one-shot context.
pub fn inverse_neumann_laplacian(f: &ScalarField, cfg: &SolverConfig) -> Result<ScalarField> {
    Elliptic::new(f.grid, *cfg)?.inverse_neumann_laplacian(f)
}

pub fn v0_norm_sq(f: &ScalarField, cfg: &SolverConfig) -> Result<f64> {
    Elliptic::new(f.grid, *cfg)?.v0_norm_sq(f)
}

fn neg_laplacian_op(g: GridSpec) -> impl Fn(&[f64], &mut [f64]) {
    move |x: &[f64], y: &mut [f64]| {
        let f = ScalarField {
            grid: g,
            values: x.to_vec(),
        };
        let lap = grid::laplacian_neumann(&f);
        for (yv, l) in y.iter_mut().zip(&lap.values) {
            *yv = -l;
        }
    }
}

/// Interior faces in compact row-major layout: u as `(nx-1) × ny`, v as
/// `nx × (ny-1)`.
fn pack_interior(w: &MacVelocity) -> (Vec<f64>, Vec<f64>) {
    let g = w.grid;
    let mut u = Vec::with_capacity((g.nx - 1) * g.ny);
    for j in 0..g.ny {
        for i in 1..g.nx {
            u.push(w.u[g.u_index(i, j)]);
        }
    }
    let mut v = Vec::with_capacity(g.nx * (g.ny - 1));
    for j in 1..g.ny {
        for i in 0..g.nx {
            v.push(w.v[g.v_index(i, j)]);
        }
    }
    (u, v)
}

fn unpack_interior(g: GridSpec, x: &[f64]) -> MacVelocity {
    let mut w = MacVelocity::zeros(g);
    let mut k = 0;
    for j in 0..g.ny {
        for i in 1..g.nx {
            w.u[g.u_index(i, j)] = x[k];
            k += 1;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            w.v[g.v_index(i, j)] = x[k];
            k += 1;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{grad_to_faces, face_inner, l2_inner, laplacian_faces, laplacian_neumann, mean};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_zero_mean(g: GridSpec, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_values(g, (0..g.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
            .zero_mean()
    }

    fn tridiag_apply(diag: &[f64], x: &[f64], h: f64) -> Vec<f64> {
        let m = x.len();
        (0..m)
            .map(|i| {
                let mut y = diag[i] * x[i];
                if i > 0 {
                    y -= x[i - 1];
                }
                if i + 1 < m {
                    y -= x[i + 1];
                }
                y / (h * h)
            })
            .collect()
    }

    #[test]
    fn axis_bases_are_orthonormal_eigenbases() {
        let h = 0.3;
        for n in [4usize, 7, 12] {
            let mut neu = vec![2.0; n];
            neu[0] = 1.0;
            neu[n - 1] = 1.0;
            let mut anti = vec![2.0; n];
            anti[0] = 3.0;
            anti[n - 1] = 3.0;
            let dir = vec![2.0; n - 1];
            for (basis, diag) in [
                (AxisBasis::neumann(n, h), neu),
                (AxisBasis::dirichlet_cells(n, h), anti),
                (AxisBasis::dirichlet_nodes(n, h), dir),
            ] {
                let m = basis.len();
                for k in 0..m {
                    let v: Vec<f64> = (0..m).map(|i| basis.vector(i, k)).collect();
                    let av = tridiag_apply(&diag, &v, h);
                    for i in 0..m {
                        assert!((av[i] - basis.eigenvalues()[k] * v[i]).abs() < 1e-10);
                    }
                    for k2 in 0..m {
                        let w: Vec<f64> = (0..m).map(|i| basis.vector(i, k2)).collect();
                        let expect = if k == k2 { 1.0 } else { 0.0 };
                        assert!((dot(&v, &w) - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_of_zero_is_zero() {
        let g = GridSpec::new(8, 6, 1.0, 1.0).unwrap();
        for cfg in [SolverConfig::default(), SolverConfig::iterative(), SolverConfig::dense()] {
            let u = inverse_neumann_laplacian(&ScalarField::zeros(g), &cfg).unwrap();
            assert_eq!(u.max_abs(), 0.0);
        }
    }

    #[test]
    fn inverse_on_cosine_mode_uses_discrete_eigenvalue() {
        let g = GridSpec::new(32, 8, 2.0, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |x, _| (PI * x / g.lx).cos()).zero_mean();
        let hx = g.hx();
        let lam = 2.0 * (1.0 - (PI * hx / g.lx).cos()) / (hx * hx);
        for cfg in [SolverConfig::default(), SolverConfig::iterative()] {
            let u = inverse_neumann_laplacian(&f, &cfg).unwrap();
            for (uv, fv) in u.values.iter().zip(&f.values) {
                assert!((uv - fv / lam).abs() < 1e-8);
                // continuum solution, O(h²) away
                assert!((uv - (g.lx / PI).powi(2) * fv).abs() < 0.01 * (g.lx / PI).powi(2));
            }
        }
    }

    #[test]
    fn round_trip_recovers_zero_mean_field() {
        for (nx, ny) in [(8, 8), (13, 9), (24, 24)] {
            let g = GridSpec::new(nx, ny, 1.3, 0.7).unwrap();
            let u = random_zero_mean(g, nx as u64);
            let f = laplacian_neumann(&u).scale(-1.0);
            for cfg in [SolverConfig::default(), SolverConfig::iterative(), SolverConfig::dense()] {
                let back = inverse_neumann_laplacian(&f, &cfg).unwrap();
                let err = back.axpy(-1.0, &u).max_abs();
                assert!(err < 1e-8, "{nx}x{ny} {:?}: {err}", cfg.mode);
                assert!(mean(&back).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_mean_incompatible_rhs() {
        let g = GridSpec::new(8, 8, 1.0, 1.0).unwrap();
        let f = random_zero_mean(g, 1).map(|v| v + 1e-3);
        assert!(matches!(
            inverse_neumann_laplacian(&f, &SolverConfig::default()),
            Err(ChnsError::MeanIncompatible { .. })
        ));
    }

    #[test]
    fn v0_norm_equals_gradient_energy_and_scales_quadratically() {
        let g = GridSpec::new(16, 12, 1.0, 0.8).unwrap();
        let cfg = SolverConfig::default();
        assert_eq!(v0_norm_sq(&ScalarField::zeros(g), &cfg).unwrap(), 0.0);
        let f = random_zero_mean(g, 3);
        let nf = inverse_neumann_laplacian(&f, &cfg).unwrap();
        let grad = grad_to_faces(&nf);
        let a = face_inner(&grad, &grad).unwrap();
        let b = v0_norm_sq(&f, &cfg).unwrap();
        assert!((a - b).abs() <= 1e-10 * b);
        let b2 = v0_norm_sq(&f.scale(2.0), &cfg).unwrap();
        assert!((b2 - 4.0 * b).abs() <= 1e-12 * b2);
    }

    #[test]
    fn inverse_is_self_adjoint_and_positive() {
        let g = GridSpec::new(20, 11, 1.0, 1.0).unwrap();
        let ell = Elliptic::new(g, SolverConfig::default()).unwrap();
        let f = random_zero_mean(g, 4);
        let h = random_zero_mean(g, 5);
        let a = l2_inner(&f, &ell.inverse_neumann_laplacian(&h).unwrap()).unwrap();
        let b = l2_inner(&ell.inverse_neumann_laplacian(&f).unwrap(), &h).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
        assert!(ell.v0_norm_sq(&f).unwrap() > 0.0);
    }

    #[test]
    fn identity_operator_converges_in_one_iteration() {
        let rhs: Vec<f64> = (0..10).map(|k| k as f64 - 3.0).collect();
        let sol = solve_spd(|x, y| y.copy_from_slice(x), &rhs, Kernel::Trivial, &SolverConfig::iterative())
            .unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.x, rhs);
    }

    #[test]
    fn cg_matches_dense_direct_on_4x4() {
        let g = GridSpec::new(4, 4, 1.0, 1.0).unwrap();
        let rhs = random_zero_mean(g, 9);
        // dense oracle: pseudo-inverse via symmetric eigen-decomposition of the stencil matrix
        let n = g.n_cells();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for j in 0..4 {
            for i in 0..4 {
                let r = g.cell(i, j);
                let mut nb = vec![];
                if i > 0 { nb.push(g.cell(i - 1, j)); }
                if i < 3 { nb.push(g.cell(i + 1, j)); }
                if j > 0 { nb.push(g.cell(i, j - 1)); }
                if j < 3 { nb.push(g.cell(i, j + 1)); }
                for c in nb {
                    a[(r, c)] -= 16.0;
                    a[(r, r)] += 16.0;
                }
            }
        }
        let eig = a.symmetric_eigen();
        let b = DVector::from_vec(rhs.values.clone());
        let mut x = DVector::zeros(n);
        for k in 0..n {
            let lam = eig.eigenvalues[k];
            if lam.abs() > 1e-9 {
                let v = eig.eigenvectors.column(k);
                x += v * (v.dot(&b) / lam);
            }
        }
        let sol = solve_spd(neg_laplacian_op(g), &rhs.values, Kernel::Constants, &SolverConfig::iterative())
            .unwrap();
        for k in 0..n {
            assert!((sol.x[k] - x[k]).abs() < 1e-9);
        }
        assert!(sol.x.iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn kernel_projection_yields_zero_mean_solution() {
        let g = GridSpec::new(8, 8, 1.0, 1.0).unwrap();
        let rhs = random_zero_mean(g, 2).map(|v| v + 5.0);
        let sol = solve_spd(neg_laplacian_op(g), &rhs.values, Kernel::Constants, &SolverConfig::iterative())
            .unwrap();
        assert!(sol.x.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let g = GridSpec::new(16, 16, 1.0, 1.0).unwrap();
        let rhs = random_zero_mean(g, 2);
        let cfg = SolverConfig { max_iter: Some(2), ..SolverConfig::iterative() };
        let err = solve_spd(neg_laplacian_op(g), &rhs.values, Kernel::Constants, &cfg).unwrap_err();
        assert!(matches!(err, ChnsError::NoConvergence { iterations: 2, .. }));
    }

    #[test]
    fn solver_modes_agree_on_small_grids() {
        for (nx, ny) in [(8, 8), (16, 16), (12, 5)] {
            let g = GridSpec::new(nx, ny, 1.0, 1.5).unwrap();
            let f = random_zero_mean(g, 77);
            let sols: Vec<_> = [SolverConfig::default(), SolverConfig::iterative(), SolverConfig::dense()]
                .iter()
                .map(|c| Elliptic::new(g, *c).unwrap())
                .collect();
            let n: Vec<_> = sols.iter().map(|e| e.inverse_neumann_laplacian(&f).unwrap()).collect();
            let h: Vec<_> = sols.iter().map(|e| e.solve_neumann_helmholtz(3.0, 0.7, &f).unwrap().0).collect();
            for k in 1..3 {
                assert!(n[k].axpy(-1.0, &n[0]).max_abs() < 1e-8);
                assert!(h[k].axpy(-1.0, &h[0]).max_abs() < 1e-8);
            }
        }
    }

    #[test]
    fn velocity_helmholtz_inverts_operator_in_all_modes() {
        let g = GridSpec::new(10, 7, 1.0, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rhs = MacVelocity::zeros(g);
        rhs.u.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        rhs.v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        rhs.enforce_no_penetration();
        let b = 0.05;
        for cfg in [SolverConfig::default(), SolverConfig::iterative(), SolverConfig::dense()] {
            let ell = Elliptic::new(g, cfg).unwrap();
            let (w, _) = ell.solve_velocity_helmholtz(b, &rhs).unwrap();
            assert!(w.normal_faces_vanish());
            let back = w.axpy(-b, &laplacian_faces(&w));
            let err = back.axpy(-1.0, &rhs).max_abs();
            assert!(err < 1e-8, "{:?}: {err}", cfg.mode);
        }
    }
}
