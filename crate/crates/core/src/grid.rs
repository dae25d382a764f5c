//! Uniform 2D MAC grid and the discrete operators built on it.
//!
//! Scalars live at cell centers, velocity components on the faces normal to
//! their direction. Scalar boundary conditions are homogeneous Neumann
//! (mirrored ghost cells), velocity boundary conditions are no-slip
//! (boundary-normal faces pinned to zero, tangential ghosts antisymmetric).
//!
//! Index conventions (row-major, `x` fastest):
//! - cell `(i, j)`           -> `j * nx + i`,        `0 <= i < nx`, `0 <= j < ny`
//! - u-face `(i, j)` at `x = i*hx` -> `j * (nx + 1) + i`, `0 <= i <= nx`
//! - v-face `(i, j)` at `y = j*hy` -> `j * nx + i`,        `0 <= j <= ny`

use crate::error::{ChnsError, Result};

/// Divergence level above which [`advect_scalar`] logs a warning, scaled by
/// `max(1, |w|_inf / h_min)`.
pub const DIV_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(ChnsError::InvalidGrid(format!(
                "cell counts must be at least 4, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(ChnsError::InvalidGrid(format!(
                "side lengths must be positive and finite, got {lx}x{ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    #[inline]
    pub fn h_min(&self) -> f64 {
        self.hx().min(self.hy())
    }

    /// Area of one cell; also the quadrature weight of a face.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn n_u(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    #[inline]
    pub fn n_v(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn u_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn v_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Cell-center coordinates.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(ChnsError::GridMismatch)
        }
    }
}

/// Cell-centered grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_cells()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(ChnsError::Shape {
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.cell(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &ScalarField) -> Self {
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// Copy with the discrete mean removed.
    pub fn zero_mean(&self) -> Self {
        let m = mean(self);
        self.map(|v| v - m)
    }
}

/// Staggered velocity: `u` on x-normal faces, `v` on y-normal faces.
#[derive(Debug, Clone, PartialEq)]
pub struct MacVelocity {
    pub grid: GridSpec,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl MacVelocity {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            u: vec![0.0; grid.n_u()],
            v: vec![0.0; grid.n_v()],
        }
    }

    /// Builds a face field from `(u(x,y), v(x,y))` sampled at face centers,
    /// with boundary-normal faces forced to zero.
    pub fn from_fn(
        grid: GridSpec,
        fu: impl Fn(f64, f64) -> f64,
        fv: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut w = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 1..grid.nx {
                w.u[grid.u_index(i, j)] = fu(i as f64 * hx, (j as f64 + 0.5) * hy);
            }
        }
        for j in 1..grid.ny {
            for i in 0..grid.nx {
                w.v[grid.v_index(i, j)] = fv((i as f64 + 0.5) * hx, j as f64 * hy);
            }
        }
        w
    }

    /// Discretely divergence-free field from a stream function sampled at
    /// grid nodes `(i*hx, j*hy)`; `u = d(psi)/dy`, `v = -d(psi)/dx`.
    /// `psi` must vanish on the boundary for no-penetration.
    pub fn from_stream_function(grid: GridSpec, psi: impl Fn(f64, f64) -> f64) -> Self {
        let (hx, hy) = (grid.hx(), grid.hy());
        let node = |i: usize, j: usize| psi(i as f64 * hx, j as f64 * hy);
        let mut w = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 1..grid.nx {
                w.u[grid.u_index(i, j)] = (node(i, j + 1) - node(i, j)) / hy;
            }
        }
        for j in 1..grid.ny {
            for i in 0..grid.nx {
                w.v[grid.v_index(i, j)] = -(node(i + 1, j) - node(i, j)) / hx;
            }
        }
        w
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &MacVelocity) -> Self {
        let zip = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p + a * q).collect();
        Self {
            grid: self.grid,
            u: zip(&self.u, &other.u),
            v: zip(&self.v, &other.v),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            u: self.u.iter().map(|x| a * x).collect(),
            v: self.v.iter().map(|x| a * x).collect(),
        }
    }

    /// Zeroes the boundary-normal faces.
    pub fn enforce_no_penetration(&mut self) {
        let g = self.grid;
        for j in 0..g.ny {
            self.u[g.u_index(0, j)] = 0.0;
            self.u[g.u_index(g.nx, j)] = 0.0;
        }
        for i in 0..g.nx {
            self.v[g.v_index(i, 0)] = 0.0;
            self.v[g.v_index(i, g.ny)] = 0.0;
        }
    }

    pub fn normal_faces_vanish(&self) -> bool {
        let g = self.grid;
        (0..g.ny).all(|j| self.u[g.u_index(0, j)] == 0.0 && self.u[g.u_index(g.nx, j)] == 0.0)
            && (0..g.nx)
                .all(|i| self.v[g.v_index(i, 0)] == 0.0 && self.v[g.v_index(i, g.ny)] == 0.0)
    }
}

/// Five-point Laplacian with mirrored ghost cells. Returns `Δf` (not `-Δf`).
pub fn laplacian_neumann(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let (ax, ay) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = f.at(i, j);
            let mut acc = 0.0;
            if i > 0 {
                acc += ax * (f.at(i - 1, j) - c);
            }
            if i + 1 < g.nx {
                acc += ax * (f.at(i + 1, j) - c);
            }
            if j > 0 {
                acc += ay * (f.at(i, j - 1) - c);
            }
            if j + 1 < g.ny {
                acc += ay * (f.at(i, j + 1) - c);
            }
            out[g.cell(i, j)] = acc;
        }
    }
    ScalarField {
        grid: g,
        values: out,
    }
}

/// Face-centered differences; boundary-normal faces carry zero.
pub fn grad_to_faces(f: &ScalarField) -> MacVelocity {
    let g = f.grid;
    let (hx, hy) = (g.hx(), g.hy());
    let mut w = MacVelocity::zeros(g);
    for j in 0..g.ny {
        for i in 1..g.nx {
            w.u[g.u_index(i, j)] = (f.at(i, j) - f.at(i - 1, j)) / hx;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            w.v[g.v_index(i, j)] = (f.at(i, j) - f.at(i, j - 1)) / hy;
        }
    }
    w
}

/// Per-cell flux balance divided by cell area.
pub fn div_faces(w: &MacVelocity) -> ScalarField {
    let g = w.grid;
    let (hx, hy) = (g.hx(), g.hy());
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            out[g.cell(i, j)] = (w.u[g.u_index(i + 1, j)] - w.u[g.u_index(i, j)]) / hx
                + (w.v[g.v_index(i, j + 1)] - w.v[g.v_index(i, j)]) / hy;
        }
    }
    ScalarField {
        grid: g,
        values: out,
    }
}

/// Conservative transport `div(w f)` with centered face interpolation of `f`.
///
/// Skew-adjoint for discretely divergence-free `w`:
/// `(g, advect(w, f)) = -(f, advect(w, g))`.
pub fn advect_scalar(w: &MacVelocity, f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let div_inf = div_faces(w).max_abs();
    let scale = 1.0_f64.max(w.max_abs() / g.h_min());
    if div_inf > 10.0 * DIV_TOLERANCE * scale {
        log::warn!("advecting velocity not divergence-free: |div w|_inf = {div_inf:.3e}");
    }
    let flux = face_flux(w, f);
    div_faces(&flux)
}

/// `w * f_face` with `f` averaged onto faces.
pub(crate) fn face_flux(w: &MacVelocity, f: &ScalarField) -> MacVelocity {
    let g = f.grid;
    let mut flux = MacVelocity::zeros(g);
    for j in 0..g.ny {
        for i in 1..g.nx {
            let k = g.u_index(i, j);
            flux.u[k] = w.u[k] * 0.5 * (f.at(i - 1, j) + f.at(i, j));
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let k = g.v_index(i, j);
            flux.v[k] = w.v[k] * 0.5 * (f.at(i, j - 1) + f.at(i, j));
        }
    }
    flux
}

/// Midpoint quadrature.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_area()
}

pub fn mean(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() / f.values.len() as f64
}

pub fn l2_inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.grid.check_same(&g.grid)?;
    Ok(dot(&f.values, &g.values) * f.grid.cell_area())
}

/// Face inner product, each face weighted by `hx*hy`.
pub fn face_inner(a: &MacVelocity, b: &MacVelocity) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok((dot(&a.u, &b.u) + dot(&a.v, &b.v)) * a.grid.cell_area())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Averages a cell field onto faces; boundary-normal faces get zero.
pub fn cell_to_faces(f: &ScalarField) -> MacVelocity {
    let g = f.grid;
    let mut w = MacVelocity::zeros(g);
    for j in 0..g.ny {
        for i in 1..g.nx {
            w.u[g.u_index(i, j)] = 0.5 * (f.at(i - 1, j) + f.at(i, j));
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            w.v[g.v_index(i, j)] = 0.5 * (f.at(i, j - 1) + f.at(i, j));
        }
    }
    w
}

/// Componentwise Laplacian of a face field with no-slip walls: boundary-normal
/// faces are held at zero, tangential ghosts are antisymmetric. Output on the
/// boundary-normal faces is zero.
pub fn laplacian_faces(w: &MacVelocity) -> MacVelocity {
    let g = w.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (ax, ay) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let mut out = MacVelocity::zeros(g);
    for j in 0..ny {
        for i in 1..nx {
            let c = w.u[g.u_index(i, j)];
            let xs = w.u[g.u_index(i - 1, j)] + w.u[g.u_index(i + 1, j)] - 2.0 * c;
            let south = if j > 0 { w.u[g.u_index(i, j - 1)] } else { -c };
            let north = if j + 1 < ny { w.u[g.u_index(i, j + 1)] } else { -c };
            out.u[g.u_index(i, j)] = ax * xs + ay * (south + north - 2.0 * c);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let c = w.v[g.v_index(i, j)];
            let ys = w.v[g.v_index(i, j - 1)] + w.v[g.v_index(i, j + 1)] - 2.0 * c;
            let west = if i > 0 { w.v[g.v_index(i - 1, j)] } else { -c };
            let east = if i + 1 < nx { w.v[g.v_index(i + 1, j)] } else { -c };
            out.v[g.v_index(i, j)] = ay * ys + ax * (west + east - 2.0 * c);
        }
    }
    out
}
