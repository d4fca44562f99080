//! Staggered velocity fields and the discrete operators shared by the
//! full-order solver and the reduced-operator assembly.
//!
//! All inner products, norms and differential stencils used anywhere in the
//! crate are defined here once, so that the Galerkin projection sees exactly
//! the operators the full-order solver converged with.

use std::sync::Arc;

use crate::error::Error;
use crate::geometry::{Grid, UFaceKind, VFaceKind};
use crate::Result;

/// Velocity field on the staggered grid: `u` on x-normal faces, `v` on
/// y-normal faces.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub grid: Arc<Grid>,
}

impl VelocityField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let u = vec![0.0; grid.n_u()];
        let v = vec![0.0; grid.n_v()];
        Self { u, v, grid }
    }

    /// Zero field with the prescribed inlet data applied.
    pub fn with_boundary_data(grid: Arc<Grid>) -> Self {
        let mut f = Self::zeros(grid);
        f.apply_dirichlet();
        f
    }

    /// Re-imposes inlet values, wall zeros and the zero-gradient outlet copy.
    pub fn apply_dirichlet(&mut self) {
        let g = self.grid.clone();
        let ny = g.ny;
        for j in 0..ny {
            match g.u_kind[j] {
                UFaceKind::InletFixed => self.u[j] = g.inlet_u[j],
                UFaceKind::WallZero | UFaceKind::Dead => self.u[j] = 0.0,
                _ => {}
            }
            let out = g.nx * ny + j;
            match g.u_kind[out] {
                UFaceKind::Outflow => self.u[out] = self.u[out - ny],
                _ => self.u[out] = 0.0,
            }
        }
        for i in 1..g.nx {
            for j in 0..ny {
                let k = i * ny + j;
                if g.u_kind[k] != UFaceKind::Active {
                    self.u[k] = 0.0;
                }
            }
        }
        for (k, kind) in g.v_kind.iter().enumerate() {
            if *kind != VFaceKind::Active {
                self.v[k] = 0.0;
            }
        }
    }

    pub fn assert_same_grid(&self, other: &VelocityField) -> Result<()> {
        if !self.grid.compatible(&other.grid) {
            return Err(Error::GridMismatch(
                self.grid.n_cells(),
                other.grid.n_cells(),
            ));
        }
        Ok(())
    }

    /// Mirror about the channel midline: reflects both components in y and
    /// negates the cross-channel velocity.
    pub fn mirror(&self) -> VelocityField {
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let mut out = VelocityField::zeros(self.grid.clone());
        for i in 0..=nx {
            for j in 0..ny {
                out.u[i * ny + j] = self.u[i * ny + (ny - 1 - j)];
            }
        }
        for i in 0..nx {
            for j in 0..=ny {
                out.v[i * (ny + 1) + j] = -self.v[i * (ny + 1) + (ny - j)];
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> VelocityField {
        let mut out = self.clone();
        out.u.iter_mut().for_each(|x| *x *= s);
        out.v.iter_mut().for_each(|x| *x *= s);
        out
    }

    pub fn axpy(&mut self, a: f64, x: &VelocityField) {
        for (o, xi) in self.u.iter_mut().zip(&x.u) {
            *o += a * xi;
        }
        for (o, xi) in self.v.iter_mut().zip(&x.v) {
            *o += a * xi;
        }
    }

    /// Linear combination of fields on one grid.
    pub fn linear_combination(fields: &[&VelocityField], coeffs: &[f64]) -> Result<VelocityField> {
        assert_eq!(fields.len(), coeffs.len());
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty combination".into()))?;
        let mut out = VelocityField::zeros(first.grid.clone());
        for (f, c) in fields.iter().zip(coeffs) {
            first.assert_same_grid(f)?;
            out.axpy(*c, f);
        }
        Ok(out)
    }

    /// Discrete divergence at fluid cell `(i, j)`.
    #[inline]
    pub fn divergence_at(&self, i: usize, j: usize) -> f64 {
        let g = &self.grid;
        let ny = g.ny;
        (self.u[(i + 1) * ny + j] - self.u[i * ny + j]) / g.dx
            + (self.v[i * (ny + 1) + j + 1] - self.v[i * (ny + 1) + j]) / g.dy
    }

    /// Largest absolute divergence over fluid cells.
    pub fn max_divergence(&self) -> f64 {
        let g = &self.grid;
        let ny = g.ny;
        g.fluid_cells
            .iter()
            .map(|&c| self.divergence_at(c / ny, c % ny).abs())
            .fold(0.0, f64::max)
    }

    /// Volume flow rate through the u-face column `i`.
    pub fn flux_through(&self, i: usize) -> f64 {
        let g = &self.grid;
        let ny = g.ny;
        let mut q = 0.0;
        for j in 0..ny {
            if g.u_kind[i * ny + j] != UFaceKind::Dead {
                q += self.u[i * ny + j];
            }
        }
        q * g.dy
    }

    /// Volume integral of the x-velocity over the fluid domain
    /// (midpoint quadrature over included faces).
    pub fn integrated_x_velocity(&self) -> f64 {
        let g = &self.grid;
        let w = g.dx * g.dy;
        let mut s = 0.0;
        for (k, kind) in g.u_kind.iter().enumerate() {
            if matches!(kind, UFaceKind::Active | UFaceKind::InletFixed) {
                s += self.u[k];
            }
        }
        s * w
    }

    /// Inlet trace: u along the `i = 0` faces.
    pub fn inlet_trace(&self) -> Vec<f64> {
        self.u[..self.grid.ny].to_vec()
    }

    /// Streamwise velocity at an arbitrary point, bilinear in the u grid.
    pub fn probe_u(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        // u nodes at (x_face(i), y_center(j)).
        let fx = (x / g.dx).clamp(0.0, nx as f64);
        let fy = ((y - g.y0) / g.dy - 0.5).clamp(0.0, (ny - 1) as f64);
        let i0 = (fx.floor() as usize).min(nx - 1);
        let j0 = (fy.floor() as usize).min(ny - 2);
        let ax = fx - i0 as f64;
        let ay = fy - j0 as f64;
        let val = |i: usize, j: usize| self.u[i * ny + j];
        (1.0 - ax) * (1.0 - ay) * val(i0, j0)
            + ax * (1.0 - ay) * val(i0 + 1, j0)
            + (1.0 - ax) * ay * val(i0, j0 + 1)
            + ax * ay * val(i0 + 1, j0 + 1)
    }

    /// Cross-channel velocity at an arbitrary point, bilinear in the v grid.
    pub fn probe_v(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        // v nodes at (x_center(i), y_face(j)).
        let fx = (x / g.dx - 0.5).clamp(0.0, (nx - 1) as f64);
        let fy = ((y - g.y0) / g.dy).clamp(0.0, ny as f64);
        let i0 = (fx.floor() as usize).min(nx - 2);
        let j0 = (fy.floor() as usize).min(ny - 1);
        let ax = fx - i0 as f64;
        let ay = fy - j0 as f64;
        let val = |i: usize, j: usize| self.v[i * (ny + 1) + j];
        (1.0 - ax) * (1.0 - ay) * val(i0, j0)
            + ax * (1.0 - ay) * val(i0 + 1, j0)
            + (1.0 - ax) * ay * val(i0, j0 + 1)
            + ax * ay * val(i0 + 1, j0 + 1)
    }
}

/// Discrete L2 inner product: cell-area-weighted sum over Active and
/// InletFixed u faces plus Active v faces. Wall and dead faces carry no
/// weight; the slaved outlet faces are excluded.
pub fn inner(a: &VelocityField, b: &VelocityField) -> f64 {
    let g = &a.grid;
    let mut s = 0.0;
    for (k, kind) in g.u_kind.iter().enumerate() {
        if matches!(kind, UFaceKind::Active | UFaceKind::InletFixed) {
            s += a.u[k] * b.u[k];
        }
    }
    for &k in &g.act_v {
        s += a.v[k] * b.v[k];
    }
    s * g.dx * g.dy
}

pub fn norm(a: &VelocityField) -> f64 {
    inner(a, a).sqrt()
}

/// `||a - b|| / ||a||` in the discrete L2 norm.
pub fn relative_distance(a: &VelocityField, b: &VelocityField) -> f64 {
    let g = &a.grid;
    let mut diff = 0.0;
    let mut nrm = 0.0;
    for (k, kind) in g.u_kind.iter().enumerate() {
        if matches!(kind, UFaceKind::Active | UFaceKind::InletFixed) {
            let d = a.u[k] - b.u[k];
            diff += d * d;
            nrm += a.u[k] * a.u[k];
        }
    }
    for &k in &g.act_v {
        let d = a.v[k] - b.v[k];
        diff += d * d;
        nrm += a.v[k] * a.v[k];
    }
    (diff / nrm.max(f64::MIN_POSITIVE)).sqrt()
}

/// Advective-form convection `base . grad(field)` evaluated on the active
/// faces; `gamma` blends the first derivative from upwind (0) to central (1).
///
/// Ghost conventions: no-slip reflection (`-q`) across solid walls for the
/// tangential component, zero-gradient at the outlet, and stored values
/// elsewhere (Dirichlet faces carry their boundary data).
pub fn convect(base: &VelocityField, field: &VelocityField, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let g = &base.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (dx, dy) = (g.dx, g.dy);
    let mut cu = vec![0.0; g.n_u()];
    let mut cv = vec![0.0; g.n_v()];
    let bu = &base.u;
    let bv = &base.v;
    let fu = &field.u;
    let fv = &field.v;
    let uk = &g.u_kind;
    let vk = &g.v_kind;

    for &k in &g.act_u {
        let i = k / ny;
        let j = k % ny;
        // Advecting velocity at the face. The pairwise grouping keeps the
        // evaluation bitwise mirror-equivariant.
        let ub = bu[k];
        let vb = 0.25
            * ((bv[(i - 1) * (ny + 1) + j] + bv[(i - 1) * (ny + 1) + j + 1])
                + (bv[i * (ny + 1) + j] + bv[i * (ny + 1) + j + 1]));
        // x neighbors always exist in storage.
        let fw = fu[k - ny];
        let fe = fu[k + ny];
        let fc = fu[k];
        // y neighbors: reflect across horizontal walls.
        let fn_ = if j + 1 < ny && uk[k + 1] != UFaceKind::Dead {
            fu[k + 1]
        } else if j + 1 < ny {
            -fc
        } else {
            -fc
        };
        let fs = if j > 0 && uk[k - 1] != UFaceKind::Dead {
            fu[k - 1]
        } else {
            -fc
        };
        let ddx_c = (fe - fw) / (2.0 * dx);
        let ddx_u = if ub >= 0.0 {
            (fc - fw) / dx
        } else {
            (fe - fc) / dx
        };
        let ddy_c = (fn_ - fs) / (2.0 * dy);
        let ddy_u = if vb >= 0.0 {
            (fc - fs) / dy
        } else {
            (fn_ - fc) / dy
        };
        cu[k] = ub * (gamma * ddx_c + (1.0 - gamma) * ddx_u)
            + vb * (gamma * ddy_c + (1.0 - gamma) * ddy_u);
    }

    let nvy = ny + 1;
    for &k in &g.act_v {
        let i = k / nvy;
        let j = k % nvy;
        let vb = bv[k];
        let ub = 0.25
            * ((bu[i * ny + j - 1] + bu[i * ny + j])
                + (bu[(i + 1) * ny + j - 1] + bu[(i + 1) * ny + j]));
        // y neighbors always exist in storage for active v faces.
        let fs = fv[k - 1];
        let fn_ = fv[k + 1];
        let fc = fv[k];
        // x neighbors: reflect at vertical walls, zero-gradient at the outlet.
        let fw = if i > 0 && vk[k - nvy] != VFaceKind::Dead {
            fv[k - nvy]
        } else if i > 0 {
            -fc
        } else {
            -fc
        };
        let fe = if i + 1 < nx && vk[k + nvy] != VFaceKind::Dead {
            fv[k + nvy]
        } else if i + 1 < nx {
            -fc
        } else {
            fc
        };
        let ddx_c = (fe - fw) / (2.0 * dx);
        let ddx_u = if ub >= 0.0 {
            (fc - fw) / dx
        } else {
            (fe - fc) / dx
        };
        let ddy_c = (fn_ - fs) / (2.0 * dy);
        let ddy_u = if vb >= 0.0 {
            (fc - fs) / dy
        } else {
            (fn_ - fc) / dy
        };
        cv[k] = ub * (gamma * ddx_c + (1.0 - gamma) * ddx_u)
            + vb * (gamma * ddy_c + (1.0 - gamma) * ddy_u);
    }
    (cu, cv)
}

/// Viscous Laplacian on the active faces with the ghost conventions of
/// [`convect`]; returns per-face `lap(u), lap(v)` (no viscosity factor).
pub fn laplacian(field: &VelocityField) -> (Vec<f64>, Vec<f64>) {
    let g = &field.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (dx2, dy2) = (g.dx * g.dx, g.dy * g.dy);
    let mut lu = vec![0.0; g.n_u()];
    let mut lv = vec![0.0; g.n_v()];
    let fu = &field.u;
    let fv = &field.v;
    let uk = &g.u_kind;
    let vk = &g.v_kind;

    for &k in &g.act_u {
        let j = k % ny;
        let fc = fu[k];
        let fw = fu[k - ny];
        let fe = fu[k + ny];
        let fn_ = if j + 1 < ny && uk[k + 1] != UFaceKind::Dead {
            fu[k + 1]
        } else {
            -fc
        };
        let fs = if j > 0 && uk[k - 1] != UFaceKind::Dead {
            fu[k - 1]
        } else {
            -fc
        };
        lu[k] = ((fe + fw) - 2.0 * fc) / dx2 + ((fn_ + fs) - 2.0 * fc) / dy2;
    }
    let nvy = ny + 1;
    for &k in &g.act_v {
        let i = k / nvy;
        let fc = fv[k];
        let fs = fv[k - 1];
        let fn_ = fv[k + 1];
        let fw = if i > 0 && vk[k - nvy] != VFaceKind::Dead {
            fv[k - nvy]
        } else {
            -fc
        };
        let fe = if i + 1 < nx && vk[k + nvy] != VFaceKind::Dead {
            fv[k + nvy]
        } else if i + 1 < nx {
            -fc
        } else {
            fc
        };
        lv[k] = ((fe + fw) - 2.0 * fc) / dx2 + ((fn_ + fs) - 2.0 * fc) / dy2;
    }
    (lu, lv)
}

/// Gradient quadratic form `(grad a, grad b)` dual to [`laplacian`]: interior
/// finite-difference edges carry full cell weight; wall edges enter with the
/// reflected gradient `2 q / h` and half weight.
pub fn grad_form(a: &VelocityField, b: &VelocityField) -> f64 {
    let g = &a.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (dx, dy) = (g.dx, g.dy);
    let w = dx * dy;
    let uk = &g.u_kind;
    let vk = &g.v_kind;
    let mut s = 0.0;

    // u component: x edges at fluid cell centers.
    for &c in &g.fluid_cells {
        let i = c / ny;
        let j = c % ny;
        let k = i * ny + j;
        let ga = (a.u[k + ny] - a.u[k]) / dx;
        let gb = (b.u[k + ny] - b.u[k]) / dx;
        s += w * ga * gb;
    }
    // u component: y edges between vertically adjacent faces.
    for i in 0..=nx {
        for j in 0..ny {
            let k = i * ny + j;
            if uk[k] == UFaceKind::Dead {
                continue;
            }
            // Edge above face (i, j).
            if j + 1 < ny && uk[k + 1] != UFaceKind::Dead {
                if uk[k] == UFaceKind::Active || uk[k + 1] == UFaceKind::Active {
                    let ga = (a.u[k + 1] - a.u[k]) / dy;
                    let gb = (b.u[k + 1] - b.u[k]) / dy;
                    s += w * ga * gb;
                }
            } else {
                // Wall above.
                let ga = 2.0 * a.u[k] / dy;
                let gb = 2.0 * b.u[k] / dy;
                s += 0.5 * w * ga * gb;
            }
            // Wall below.
            if j == 0 || uk[k - 1] == UFaceKind::Dead {
                let ga = 2.0 * a.u[k] / dy;
                let gb = 2.0 * b.u[k] / dy;
                s += 0.5 * w * ga * gb;
            }
        }
    }
    // v component: y edges at fluid cell centers.
    let nvy = ny + 1;
    for &c in &g.fluid_cells {
        let i = c / ny;
        let j = c % ny;
        let k = i * nvy + j;
        let ga = (a.v[k + 1] - a.v[k]) / dy;
        let gb = (b.v[k + 1] - b.v[k]) / dy;
        s += w * ga * gb;
    }
    // v component: x edges between horizontally adjacent faces.
    for i in 0..nx {
        for j in 0..=ny {
            let k = i * nvy + j;
            if vk[k] == VFaceKind::Dead {
                continue;
            }
            if i + 1 < nx && vk[k + nvy] != VFaceKind::Dead {
                if vk[k] == VFaceKind::Active || vk[k + nvy] == VFaceKind::Active {
                    let ga = (a.v[k + nvy] - a.v[k]) / dx;
                    let gb = (b.v[k + nvy] - b.v[k]) / dx;
                    s += w * ga * gb;
                }
            } else if i + 1 < nx {
                // Vertical wall to the right.
                let ga = 2.0 * a.v[k] / dx;
                let gb = 2.0 * b.v[k] / dx;
                s += 0.5 * w * ga * gb;
            }
            // Left boundary (inlet plane or wall) and interior walls.
            if i == 0 || vk[k - nvy] == VFaceKind::Dead {
                let ga = 2.0 * a.v[k] / dx;
                let gb = 2.0 * b.v[k] / dx;
                s += 0.5 * w * ga * gb;
            }
            // The outlet edge has zero gradient and contributes nothing.
        }
    }
    s
}

/// Synthetic divergence-free fields built from a streamfunction; used by the
/// solver's branch-selection perturbation and by tests.
pub mod synth {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Nodes strictly interior to the fluid: all four surrounding cells are
    /// fluid and the node is off the domain boundary.
    fn interior_node(g: &Grid, i: usize, j: usize) -> bool {
        if i == 0 || j == 0 || i >= g.nx || j >= g.ny {
            return false;
        }
        g.is_fluid(i - 1, j - 1) && g.is_fluid(i, j - 1) && g.is_fluid(i - 1, j) && g.is_fluid(i, j)
    }

    /// Exactly divergence-free field from streamfunction node values
    /// (`psi` has `(nx+1) x (ny+1)` entries, i-major).
    pub fn from_streamfunction(grid: Arc<Grid>, psi: &[f64]) -> VelocityField {
        let g = grid.clone();
        let (nx, ny) = (g.nx, g.ny);
        let mut f = VelocityField::zeros(grid);
        for i in 0..=nx {
            for j in 0..ny {
                let k = i * ny + j;
                if g.u_kind[k] == UFaceKind::Active {
                    f.u[k] = (psi[i * (ny + 1) + j + 1] - psi[i * (ny + 1) + j]) / g.dy;
                }
            }
        }
        for i in 0..nx {
            for j in 0..=ny {
                let k = i * (ny + 1) + j;
                if g.v_kind[k] == VFaceKind::Active {
                    f.v[k] = -(psi[(i + 1) * (ny + 1) + j] - psi[i * (ny + 1) + j]) / g.dx;
                }
            }
        }
        f
    }

    /// Random smooth divergence-free field vanishing near all boundaries.
    /// `parity` +1 builds a mirror-symmetric field, -1 a mirror-antisymmetric
    /// one, 0 no symmetrization.
    pub fn random_divfree(grid: Arc<Grid>, seed: u64, parity: i32, amplitude: f64) -> VelocityField {
        let g = grid.clone();
        let (nx, ny) = (g.nx, g.ny);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = (nx + 1) * (ny + 1);
        let mut psi: Vec<f64> = (0..nodes).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // A few smoothing sweeps.
        for _ in 0..3 {
            let mut next = psi.clone();
            for i in 1..nx {
                for j in 1..ny {
                    let k = i * (ny + 1) + j;
                    next[k] = 0.2
                        * (psi[k] + psi[k - 1] + psi[k + 1] + psi[k - (ny + 1)] + psi[k + ny + 1]);
                }
            }
            psi = next;
        }
        // Zero outside the strict interior.
        for i in 0..=nx {
            for j in 0..=ny {
                if !interior_node(&g, i, j) {
                    psi[i * (ny + 1) + j] = 0.0;
                }
            }
        }
        // u odd in y needs psi even in y; u even needs psi odd.
        if parity != 0 {
            let sign = if parity > 0 { -1.0 } else { 1.0 };
            for i in 0..=nx {
                for j in 0..=ny {
                    if 2 * j < ny {
                        continue;
                    }
                    let k = i * (ny + 1) + j;
                    let m = i * (ny + 1) + (ny - j);
                    let (a, b) = (psi[k], psi[m]);
                    psi[k] = 0.5 * (a + sign * b);
                    psi[m] = 0.5 * (b + sign * a);
                }
            }
        }
        let mut f = from_streamfunction(grid, &psi);
        let peak = f
            .u
            .iter()
            .chain(f.v.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        if peak > 0.0 {
            let s = amplitude / peak;
            f.u.iter_mut().for_each(|x| *x *= s);
            f.v.iter_mut().for_each(|x| *x *= s);
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, build_grid, GeometryMode};

    fn small_grid() -> Arc<Grid> {
        let g = build_geometry(3.0, 1.0, GeometryMode::FullChannel).unwrap();
        Arc::new(build_grid(&g, 27.0).unwrap())
    }

    #[test]
    fn streamfunction_fields_are_divergence_free() {
        let grid = small_grid();
        let f = synth::random_divfree(grid, 7, 0, 1.0);
        assert!(f.max_divergence() < 1e-12);
    }

    #[test]
    fn mirror_is_an_involution_and_isometry() {
        let grid = small_grid();
        let f = synth::random_divfree(grid, 3, 0, 1.0);
        let m = f.mirror();
        let mm = m.mirror();
        for (a, b) in f.u.iter().zip(&mm.u) {
            assert_eq!(a, b);
        }
        for (a, b) in f.v.iter().zip(&mm.v) {
            assert_eq!(a, b);
        }
        assert!((norm(&f) - norm(&m)).abs() <= 1e-13 * norm(&f));
    }

    #[test]
    fn symmetrized_fields_have_expected_parity() {
        let grid = small_grid();
        let sym = synth::random_divfree(grid.clone(), 11, 1, 1.0);
        let m = sym.mirror();
        assert!(relative_distance(&sym, &m) < 1e-12);

        let asym = synth::random_divfree(grid, 11, -1, 1.0);
        let m = asym.mirror().scaled(-1.0);
        assert!(relative_distance(&asym, &m) < 1e-12);
    }

    #[test]
    fn inner_product_is_symmetric_positive() {
        let grid = small_grid();
        let a = synth::random_divfree(grid.clone(), 1, 0, 1.0);
        let b = synth::random_divfree(grid, 2, 0, 1.0);
        assert!((inner(&a, &b) - inner(&b, &a)).abs() < 1e-15);
        assert!(inner(&a, &a) > 0.0);
    }

    #[test]
    fn grad_form_matches_laplacian_on_interior_fields() {
        // For fields vanishing near the boundary, (grad a, grad b) must equal
        // -(a, lap b) summed over active faces.
        let grid = small_grid();
        let a = synth::random_divfree(grid.clone(), 21, 0, 1.0);
        let b = synth::random_divfree(grid.clone(), 22, 0, 1.0);
        let (lu, lv) = laplacian(&b);
        let mut ip = 0.0;
        for &k in &grid.act_u {
            ip += a.u[k] * lu[k];
        }
        for &k in &grid.act_v {
            ip += a.v[k] * lv[k];
        }
        ip *= grid.dx * grid.dy;
        let gf = grad_form(&a, &b);
        assert!(
            (gf + ip).abs() <= 1e-10 * gf.abs().max(1.0),
            "grad form {gf} vs -(a, lap b) {}",
            -ip
        );
    }

    #[test]
    fn convect_central_matches_manual_stencil() {
        let grid = small_grid();
        let base = synth::random_divfree(grid.clone(), 5, 0, 1.0);
        let f = synth::random_divfree(grid.clone(), 6, 0, 1.0);
        let (cu, _) = convect(&base, &f, 1.0);
        let ny = grid.ny;
        // Check one deep-interior face by hand.
        let (i, j) = (grid.nx / 2, ny / 2);
        let k = i * ny + j;
        let ub = base.u[k];
        let vb = 0.25
            * (base.v[(i - 1) * (ny + 1) + j]
                + base.v[(i - 1) * (ny + 1) + j + 1]
                + base.v[i * (ny + 1) + j]
                + base.v[i * (ny + 1) + j + 1]);
        let expect = ub * (f.u[k + ny] - f.u[k - ny]) / (2.0 * grid.dx)
            + vb * (f.u[k + 1] - f.u[k - 1]) / (2.0 * grid.dy);
        assert!((cu[k] - expect).abs() < 1e-14);
    }

    #[test]
    fn flux_and_volume_integral_consistency() {
        // For a divergence-free interior field the flux through every column
        // is equal (here zero since the field vanishes at the boundary).
        let grid = small_grid();
        let f = synth::random_divfree(grid.clone(), 9, 0, 1.0);
        for i in [0, grid.nx / 3, grid.nx / 2, grid.nx] {
            assert!(f.flux_through(i).abs() < 1e-12);
        }
    }
}
