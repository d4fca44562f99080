//! Parametrized planar contraction-expansion channel and its Cartesian grid.
//!
//! The channel is described by the expansion ratio `lambda = L_c / w_c` and
//! the channel height `L_c` (taken as the unit length). In `FullChannel` mode
//! the domain is an upstream section of length `L_c`, a contraction of width
//! `w_c` and length `(L_c - w_c)/2`, and a downstream section of length
//! `6 L_c`. In `ExpansionOnly` mode the domain is the downstream rectangle
//! alone and the contraction is represented by the inlet boundary profile.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// One (Reynolds number, expansion ratio) point in parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    /// Reynolds number built on twice the mean slot velocity times the slot width.
    pub re: f64,
    /// Expansion ratio `L_c / w_c`.
    pub lambda: f64,
}

impl ParameterPoint {
    pub fn new(re: f64, lambda: f64) -> Result<Self> {
        if !(re > 0.0) {
            return Err(Error::InvalidParameter(format!("re must be > 0, got {re}")));
        }
        if !(lambda >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 1, got {lambda}"
            )));
        }
        Ok(Self { re, lambda })
    }

    /// Kinematic viscosity for this point under the unit-mean-slot-velocity
    /// normalization: `nu = 2 <v_x> w_c / Re` with `<v_x> = 1`, `w_c = L_c / lambda`.
    pub fn viscosity(&self, channel_height: f64) -> f64 {
        2.0 * (channel_height / self.lambda) / self.re
    }
}

/// Domain variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeometryMode {
    /// Upstream section, contraction and downstream expansion.
    FullChannel,
    /// Downstream rectangle only; the contraction enters through the inlet profile.
    ExpansionOnly,
}

/// Derived channel dimensions. All lengths are in units of the channel height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelGeometry {
    pub channel_height: f64,
    pub contraction_width: f64,
    pub upstream_length: f64,
    pub contraction_length: f64,
    pub downstream_length: f64,
    pub lambda: f64,
    pub mode: GeometryMode,
}

impl ChannelGeometry {
    pub fn total_length(&self) -> f64 {
        self.upstream_length + self.contraction_length + self.downstream_length
    }
}

/// Builds the channel geometry for a given expansion ratio.
pub fn build_geometry(lambda: f64, channel_height: f64, mode: GeometryMode) -> Result<ChannelGeometry> {
    if !(lambda >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be >= 1, got {lambda}"
        )));
    }
    if !(channel_height > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "channel height must be > 0, got {channel_height}"
        )));
    }
    let w_c = channel_height / lambda;
    let (upstream, contraction) = match mode {
        GeometryMode::FullChannel => (channel_height, (channel_height - w_c) / 2.0),
        GeometryMode::ExpansionOnly => (0.0, 0.0),
    };
    Ok(ChannelGeometry {
        channel_height,
        contraction_width: w_c,
        upstream_length: upstream,
        contraction_length: contraction,
        downstream_length: 6.0 * channel_height,
        lambda,
        mode,
    })
}

/// Cell classification. Boundary kinds are assigned to fluid cells adjacent
/// to the corresponding boundary; precedence is inlet, outlet, wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Interior,
    Inlet,
    Wall,
    Outlet,
    Exterior,
}

/// Kind of an x-normal velocity face (`u` unknowns).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UFaceKind {
    /// Interior fluid-fluid face; a degree of freedom.
    Active,
    /// Inlet face with prescribed nonzero Dirichlet value.
    InletFixed,
    /// Face on a solid wall or on the zero part of the inlet edge; value 0.
    WallZero,
    /// Outlet face; slaved to the neighboring interior value plus the
    /// pressure correction.
    Outflow,
    /// Face inside the solid exterior.
    Dead,
}

/// Kind of a y-normal velocity face (`v` unknowns).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VFaceKind {
    Active,
    WallZero,
    Dead,
}

/// Uniform staggered Cartesian grid over the channel bounding box.
///
/// Cells are indexed `(i, j)` with `i` along the flow (x) and `j` across the
/// channel (y); the flattened index is `i * ny + j`. `u` lives on x-normal
/// faces (`(nx+1) * ny` values), `v` on y-normal faces (`nx * (ny+1)`), both
/// with the same `i`-major layout.
#[derive(Debug, Clone)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    /// y coordinate of the bottom wall; the midline is y = 0.
    pub y0: f64,
    pub geometry: ChannelGeometry,
    pub cell_kind: Vec<CellKind>,
    pub u_kind: Vec<UFaceKind>,
    pub v_kind: Vec<VFaceKind>,
    /// Prescribed inlet u at the `i = 0` faces (one value per row).
    pub inlet_u: Vec<f64>,
    /// Discrete inlet flow rate, `sum(inlet_u) * dy`.
    pub inlet_flow_rate: f64,
    /// Number of cell rows across the contraction slot (odd).
    pub slot_cells: usize,
    /// Quantized slot width `slot_cells * dy`.
    pub slot_width: f64,
    /// Quantized inlet width: number of nonzero inlet faces times `dy`.
    pub inlet_width: f64,
    /// Cell index range of the contraction segment (empty in ExpansionOnly mode).
    pub contraction_span: (usize, usize),
    /// Requested resolution in cells per unit length.
    pub resolution: f64,
    /// Flattened indices of Active u faces (the u degrees of freedom).
    pub act_u: Vec<usize>,
    /// Flattened indices of Active v faces.
    pub act_v: Vec<usize>,
    /// Flattened indices of fluid cells.
    pub fluid_cells: Vec<usize>,
}

impl Grid {
    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn uidx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn vidx(&self, i: usize, j: usize) -> usize {
        i * (self.ny + 1) + j
    }

    #[inline]
    pub fn is_fluid(&self, i: usize, j: usize) -> bool {
        self.cell_kind[self.cell(i, j)] != CellKind::Exterior
    }

    /// y coordinate of the cell-center row `j` (also the u-face row).
    /// Evaluated about the midline so mirrored rows get exactly opposite
    /// coordinates.
    #[inline]
    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5 - 0.5 * self.ny as f64) * self.dy
    }

    /// y coordinate of the v-face row `j`.
    #[inline]
    pub fn y_face(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * self.ny as f64) * self.dy
    }

    /// x coordinate of the u-face column `i`.
    #[inline]
    pub fn x_face(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    /// x coordinate of the cell-center column `i`.
    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_u(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn n_v(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    /// Two grids can host the same snapshot set when their dimensions,
    /// spacings and fluid masks agree. The inlet profile may differ: the
    /// boundary-condition parametrization reuses one rectangle for every
    /// expansion ratio.
    pub fn compatible(&self, other: &Grid) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.dx - other.dx).abs() <= 1e-14 * self.dx
            && (self.dy - other.dy).abs() <= 1e-14 * self.dy
            && self
                .cell_kind
                .iter()
                .zip(&other.cell_kind)
                .all(|(a, b)| (*a == CellKind::Exterior) == (*b == CellKind::Exterior))
    }
}

fn nearest_odd(x: f64) -> usize {
    let lo = {
        let f = x.floor() as i64;
        if f % 2 == 0 {
            f - 1
        } else {
            f
        }
    };
    let hi = lo + 2;
    let pick = if (x - lo as f64).abs() <= (hi as f64 - x).abs() {
        lo
    } else {
        hi
    };
    pick.max(1) as usize
}

/// Discretizes a channel geometry with `resolution` cells per unit length.
///
/// The cell count across the channel is forced odd and the contraction slot
/// is rounded to the nearest odd number of cell rows, so the fluid mask is
/// exactly mirror-symmetric about the midline.
pub fn build_grid(geom: &ChannelGeometry, resolution: f64) -> Result<Grid> {
    build_grid_with_min(geom, resolution, 8.0)
}

/// Grid builder with a caller-chosen under-resolution floor; the public API
/// requires 8 cells across the slot, internal warm-start grids relax this.
pub(crate) fn build_grid_with_min(
    geom: &ChannelGeometry,
    resolution: f64,
    min_cells: f64,
) -> Result<Grid> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "resolution must be > 0, got {resolution}"
        )));
    }
    let h = geom.channel_height;
    let ny = nearest_odd(h * resolution).max(3);
    let dy = h / ny as f64;
    let nominal_slot = geom.contraction_width / dy;
    if nominal_slot < min_cells - 1e-9 {
        return Err(Error::UnderResolved {
            cells: nominal_slot,
            width: geom.contraction_width,
            min: min_cells as usize,
        });
    }
    let slot_cells = nearest_odd(nominal_slot).min(ny);
    let total_length = geom.total_length();
    let nx = (total_length * resolution).round().max(4.0) as usize;
    let dx = total_length / nx as f64;
    let y0 = -0.5 * h;

    // Contraction segment bounds snapped to cell faces.
    let (ca, cb) = match geom.mode {
        GeometryMode::FullChannel => {
            let xa = geom.upstream_length;
            let xb = xa + geom.contraction_length;
            let ia = (xa / dx).round() as usize;
            let ib = (xb / dx).round() as usize;
            (ia.min(nx), ib.min(nx))
        }
        GeometryMode::ExpansionOnly => (0, 0),
    };

    let jm = (ny - 1) / 2;
    let k = (slot_cells - 1) / 2;
    let in_slot = |j: usize| j + k >= jm && j <= jm + k;

    let mut cell_kind = vec![CellKind::Interior; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            if i >= ca && i < cb && !in_slot(j) {
                cell_kind[i * ny + j] = CellKind::Exterior;
            }
        }
    }

    // Inlet profile at the i = 0 faces, normalized to unit mean slot velocity.
    let w_c = geom.contraction_width;
    let mut inlet_u = vec![0.0; ny];
    for (j, val) in inlet_u.iter_mut().enumerate() {
        let y = (j as f64 + 0.5 - 0.5 * ny as f64) * dy;
        *val = match geom.mode {
            GeometryMode::FullChannel => {
                let s = 2.0 * y / h;
                (1.5 / geom.lambda) * (1.0 - s * s)
            }
            GeometryMode::ExpansionOnly => {
                let s = 2.0 * y / w_c;
                (1.5 * (1.0 - s * s)).max(0.0)
            }
        };
    }
    let inlet_faces = inlet_u.iter().filter(|v| **v > 0.0).count();
    let inlet_flow_rate: f64 = inlet_u.iter().sum::<f64>() * dy;

    // Face kinds.
    let solid = |i: usize, j: usize| cell_kind[i * ny + j] == CellKind::Exterior;
    let mut u_kind = vec![UFaceKind::Dead; (nx + 1) * ny];
    for j in 0..ny {
        u_kind[j] = if solid(0, j) {
            UFaceKind::Dead
        } else if inlet_u[j] > 0.0 {
            UFaceKind::InletFixed
        } else {
            UFaceKind::WallZero
        };
        u_kind[nx * ny + j] = if solid(nx - 1, j) {
            UFaceKind::Dead
        } else {
            UFaceKind::Outflow
        };
        for i in 1..nx {
            let a = solid(i - 1, j);
            let b = solid(i, j);
            u_kind[i * ny + j] = match (a, b) {
                (false, false) => UFaceKind::Active,
                (true, true) => UFaceKind::Dead,
                _ => UFaceKind::WallZero,
            };
        }
    }
    let mut v_kind = vec![VFaceKind::Dead; nx * (ny + 1)];
    for i in 0..nx {
        v_kind[i * (ny + 1)] = if solid(i, 0) {
            VFaceKind::Dead
        } else {
            VFaceKind::WallZero
        };
        v_kind[i * (ny + 1) + ny] = if solid(i, ny - 1) {
            VFaceKind::Dead
        } else {
            VFaceKind::WallZero
        };
        for j in 1..ny {
            let a = solid(i, j - 1);
            let b = solid(i, j);
            v_kind[i * (ny + 1) + j] = match (a, b) {
                (false, false) => VFaceKind::Active,
                (true, true) => VFaceKind::Dead,
                _ => VFaceKind::WallZero,
            };
        }
    }

    // Cell classification over the fluid region.
    let solid_mask: Vec<bool> = cell_kind.iter().map(|k| *k == CellKind::Exterior).collect();
    let solid = |i: usize, j: usize| solid_mask[i * ny + j];
    for i in 0..nx {
        for j in 0..ny {
            let idx = i * ny + j;
            if cell_kind[idx] == CellKind::Exterior {
                continue;
            }
            let at_inlet = i == 0 && inlet_u[j] > 0.0;
            let at_outlet = i == nx - 1;
            let near_wall = j == 0
                || j == ny - 1
                || (i == 0 && inlet_u[j] <= 0.0)
                || (i > 0 && solid(i - 1, j))
                || (i + 1 < nx && solid(i + 1, j))
                || (j > 0 && solid(i, j - 1))
                || (j + 1 < ny && solid(i, j + 1));
            cell_kind[idx] = if at_inlet {
                CellKind::Inlet
            } else if at_outlet {
                CellKind::Outlet
            } else if near_wall {
                CellKind::Wall
            } else {
                CellKind::Interior
            };
        }
    }

    let act_u: Vec<usize> = (0..u_kind.len())
        .filter(|k| u_kind[*k] == UFaceKind::Active)
        .collect();
    let act_v: Vec<usize> = (0..v_kind.len())
        .filter(|k| v_kind[*k] == VFaceKind::Active)
        .collect();
    let fluid_cells: Vec<usize> = (0..cell_kind.len())
        .filter(|k| cell_kind[*k] != CellKind::Exterior)
        .collect();

    Ok(Grid {
        nx,
        ny,
        dx,
        dy,
        y0,
        geometry: *geom,
        cell_kind,
        u_kind,
        v_kind,
        inlet_u,
        inlet_flow_rate,
        slot_cells,
        slot_width: slot_cells as f64 * dy,
        inlet_width: inlet_faces as f64 * dy,
        contraction_span: (ca, cb),
        resolution,
        act_u,
        act_v,
        fluid_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_lambda_15_4() {
        let g = build_geometry(15.4, 1.0, GeometryMode::FullChannel).unwrap();
        assert!((g.contraction_width - 1.0 / 15.4).abs() < 1e-15);
        assert!((g.contraction_width - 0.064935).abs() < 1e-6);
        assert_eq!(g.downstream_length, 6.0);
        assert!((g.contraction_length - (1.0 - 1.0 / 15.4) / 2.0).abs() < 1e-15);
        assert_eq!(g.upstream_length, 1.0);
    }

    #[test]
    fn geometry_degenerate_straight_channel() {
        let g = build_geometry(1.0, 1.0, GeometryMode::FullChannel).unwrap();
        assert_eq!(g.contraction_width, 1.0);
        assert_eq!(g.contraction_length, 0.0);
    }

    #[test]
    fn geometry_expansion_only() {
        let g = build_geometry(6.0, 1.0, GeometryMode::ExpansionOnly).unwrap();
        assert_eq!(g.upstream_length, 0.0);
        assert_eq!(g.contraction_length, 0.0);
        assert_eq!(g.downstream_length, 6.0);
        assert!((g.contraction_width - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(g.total_length(), 6.0);
    }

    #[test]
    fn geometry_rejects_bad_inputs() {
        assert!(build_geometry(0.9, 1.0, GeometryMode::FullChannel).is_err());
        assert!(build_geometry(2.0, 0.0, GeometryMode::FullChannel).is_err());
        assert!(build_geometry(2.0, -1.0, GeometryMode::ExpansionOnly).is_err());
        assert!(build_geometry(f64::NAN, 1.0, GeometryMode::FullChannel).is_err());
    }

    #[test]
    fn grid_resolution_lambda_15_4() {
        let g = build_geometry(15.4, 1.0, GeometryMode::FullChannel).unwrap();
        // 10 cells across the slot.
        let res = 10.0 / g.contraction_width;
        let grid = build_grid(&g, res).unwrap();
        assert!(grid.ny >= 154);
        assert!(grid.ny % 2 == 1);
        assert!(grid.slot_cells % 2 == 1);
        // Extents reproduced exactly.
        assert!((grid.nx as f64 * grid.dx - g.total_length()).abs() <= 1e-12 * g.total_length());
        assert!((grid.ny as f64 * grid.dy - g.channel_height).abs() <= 1e-12);
        // Quantized slot width within one cell of the nominal width.
        assert!((grid.slot_width - g.contraction_width).abs() <= grid.dy);
    }

    #[test]
    fn grid_wider_slot_needs_fewer_rows() {
        let g2 = build_geometry(2.0, 1.0, GeometryMode::FullChannel).unwrap();
        let g154 = build_geometry(15.4, 1.0, GeometryMode::FullChannel).unwrap();
        let res = 10.0 / g154.contraction_width;
        let fine = build_grid(&g154, res).unwrap();
        let coarse = build_grid(&g2, 10.0 / g2.contraction_width).unwrap();
        assert!(coarse.ny < fine.ny);
    }

    #[test]
    fn grid_rejects_under_resolved_contraction() {
        let g = build_geometry(10.0, 1.0, GeometryMode::FullChannel).unwrap();
        // 4 cells across the slot.
        let err = build_grid(&g, 4.0 / g.contraction_width).unwrap_err();
        assert!(matches!(err, Error::UnderResolved { .. }));
    }

    #[test]
    fn masks_are_mirror_symmetric() {
        for (lambda, mode) in [
            (15.4, GeometryMode::FullChannel),
            (6.0, GeometryMode::ExpansionOnly),
            (3.7, GeometryMode::FullChannel),
        ] {
            let g = build_geometry(lambda, 1.0, mode).unwrap();
            let grid = build_grid(&g, 9.0 / g.contraction_width).unwrap();
            let ny = grid.ny;
            for i in 0..grid.nx {
                for j in 0..ny {
                    assert_eq!(
                        grid.cell_kind[grid.cell(i, j)],
                        grid.cell_kind[grid.cell(i, ny - 1 - j)],
                        "cell mask asymmetric at ({i},{j})"
                    );
                }
            }
            for j in 0..ny {
                assert!(
                    (grid.inlet_u[j] - grid.inlet_u[ny - 1 - j]).abs() < 1e-14,
                    "inlet profile asymmetric at {j}"
                );
            }
        }
    }

    #[test]
    fn cells_have_exactly_one_kind_and_inlet_width_quantized() {
        let g = build_geometry(6.0, 1.0, GeometryMode::ExpansionOnly).unwrap();
        let grid = build_grid(&g, 60.0).unwrap();
        // Inlet slot width within one cell of w_c.
        assert!((grid.inlet_width - g.contraction_width).abs() <= grid.dy);
        // ExpansionOnly: rectangle of height 1, length 6.
        assert!(grid.cell_kind.iter().all(|k| *k != CellKind::Exterior));
        let inlets = grid
            .cell_kind
            .iter()
            .filter(|k| **k == CellKind::Inlet)
            .count();
        assert!(inlets > 0);
    }

    #[test]
    fn full_channel_exterior_cells_exist() {
        let g = build_geometry(15.4, 1.0, GeometryMode::FullChannel).unwrap();
        let grid = build_grid(&g, 10.0 / g.contraction_width).unwrap();
        let ext = grid
            .cell_kind
            .iter()
            .filter(|k| **k == CellKind::Exterior)
            .count();
        assert!(ext > 0);
        let (ca, cb) = grid.contraction_span;
        assert!(ca > 0 && cb > ca);
    }
}
