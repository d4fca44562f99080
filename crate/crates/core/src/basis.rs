//! Reduced-basis construction from snapshot sets: POD through the snapshot
//! correlation matrix, Gram-Schmidt orthogonalization, and projection-error
//! diagnostics. All inner products are the discrete L2 product of
//! [`crate::field`].

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::field::{inner, norm, VelocityField};
use crate::Result;

/// How many POD modes to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Truncation {
    /// Exactly `n` modes (rejected if the snapshot set has lower rank).
    Fixed(usize),
    /// Smallest basis capturing this fraction of the total energy.
    EnergyFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisMethod {
    Pod,
    GramSchmidt,
}

/// Provenance of a reduced basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSource {
    pub method: BasisMethod,
    /// Indices of the snapshots the basis was built from.
    pub snapshot_ids: Vec<usize>,
    /// Indices of candidate vectors dropped as numerically dependent.
    pub dropped: Vec<usize>,
    pub truncation: String,
}

/// Orthonormal divergence-free velocity modes with their energies and inlet
/// traces.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub modes: Vec<VelocityField>,
    /// POD eigenvalues in descending order (squared norms for Gram-Schmidt).
    pub energies: Vec<f64>,
    pub source: BasisSource,
    /// Per-mode u along the inlet edge.
    pub inlet_traces: Vec<Vec<f64>>,
}

impl ReducedBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn gram_deviation(&self) -> f64 {
        let n = self.modes.len();
        let mut dev = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let g = inner(&self.modes[i], &self.modes[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((g - target).abs());
            }
        }
        dev
    }

    /// Coefficients of the L2-orthogonal projection of `field` onto the basis.
    pub fn project(&self, field: &VelocityField) -> Vec<f64> {
        self.modes.iter().map(|m| inner(m, field)).collect()
    }

    /// Reconstructs a field from coefficients.
    pub fn combine(&self, coeffs: &[f64]) -> Result<VelocityField> {
        assert_eq!(coeffs.len(), self.modes.len());
        let refs: Vec<&VelocityField> = self.modes.iter().collect();
        VelocityField::linear_combination(&refs, coeffs)
    }
}

/// Snapshot correlation matrix `C_ij = (u_i, u_j)`.
pub fn correlation_matrix(snapshots: &[&VelocityField]) -> Result<DMatrix<f64>> {
    if snapshots.is_empty() {
        return Err(Error::InvalidParameter("no snapshots given".into()));
    }
    for s in snapshots.iter().skip(1) {
        snapshots[0].assert_same_grid(s)?;
    }
    let n = snapshots.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = inner(snapshots[i], snapshots[j]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Relative eigenvalue floor below which the snapshot set counts as rank
/// deficient.
const RANK_FLOOR: f64 = 1e-12;

/// POD basis: eigen-decompose the correlation matrix, combine snapshots with
/// the eigenvector weights, normalize each mode to unit L2 norm.
pub fn pod(snapshots: &[&VelocityField], truncation: Truncation) -> Result<ReducedBasis> {
    let c = correlation_matrix(snapshots)?;
    let n = snapshots.len();
    let eig = SymmetricEigen::new(c);
    // Descending eigenvalues with deterministic eigenvector signs.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].partial_cmp(&eig.eigenvalues[*a]).unwrap());
    let lambda1 = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&k| eig.eigenvalues[k] > RANK_FLOOR * lambda1)
        .count();
    let keep = match truncation {
        Truncation::Fixed(m) => {
            if m > rank {
                return Err(Error::RankDeficient {
                    requested: m,
                    achievable: rank,
                });
            }
            if m == 0 {
                return Err(Error::InvalidParameter("requested empty basis".into()));
            }
            m
        }
        Truncation::EnergyFraction(f) => {
            if !(0.0 < f && f <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "energy fraction must be in (0, 1], got {f}"
                )));
            }
            let total: f64 = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).sum();
            let mut acc = 0.0;
            let mut m = 0;
            for &k in order.iter().take(rank) {
                acc += eig.eigenvalues[k].max(0.0);
                m += 1;
                if acc >= f * total {
                    break;
                }
            }
            m.max(1)
        }
    };
    let mut modes = Vec::with_capacity(keep);
    let mut energies = Vec::with_capacity(keep);
    for &k in order.iter().take(keep) {
        let mut w: Vec<f64> = eig.eigenvectors.column(k).iter().cloned().collect();
        // Deterministic sign: largest-magnitude weight positive.
        let lead = w
            .iter()
            .cloned()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        let mut mode = VelocityField::linear_combination(snapshots, &w)?;
        let nrm = norm(&mode);
        if nrm <= 0.0 {
            return Err(Error::RankDeficient {
                requested: keep,
                achievable: modes.len(),
            });
        }
        let s = 1.0 / nrm;
        mode.u.iter_mut().for_each(|x| *x *= s);
        mode.v.iter_mut().for_each(|x| *x *= s);
        energies.push(eig.eigenvalues[k]);
        modes.push(mode);
    }
    let inlet_traces = modes.iter().map(|m| m.inlet_trace()).collect();
    Ok(ReducedBasis {
        modes,
        energies,
        source: BasisSource {
            method: BasisMethod::Pod,
            snapshot_ids: (0..n).collect(),
            dropped: Vec::new(),
            truncation: format!("{truncation:?}"),
        },
        inlet_traces,
    })
}

/// Sequential Gram-Schmidt orthonormalization; vectors whose post-projection
/// norm falls below `1e-10` of their original norm are dropped and recorded.
pub fn gram_schmidt(snapshots: &[&VelocityField]) -> Result<ReducedBasis> {
    if snapshots.is_empty() {
        return Err(Error::InvalidParameter("no snapshots given".into()));
    }
    for s in snapshots.iter().skip(1) {
        snapshots[0].assert_same_grid(s)?;
    }
    let mut modes: Vec<VelocityField> = Vec::new();
    let mut energies = Vec::new();
    let mut dropped = Vec::new();
    for (k, snap) in snapshots.iter().enumerate() {
        let original = norm(snap);
        let mut w = (*snap).clone();
        for m in &modes {
            let c = inner(m, &w);
            w.axpy(-c, m);
        }
        // One re-orthogonalization pass keeps the Gram matrix tight.
        for m in &modes {
            let c = inner(m, &w);
            w.axpy(-c, m);
        }
        let nrm = norm(&w);
        if nrm <= 1e-10 * original || original == 0.0 {
            dropped.push(k);
            continue;
        }
        let s = 1.0 / nrm;
        w.u.iter_mut().for_each(|x| *x *= s);
        w.v.iter_mut().for_each(|x| *x *= s);
        energies.push(nrm * nrm);
        modes.push(w);
    }
    if modes.is_empty() {
        return Err(Error::DegenerateBasis);
    }
    let inlet_traces = modes.iter().map(|m| m.inlet_trace()).collect();
    let n = snapshots.len();
    Ok(ReducedBasis {
        modes,
        energies,
        source: BasisSource {
            method: BasisMethod::GramSchmidt,
            snapshot_ids: (0..n).collect(),
            dropped,
            truncation: "full".into(),
        },
        inlet_traces,
    })
}

/// `||field - P field|| / ||field||` with `P` the L2-orthogonal projector
/// onto the basis span.
pub fn projection_error(basis: &ReducedBasis, field: &VelocityField) -> f64 {
    let coeffs = basis.project(field);
    let mut residual = field.clone();
    for (c, m) in coeffs.iter().zip(&basis.modes) {
        residual.axpy(-c, m);
    }
    norm(&residual) / norm(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::synth;
    use crate::geometry::{build_geometry, build_grid, GeometryMode, Grid};
    use std::sync::Arc;

    fn small_grid() -> Arc<Grid> {
        let g = build_geometry(2.0, 1.0, GeometryMode::ExpansionOnly).unwrap();
        Arc::new(build_grid(&g, 17.0).unwrap())
    }

    fn random_set(grid: &Arc<Grid>, n: usize, seed: u64) -> Vec<VelocityField> {
        (0..n)
            .map(|k| synth::random_divfree(grid.clone(), seed + k as u64, 0, 1.0))
            .collect()
    }

    /// Plain nested-loop quadrature of the inner product, independent of
    /// `field::inner`.
    fn slow_inner(a: &VelocityField, b: &VelocityField) -> f64 {
        use crate::geometry::{UFaceKind, VFaceKind};
        let g = &a.grid;
        let mut s = 0.0;
        for i in 0..=g.nx {
            for j in 0..g.ny {
                let k = i * g.ny + j;
                match g.u_kind[k] {
                    UFaceKind::Active | UFaceKind::InletFixed => s += a.u[k] * b.u[k] * g.dx * g.dy,
                    _ => {}
                }
            }
        }
        for i in 0..g.nx {
            for j in 0..=g.ny {
                let k = i * (g.ny + 1) + j;
                if g.v_kind[k] == VFaceKind::Active {
                    s += a.v[k] * b.v[k] * g.dx * g.dy;
                }
            }
        }
        s
    }

    /// Jacobi eigenvalue iteration: an eigensolver independent of the one the
    /// implementation uses.
    fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        for _ in 0..200 {
            let mut off = 0.0f64;
            let (mut p, mut q) = (0, 1);
            for i in 0..n {
                for j in i + 1..n {
                    if m[(i, j)].abs() > off {
                        off = m[(i, j)].abs();
                        p = i;
                        q = j;
                    }
                }
            }
            if off < 1e-14 {
                break;
            }
            let theta = 0.5 * (m[(q, q)] - m[(p, p)]) / m[(p, q)];
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..n {
                let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                m[(k, p)] = c * mkp - s * mkq;
                m[(k, q)] = s * mkp + c * mkq;
            }
            for k in 0..n {
                let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                m[(p, k)] = c * mpk - s * mqk;
                m[(q, k)] = s * mpk + c * mqk;
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        d.sort_by(|a, b| b.partial_cmp(a).unwrap());
        d
    }

    #[test]
    fn correlation_of_orthonormal_pair_is_identity() {
        let grid = small_grid();
        let set = random_set(&grid, 2, 100);
        let refs: Vec<&VelocityField> = set.iter().collect();
        let basis = gram_schmidt(&refs).unwrap();
        let mode_refs: Vec<&VelocityField> = basis.modes.iter().collect();
        let c = correlation_matrix(&mode_refs).unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((c[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(c[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn correlation_single_snapshot_is_squared_norm() {
        let grid = small_grid();
        let f = synth::random_divfree(grid, 1, 0, 1.0);
        let c = correlation_matrix(&[&f]).unwrap();
        assert!((c[(0, 0)] - norm(&f) * norm(&f)).abs() < 1e-12);
    }

    #[test]
    fn correlation_matches_slow_quadrature() {
        let grid = small_grid();
        let set = random_set(&grid, 5, 200);
        let refs: Vec<&VelocityField> = set.iter().collect();
        let c = correlation_matrix(&refs).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let slow = slow_inner(&set[i], &set[j]);
                assert!(
                    (c[(i, j)] - slow).abs() <= 1e-12 * slow.abs().max(1.0),
                    "entry ({i},{j}): {} vs {slow}",
                    c[(i, j)]
                );
            }
        }
    }

    #[test]
    fn pod_preserves_span_of_orthonormal_input() {
        let grid = small_grid();
        let set = random_set(&grid, 4, 300);
        let refs: Vec<&VelocityField> = set.iter().collect();
        let on = gram_schmidt(&refs).unwrap();
        let on_refs: Vec<&VelocityField> = on.modes.iter().collect();
        let basis = pod(&on_refs, Truncation::Fixed(on.len())).unwrap();
        for snap in &on.modes {
            assert!(projection_error(&basis, snap) < 1e-10);
        }
        assert!(basis.gram_deviation() <= 1e-10);
    }

    #[test]
    fn pod_rejects_rank_deficient_requests() {
        let grid = small_grid();
        let f = synth::random_divfree(grid, 7, 0, 1.0);
        let err = pod(&[&f, &f], Truncation::Fixed(2)).unwrap_err();
        match err {
            Error::RankDeficient {
                requested,
                achievable,
            } => {
                assert_eq!(requested, 2);
                assert_eq!(achievable, 1);
            }
            other => panic!("unexpected error {other}"),
        }
        // Rank-1 request is fine.
        let b = pod(&[&f, &f], Truncation::Fixed(1)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn pod_energies_match_independent_eigensolver() {
        let grid = small_grid();
        let set = random_set(&grid, 6, 400);
        let refs: Vec<&VelocityField> = set.iter().collect();
        let c = correlation_matrix(&refs).unwrap();
        let basis = pod(&refs, Truncation::Fixed(6)).unwrap();
        let oracle = jacobi_eigenvalues(&c);
        for (a, b) in basis.energies.iter().zip(&oracle) {
            assert!(
                (a - b).abs() <= 1e-10 * b.abs().max(1e-30),
                "energy {a} vs oracle {b}"
            );
        }
        // Energy accounting: sum of eigenvalues equals trace(C).
        let total: f64 = basis.energies.iter().sum();
        assert!((total - c.trace()).abs() <= 1e-10 * c.trace());
    }

    #[test]
    fn gram_schmidt_drops_duplicates() {
        let grid = small_grid();
        let f = synth::random_divfree(grid, 11, 0, 1.0);
        let b = gram_schmidt(&[&f, &f]).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.source.dropped, vec![1]);
    }

    #[test]
    fn gram_schmidt_of_orthonormal_set_is_identity_up_to_sign() {
        let grid = small_grid();
        let set = random_set(&grid, 3, 500);
        let refs: Vec<&VelocityField> = set.iter().collect();
        let on = gram_schmidt(&refs).unwrap();
        let on_refs: Vec<&VelocityField> = on.modes.iter().collect();
        let again = gram_schmidt(&on_refs).unwrap();
        assert!(again.gram_deviation() <= 1e-12);
        for (a, b) in on.modes.iter().zip(&again.modes) {
            let c = inner(a, b);
            assert!((c.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_schmidt_and_pod_span_the_same_space() {
        let grid = small_grid();
        let set = random_set(&grid, 5, 600);
        let refs: Vec<&VelocityField> = set.iter().collect();
        let gs = gram_schmidt(&refs).unwrap();
        let pd = pod(&refs, Truncation::Fixed(5)).unwrap();
        let probe = synth::random_divfree(grid, 999, 0, 1.0);
        let e1 = projection_error(&gs, &probe);
        let e2 = projection_error(&pd, &probe);
        assert!((e1 - e2).abs() < 1e-10, "{e1} vs {e2}");
    }

    #[test]
    fn projection_error_limits() {
        let grid = small_grid();
        let set = random_set(&grid, 3, 700);
        let refs: Vec<&VelocityField> = set.iter().collect();
        let basis = gram_schmidt(&refs).unwrap();
        // Field in the span.
        let in_span = basis.combine(&[0.3, -1.2, 0.5]).unwrap();
        assert!(projection_error(&basis, &in_span) < 1e-10);
        // Field orthogonal to the span.
        let mut probe = synth::random_divfree(grid, 800, 0, 1.0);
        for m in &basis.modes {
            let c = inner(m, &probe);
            probe.axpy(-c, m);
        }
        assert!((projection_error(&basis, &probe) - 1.0).abs() < 1e-10);
    }

    fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                rec(i + 1, n, k, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(0, n, k, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn pod_beats_every_snapshot_subset() {
        // L2 optimality, exhaustive check: total squared projection error of
        // the training set under the POD basis of size N is no worse than
        // under any N-subset of the raw snapshots, N <= 3 over 6 snapshots.
        let grid = small_grid();
        let set = random_set(&grid, 6, 900);
        let refs: Vec<&VelocityField> = set.iter().collect();
        for n in 1..=3usize {
            let basis = pod(&refs, Truncation::Fixed(n)).unwrap();
            let pod_err: f64 = refs
                .iter()
                .map(|s| {
                    let e = projection_error(&basis, s) * norm(s);
                    e * e
                })
                .sum();
            for indices in combinations(6, n) {
                let subset: Vec<&VelocityField> = indices.iter().map(|&i| refs[i]).collect();
                let sub_basis = gram_schmidt(&subset).unwrap();
                let sub_err: f64 = refs
                    .iter()
                    .map(|s| {
                        let e = projection_error(&sub_basis, s) * norm(s);
                        e * e
                    })
                    .sum();
                assert!(
                    pod_err <= sub_err + 1e-10,
                    "POD {pod_err} worse than subset {indices:?} ({sub_err})"
                );
            }
        }
    }

    #[test]
    fn projection_error_monotone_in_basis_size() {
        let grid = small_grid();
        let set = random_set(&grid, 6, 1000);
        let refs: Vec<&VelocityField> = set.iter().collect();
        let probe = synth::random_divfree(grid, 1100, 0, 1.0);
        let mut prev = f64::INFINITY;
        for n in 1..=6 {
            let basis = pod(&refs, Truncation::Fixed(n)).unwrap();
            let e = projection_error(&basis, &probe);
            assert!(e <= prev + 1e-12, "error grew from {prev} to {e} at n={n}");
            prev = e;
        }
    }

    #[test]
    fn energy_fraction_truncation() {
        let grid = small_grid();
        // One dominant direction plus faint noise.
        let lead = synth::random_divfree(grid.clone(), 1, 0, 1.0);
        let mut set = Vec::new();
        for k in 0..4 {
            let mut f = lead.clone();
            let noise = synth::random_divfree(grid.clone(), 50 + k, 0, 1e-3);
            f.axpy(1.0, &noise);
            set.push(f);
        }
        let refs: Vec<&VelocityField> = set.iter().collect();
        let b = pod(&refs, Truncation::EnergyFraction(0.99)).unwrap();
        assert_eq!(b.len(), 1);
        let b = pod(&refs, Truncation::EnergyFraction(1.0)).unwrap();
        assert!(b.len() >= 2);
    }
}
