use std::sync::Arc;

use rombif_core::field::VelocityField;
use rombif_core::fom::{solve_steady, FomConfig};
use rombif_core::geometry::{build_geometry, build_grid, GeometryMode, ParameterPoint};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let re: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10.0);
    let res: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(15.0);
    let mode = if args.get(4).map(|s| s == "exp").unwrap_or(false) {
        GeometryMode::ExpansionOnly
    } else {
        GeometryMode::FullChannel
    };
    let geom = build_geometry(lambda, 1.0, mode).unwrap();
    let grid = Arc::new(build_grid(&geom, res).unwrap());
    eprintln!(
        "grid {}x{} cells={} slot={} dx={:.4} dy={:.4}",
        grid.nx,
        grid.ny,
        grid.n_cells(),
        grid.slot_cells,
        grid.dx,
        grid.dy
    );
    let p = ParameterPoint::new(re, lambda).unwrap();
    let safety: f64 = std::env::var("ROMBIF_SAFETY")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.8);
    let cfg = FomConfig {
        coarse_prepass: false,
        max_steps: 30_000,
        pseudo_time_step_safety: safety,
        ..FomConfig::default()
    };
    let t0 = std::time::Instant::now();
    match solve_steady(&grid, p, &cfg, None) {
        Ok(snap) => {
            eprintln!(
                "converged in {} steps, {:.2}s, residual {:.3e}, asym {:.3e}, branch {:?}",
                snap.iterations,
                t0.elapsed().as_secs_f64(),
                snap.convergence_residual,
                snap.asymmetry,
                snap.branch
            );
            let f: &VelocityField = &snap.field;
            eprintln!(
                "flux in {:.6e}, mid {:.6e}, out {:.6e}, maxdiv {:.2e}",
                f.flux_through(0),
                f.flux_through(grid.nx / 2),
                f.flux_through(grid.nx),
                f.max_divergence()
            );
        }
        Err(e) => {
            eprintln!("FAILED after {:.2}s: {e}", t0.elapsed().as_secs_f64());
            if let rombif_core::Error::NonConvergence { history, .. } = e {
                let tail: Vec<String> = history
                    .iter()
                    .rev()
                    .take(12)
                    .map(|x| format!("{x:.3e}"))
                    .collect();
                eprintln!("increment tail (newest first): {}", tail.join(" "));
            }
        }
    }
}
