//! Split-step grid solver: unitarity, band projection and Strang self-convergence.

use crossprop::gaussian::{evaluate_on_grid, PolyGaussian, SiegelMatrix};
use crossprop::grid::GridSpec;
use crossprop::models::{make_schrodinger, ScalarField};
use crossprop::reference::{GridState, Oracle};

fn main() -> crossprop::Result<()> {
    let e = |s: &str| ScalarField::parse(s).unwrap();
    let model = make_schrodinger(1, e("0.5*p^2"), e("0"), e("q"), [e("cos(0.5*atan(q))"), e("sin(0.5*atan(q))"), e("0")])?;
    let eps = 0.01;
    let grid = GridSpec::uniform_1d(-4.0, 6.0, 2048);
    let packet = evaluate_on_grid(&PolyGaussian::unit(SiegelMatrix::identity(1)), &[-1.0, 2.0], eps, &grid)?.values;
    let zero = vec![num_complex::Complex64::new(0.0, 0.0); grid.len()];
    let start = GridState::new(eps, grid.clone(), vec![packet, zero], 0.0)?;

    let evolve = |dt: f64| -> crossprop::Result<GridState> {
        let mut st = start.clone();
        Oracle::new(&model, &grid, eps)?.evolve(&mut st, 1.5, dt)?;
        Ok(st)
    };
    let reference = evolve(1e-4)?;
    let mut prev: Option<f64> = None;
    for dt in [4e-3, 2e-3, 1e-3] {
        let st = evolve(dt)?;
        let diff: Vec<Vec<_>> = st.psi.iter().zip(&reference.psi).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        let err = grid.norm_vec(&diff);
        println!("dt {dt:.0e}: norm {:.12} error {err:.3e} ratio {:?}", st.norm(), prev.map(|p| p / err));
        prev = Some(err);
    }
    let oracle = Oracle::new(&model, &grid, eps)?;
    let band2 = oracle.project_band(&reference, 2)?;
    println!("band-2 mass after the crossing {:.4e} (sqrt eps = {:.4e})", band2.norm(), eps.sqrt());
    Ok(())
}
